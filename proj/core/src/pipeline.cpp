#include "sfde/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "sfde/optimizer.hpp"

namespace sfde::pipeline {
namespace {

double frobenius(Var<float> v) {
  if (!v.valid()) return 0.0;
  double s = 0.0;
  for (float x : v.value().values()) s += double(x) * double(x);
  return std::sqrt(s);
}

std::string direction_name(const std::vector<retrieval::EmbeddingRecord>& from,
                           const std::vector<retrieval::EmbeddingRecord>& to, const char* from_fallback,
                           const char* to_fallback) {
  auto uniform_view = [](const std::vector<retrieval::EmbeddingRecord>& r, const char* fallback) -> std::string {
    if (r.empty()) return fallback;
    for (const auto& e : r)
      if (e.view != r.front().view) return fallback;
    return retrieval::to_string(r.front().view);
  };
  std::string a = uniform_view(from, from_fallback), b = uniform_view(to, to_fallback);
  if (a == b) {
    a = from_fallback;
    b = to_fallback;
  }
  return a + "_to_" + b;
}

struct PairPool {
  std::vector<std::uint32_t> class_ids;
  std::vector<std::vector<std::size_t>> drones, satellites;
};

PairPool build_pool(const data::ImageBank& bank) {
  std::map<std::uint32_t, std::size_t> slot;
  PairPool pool;
  for (const auto& e : bank.entries) {
    if (slot.emplace(e.class_id, pool.class_ids.size()).second) pool.class_ids.push_back(e.class_id);
  }
  pool.drones.resize(pool.class_ids.size());
  pool.satellites.resize(pool.class_ids.size());
  for (std::size_t i = 0; i < bank.entries.size(); ++i) {
    const auto& e = bank.entries[i];
    auto& list = e.view == retrieval::View::Drone ? pool.drones : pool.satellites;
    list[slot.at(e.class_id)].push_back(i);
  }
  for (std::size_t k = 0; k < pool.class_ids.size(); ++k) {
    if (pool.drones[k].empty() || pool.satellites[k].empty()) {
      throw ValidationError("training class " + std::to_string(pool.class_ids[k]) + " lacks a drone or satellite image");
    }
  }
  return pool;
}

}  // namespace

TrainResult train(const RunConfig& config_in, const data::Manifest& manifest, const std::string& split,
                  const StepObserver& observer) {
  RunConfig config = config_in;
  const auto entries = manifest.select(split, std::nullopt);
  if (entries.empty()) throw ValidationError("no manifest entries in split '" + split + "'");
  data::ImageBank bank = data::load_images(entries, config.model.backbone.input_size);
  const data::Normalization norm = data::compute_normalization(bank);
  const PairPool pool = build_pool(bank);
  const std::size_t classes = pool.class_ids.size();
  if (classes < 2) throw ValidationError("training needs at least 2 classes for in-batch negatives");
  const std::size_t pairs = std::min(config.train.pairs_per_batch, classes);

  config.model.num_classes = classes;
  config.validate();

  Rng rng(config.train.seed);
  TrainResult result;
  result.model = std::make_unique<SfdeModel<float>>(config.model, rng.next_u64());
  auto& model = *result.model;
  AdamW<float> optimizer(model.parameters(), config.optimizer);
  const ScheduleConfig schedule = config.schedule();
  Rng sampler = rng.fork();
  Rng dropout = rng.fork();

  for (std::size_t step = 0; step < config.train.steps; ++step) {
    std::vector<std::size_t> order(classes);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < pairs; ++i) std::swap(order[i], order[i + sampler.below(classes - i)]);
    std::vector<std::size_t> indices(2 * pairs);
    std::vector<std::size_t> labels(pairs);
    for (std::size_t i = 0; i < pairs; ++i) {
      const std::size_t k = order[i];
      labels[i] = k;
      indices[i] = pool.drones[k][sampler.below(pool.drones[k].size())];
      indices[pairs + i] = pool.satellites[k][sampler.below(pool.satellites[k].size())];
    }
    std::vector<bool> flips(2 * pairs);
    for (std::size_t i = 0; i < flips.size(); ++i) flips[i] = sampler.bernoulli(config.train.flip_probability);
    const Tensor<float> batch = data::make_batch<float>(bank, indices, norm, flips);

    const Rng dropout_before = dropout;
    model.parameters().zero_grads();
    Tape<float> tape;
    Context<float> ctx{tape, ops::Mode::Train, &dropout};
    auto loss = model.loss(ctx, tape.constant(batch), labels, config.loss);
    const double total = loss.total.value()[0];

    StepRecord rec;
    rec.step = step;
    rec.learning_rate = scheduled_rate(schedule, step);
    rec.parts = loss.parts;
    rec.total = total;
    if (!std::isfinite(total)) {
      Rng replay = dropout_before;
      Tape<float> probe_tape;
      Context<float> probe{probe_tape, ops::Mode::Train, &replay};
      auto out = model.forward(probe, probe_tape.constant(batch));
      char buf[512];
      std::snprintf(buf, sizeof buf,
                    "non-finite loss at step %zu (total %g, classification %g, local_contrast %g, "
                    "frequency_alignment %g); activation norms: backbone %g, global %g, local %g, frequency %g",
                    step, total, loss.parts.classification, loss.parts.local_contrast,
                    loss.parts.frequency_alignment, frobenius(out.features), frobenius(out.global.embedding),
                    frobenius(out.local), frobenius(out.frequency));
      throw NumericError(buf);
    }
    tape.backward(loss.total);
    optimizer.step(rec.learning_rate);
    model.apply_constraints();

    const bool last = step + 1 == config.train.steps;
    if (config.train.eval_every > 0 && ((step + 1) % config.train.eval_every == 0 || last)) {
      rec.recall_at_1 = drone_to_satellite_recall(model, bank, norm);
      if (*rec.recall_at_1 >= 1.0 && !result.first_perfect_step) result.first_perfect_step = step + 1;
    }
    if (observer) observer(rec);
    result.log.push_back(rec);
  }

  Checkpoint& ck = result.checkpoint;
  ck.config = config;
  ck.class_ids = pool.class_ids;
  ck.normalization = norm;
  ck.optimizer = optimizer.describe();
  ck.steps = optimizer.steps_taken();
  ck.tensors = capture_parameters(model);
  return result;
}

void write_step_log(const std::vector<StepRecord>& log, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "step,learning_rate,total,classification,local_contrast,frequency_alignment,recall_at_1\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,", r.step, r.learning_rate, r.total,
                  r.parts.classification, r.parts.local_contrast, r.parts.frequency_alignment);
    out << buf;
    if (r.recall_at_1) {
      std::snprintf(buf, sizeof buf, "%.9g", *r.recall_at_1);
      out << buf;
    }
    out << '\n';
  }
  retrieval::write_file_atomic(path, out.str());
}

std::vector<retrieval::EmbeddingRecord> embed(const SfdeModel<float>& model, const data::ImageBank& bank,
                                              const data::Normalization& norm, std::size_t chunk) {
  std::vector<retrieval::EmbeddingRecord> out;
  out.reserve(bank.entries.size());
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < bank.entries.size(); start += chunk) {
    const std::size_t n = std::min(chunk, bank.entries.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    const auto rows = model.embed(data::make_batch<float>(bank, idx, norm));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& e = bank.entries[start + i];
      out.push_back({e.id, e.view, e.class_id, rows[i]});
    }
  }
  return out;
}

double drone_to_satellite_recall(const SfdeModel<float>& model, const data::ImageBank& bank,
                                 const data::Normalization& norm) {
  const auto records = embed(model, bank, norm);
  std::vector<retrieval::EmbeddingRecord> drones, satellites;
  for (const auto& r : records) (r.view == retrieval::View::Drone ? drones : satellites).push_back(r);
  if (drones.empty() || satellites.empty()) throw ValidationError("recall needs both drone and satellite images");
  return retrieval::evaluate(drones, satellites, {1}, "drone_to_satellite").recall_at.at(1);
}

std::vector<retrieval::RetrievalReport> evaluate_stores(const std::vector<retrieval::EmbeddingRecord>& query,
                                                        const std::vector<retrieval::EmbeddingRecord>& gallery,
                                                        const EvalSettings& settings,
                                                        const std::filesystem::path& out_dir) {
  if (query.empty() || gallery.empty()) throw ValidationError("eval needs non-empty query and gallery stores");
  if (query.front().vector.size() != gallery.front().vector.size()) {
    throw ValidationError("query dimension " + std::to_string(query.front().vector.size()) +
                          " differs from gallery dimension " + std::to_string(gallery.front().vector.size()));
  }
  std::filesystem::create_directories(out_dir);
  std::vector<retrieval::RetrievalReport> reports;
  reports.push_back(retrieval::evaluate(query, gallery, settings.ks, direction_name(query, gallery, "query", "gallery")));
  reports.push_back(retrieval::evaluate(gallery, query, settings.ks, direction_name(gallery, query, "gallery", "query")));
  for (const auto& r : reports) {
    retrieval::write_ranking_csv(r, out_dir / ("ranking_" + r.direction + ".csv"));
    retrieval::write_summary_csv(r, out_dir / ("summary_" + r.direction + ".csv"));
  }
  retrieval::write_histogram_csv(retrieval::distance_histogram(query, gallery, settings.histogram_bins),
                                 out_dir / "histogram.csv");
  return reports;
}

}  // namespace sfde::pipeline
