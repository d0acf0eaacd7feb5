#include "sfde/selftest.hpp"

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>
#include <sstream>

#include "sfde/config.hpp"
#include "sfde/gradcheck.hpp"
#include "sfde/ops.hpp"
#include "sfde/optimizer.hpp"
#include "sfde/retrieval.hpp"
#include "sfde/spectral.hpp"

namespace sfde::selftest {
namespace {

// A property returns an empty string on success, otherwise what went wrong.
using Check = std::function<std::string()>;

std::string fmt(const char* pattern, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = T(rng.uniform(lo, hi));
  return t;
}

template <typename T>
std::string fft_round_trip(double tolerance) {
  Rng rng(21);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Shape shape{1 + rng.below(3), 2 + rng.below(11), 2 + rng.below(11)};
    const auto x = random_tensor<T>(shape, rng);
    worst = std::max(worst, double(max_abs_diff(x, spectral::irfft2(spectral::rfft2(x)))));
  }
  return worst < tolerance ? "" : fmt("max abs error %.3g exceeds %.1g", worst, tolerance);
}

std::string fft_dc_and_impulse() {
  Rng rng(22);
  const auto x = random_tensor<double>({2, 6, 5}, rng);
  const auto s = spectral::rfft2(x);
  const std::size_t wh = s.shape()[2];
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 30; ++i) sum += x[c * 30 + i];
    const double dc = s.real[c * 6 * wh];
    if (std::abs(dc - sum) > 1e-6 || std::abs(s.imag[c * 6 * wh]) > 1e-6) return fmt("DC bin %.9g vs sum %.9g", dc, sum);
  }
  Tensor<double> impulse({1, 4, 6});
  impulse[0] = 1.0;
  const auto si = spectral::rfft2(impulse);
  for (std::size_t i = 0; i < si.real.size(); ++i) {
    if (std::abs(si.real[i] - 1.0) > 1e-6 || std::abs(si.imag[i]) > 1e-6) return "impulse spectrum is not flat";
  }
  return "";
}

std::string fft_naive_dft() {
  Rng rng(23);
  const std::size_t h = 8, w = 8, wh = spectral::half_width(w);
  const auto x = random_tensor<double>({1, h, w}, rng);
  const auto s = spectral::rfft2(x);
  double worst = 0.0;
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < wh; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double angle = -2.0 * std::numbers::pi * (double(u * y) / double(h) + double(v * xx) / double(w));
          acc += x[y * w + xx] * std::polar(1.0, angle);
        }
      worst = std::max(worst, std::abs(acc - std::complex<double>(s.real[u * wh + v], s.imag[u * wh + v])));
    }
  return worst < 1e-6 ? "" : fmt("deviation from direct DFT %.3g", worst);
}

Tensor<double> gem_of(const Tensor<double>& x, double p) {
  Tape<double> tape;
  return ops::gem_pool(tape.constant(x), tape.constant(Tensor<double>({1}, p))).value();
}

std::string gem_mean_at_one() {
  Rng rng(31);
  const auto x = random_tensor<double>({2, 3, 4, 5}, rng, 0.1, 3.0);
  const auto g = gem_of(x, 1.0);
  Tape<double> tape;
  const auto avg = ops::global_avg_pool(tape.constant(x)).value();
  const double d = max_abs_diff(g, avg);
  return d < 1e-6 ? "" : fmt("p=1 differs from the mean by %.3g", d);
}

// Over n cells the p=64 mean sits in [max n^(-1/64), max]; two-cell windows
// keep that gap below 0.05 for values up to 3.
std::string gem_max_at_64() {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_tensor<double>({2, 3, 1, 2}, rng, 0.1, 3.0);
    const auto g = gem_of(x, 64.0);
    for (std::size_t nc = 0; nc < 6; ++nc) {
      const double mx = std::max(x[2 * nc], x[2 * nc + 1]);
      if (std::abs(g[nc] - mx) >= 0.05) return fmt("p=64 gives %.5g, max is %.5g", g[nc], mx);
    }
  }
  return "";
}

std::string gem_monotone() {
  Rng rng(33);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_tensor<double>({1, 2, 3, 3}, rng, 0.0, 2.0);
    const double p1 = rng.uniform(1.0, 10.0), p2 = p1 + rng.uniform(0.01, 10.0);
    const auto a = gem_of(x, p1), b = gem_of(x, p2);
    for (std::size_t c = 0; c < 2; ++c)
      if (a[c] > b[c] + 1e-12) return fmt("gem(p=%.4g) exceeds gem at a larger p by %.3g", p1, a[c] - b[c]);
  }
  return "";
}

std::string gate_identity_chain() {
  Rng rng(41);
  ParameterStore<double> store;
  FrequencyBranch<double> branch(store, 8, 2, 0.0, 4096, rng);
  branch.hooks().pin_gates = true;
  branch.hooks().bypass_attention = true;
  const auto f = random_tensor<double>({2, 8, 4, 4}, rng);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  FrequencyTrace<double> trace;
  branch.forward(ctx, tape.constant(f), &trace);
  const double d = max_abs_diff(trace.paths[2].value(), f);
  return d < 1e-4 ? "" : fmt("path 3 deviates from the input by %.3g", d);
}

std::string scale_fusion_identity() {
  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_tensor<double>({1, 2, 3, 3}, rng, -5.0, 5.0);
    const auto gate = random_tensor<double>({1, 2, 3, 3}, rng, 0.0, 1.0);
    Tape<double> tape;
    const auto v = tape.constant(x);
    const auto out = fuse_scales<double>({v, v, v}, tape.constant(gate)).value();
    for (std::size_t j = 0; j < x.size(); ++j)
      if (std::abs(out[j] - 2.0 / 3.0 * x[j]) > 1e-6) return fmt("output %.9g vs (2/3)x %.9g", out[j], 2.0 / 3.0 * x[j]);
  }
  return "";
}

std::string activation_ranges() {
  Rng rng(43);
  Tape<double> tape;
  const auto x = random_tensor<double>({16, 7}, rng, -30.0, 30.0);
  const auto s = ops::softmax(tape.constant(x)).value();
  for (std::size_t r = 0; r < 16; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 7; ++c) sum += s[r * 7 + c];
    if (std::abs(sum - 1.0) > 1e-6) return fmt("softmax row sums to %.9g", sum);
  }
  const auto sg = ops::sigmoid(tape.constant(random_tensor<double>({64}, rng, -20.0, 20.0))).value();
  for (double v : sg.values())
    if (!(v > 0.0 && v < 1.0)) return fmt("sigmoid output %.17g outside (0, 1)", v);
  return "";
}

std::string attention_rows() {
  Rng rng(44);
  Tape<double> tape;
  auto w = [&](std::size_t o, std::size_t i) { return tape.constant(random_tensor<double>({o, i}, rng)); };
  auto b = [&](std::size_t o) { return tape.constant(random_tensor<double>({o}, rng)); };
  ops::AttentionWeights<double> weights{w(8, 8), b(8), w(8, 8), b(8), w(8, 8), b(8), w(8, 8), b(8)};
  ops::AttentionProbe<double> probe;
  ops::multi_head_attention(tape.constant(random_tensor<double>({2, 4, 8}, rng)), weights, 2, &probe);
  for (std::size_t r = 0; r < probe.weights.size() / probe.seq; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < probe.seq; ++c) sum += probe.weights[r * probe.seq + c];
    if (std::abs(sum - 1.0) > 1e-6) return fmt("attention row sums to %.9g", sum);
  }
  return "";
}

std::string worst_of(const std::vector<gradcheck::Comparison>& cs, double tolerance, const std::string& label) {
  for (const auto& c : cs) {
    if (!(c.relative_error() < tolerance)) {
      return label + " " + c.name + fmt(": relative error %.3g (tolerance %.1g)", c.relative_error(), tolerance);
    }
  }
  return "";
}

std::string kernel_gradients() {
  Rng rng(51);
  using V = std::vector<Var<double>>;
  struct Case {
    const char* name;
    std::vector<Tensor<double>> inputs;
    gradcheck::InputLoss loss;
  };
  auto sq = [](Tape<double>&, Var<double> y) { return ops::sum(ops::mul(y, y)); };
  std::vector<Case> cases;
  cases.push_back({"conv2d",
                   {random_tensor<double>({2, 3, 5, 5}, rng), random_tensor<double>({4, 3, 3, 3}, rng),
                    random_tensor<double>({4}, rng)},
                   [&](Tape<double>& t, const V& v) { return sq(t, ops::conv2d(v[0], v[1], v[2], {1, 2, 2, 1})); }});
  cases.push_back({"gem_pool",
                   {random_tensor<double>({2, 3, 3, 3}, rng, 0.1, 2.0), Tensor<double>({1}, 2.5)},
                   [&](Tape<double>& t, const V& v) { return sq(t, ops::gem_pool(v[0], v[1])); }});
  cases.push_back({"spectral round trip",
                   {random_tensor<double>({1, 2, 4, 6}, rng)},
                   [&](Tape<double>& t, const V& v) {
                     auto s = spectral::rfft2(v[0]);
                     auto y = spectral::irfft2(spectral::polar_recompose(ops::mul(spectral::amplitude(s), spectral::amplitude(s)),
                                                                           spectral::phase(s)),
                                               6);
                     return sq(t, y);
                   }});
  cases.push_back({"info_nce",
                   {random_tensor<double>({4, 8}, rng), random_tensor<double>({4, 8}, rng), Tensor<double>({1}, -1.0)},
                   [&](Tape<double>&, const V& v) {
                     return ops::info_nce(ops::l2_normalize_rows(v[0]), ops::l2_normalize_rows(v[1]), v[2]);
                   }});
  for (auto& c : cases) {
    auto msg = worst_of(gradcheck::check_inputs(c.inputs, c.loss), 1e-4, c.name);
    if (!msg.empty()) return msg;
  }
  return "";
}

std::string toy_model_gradients() {
  const ToyProblem problem = make_toy_problem(2, 5);
  SfdeModel<double> model(problem.config, 3);
  spread_parameters(model.parameters(), 4);
  gradcheck::Options opt;
  opt.max_entries = 2;
  const auto cs = gradcheck::check_parameters(
      model.parameters(), [&](Tape<double>& tape) { return toy_loss(model, problem, tape); }, opt);
  return worst_of(cs, 1e-3, "parameter");
}

std::string loss_oracles() {
  Tape<double> tape;
  const std::size_t label = 0;
  const double ce = ops::cross_entropy(tape.constant(Tensor<double>({1, 2})), std::span(&label, 1)).value()[0];
  if (std::abs(ce - std::log(2.0)) > 1e-9) return fmt("CE([0,0], 0) = %.12g", ce);
  Tensor<double> eye({2, 2});
  eye[0] = eye[3] = 1.0;
  const double nce = ops::info_nce(tape.constant(eye), tape.constant(eye), tape.constant(Tensor<double>({1}))).value()[0];
  if (std::abs(nce - std::log1p(std::exp(-1.0))) > 1e-6) return fmt("InfoNCE on identity = %.12g", nce);
  const double total = losses::total_loss({1.0, 1.0, 1.0}, {});
  if (total != 2.4) return fmt("total of unit parts = %.17g", total);
  return "";
}

struct OracleReport {
  std::map<std::size_t, double> recall;
  double mean_ap = 0.0;
};

OracleReport brute_force(const std::vector<retrieval::EmbeddingRecord>& q, const std::vector<retrieval::EmbeddingRecord>& g,
                         const std::set<std::size_t>& ks) {
  OracleReport out;
  std::size_t evaluated = 0;
  std::map<std::size_t, std::size_t> hits;
  for (const auto& query : q) {
    std::vector<std::pair<double, std::string>> scored;
    std::map<std::string, std::uint32_t> cls;
    for (const auto& item : g) {
      double s = 0.0;
      for (std::size_t i = 0; i < item.vector.size(); ++i) s += double(item.vector[i]) * double(query.vector[i]);
      scored.emplace_back(-s, item.id);
      cls[item.id] = item.class_id;
    }
    std::sort(scored.begin(), scored.end());
    std::size_t found = 0, first = scored.size();
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < scored.size(); ++r) {
      if (cls[scored[r].second] != query.class_id) continue;
      ++found;
      first = std::min(first, r);
      precision_sum += double(found) / double(r + 1);
    }
    if (found == 0) continue;
    ++evaluated;
    out.mean_ap += precision_sum / double(found);
    for (auto k : ks) hits[k] += first < k ? 1 : 0;
  }
  for (auto k : ks) out.recall[k] = evaluated ? double(hits[k]) / double(evaluated) : 0.0;
  if (evaluated) out.mean_ap /= double(evaluated);
  return out;
}

std::vector<retrieval::EmbeddingRecord> random_records(std::size_t n, std::size_t dim, std::size_t classes, Rng& rng,
                                                       const std::string& prefix) {
  std::vector<retrieval::EmbeddingRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    retrieval::EmbeddingRecord r{prefix + std::to_string(i), retrieval::View::Drone,
                                 static_cast<std::uint32_t>(rng.below(classes)), std::vector<float>(dim)};
    double norm = 0.0;
    for (auto& v : r.vector) {
      v = float(rng.normal());
      norm += double(v) * v;
    }
    for (auto& v : r.vector) v = float(v / std::sqrt(norm));
    out.push_back(std::move(r));
  }
  return out;
}

std::string metric_oracle() {
  Rng rng(61);
  for (int i = 0; i < 50; ++i) {
    const std::size_t gsize = 1 + rng.below(20);
    const auto q = random_records(1 + rng.below(10), 6, 4, rng, "q");
    const auto g = random_records(gsize, 6, 4, rng, "g");
    const std::set<std::size_t> ks{1, std::min<std::size_t>(5, gsize), gsize};
    const auto report = retrieval::evaluate(q, g, {ks.begin(), ks.end()});
    const auto oracle = brute_force(q, g, ks);
    for (auto k : ks)
      if (report.recall_at.at(k) != oracle.recall.at(k)) return fmt("R@%g differs from brute force on instance %g", double(k), i);
    if (std::abs(report.mean_ap - oracle.mean_ap) > 1e-12) return fmt("mean AP %.12g vs brute force %.12g", report.mean_ap, oracle.mean_ap);
  }
  return "";
}

std::string ap_hand_cases() {
  std::vector<bool> one{true, false, false};
  std::vector<bool> third{false, false, true};
  std::vector<bool> two(10, false);
  two[0] = two[3] = true;
  if (retrieval::average_precision(one) != 1.0) return "AP with one hit at rank 1 is not 1";
  if (retrieval::average_precision(third) != 1.0 / 3.0) return "AP with one hit at rank 3 is not 1/3";
  if (retrieval::average_precision(two) != 0.75) return "AP with hits at ranks 1 and 4 is not 0.75";
  return "";
}

class ScratchDir {
 public:
  ScratchDir() {
    Rng rng(static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    path_ = std::filesystem::temp_directory_path() / ("sfde-selftest-" + std::to_string(rng.next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

std::string store_round_trip() {
  Rng rng(71);
  auto records = random_records(100, 12, 5, rng, "id-");
  for (std::size_t i = 0; i < records.size(); i += 2) records[i].view = retrieval::View::Satellite;
  ScratchDir dir;
  retrieval::save_embeddings(records, dir.path() / "s.bin");
  if (retrieval::load_embeddings(dir.path() / "s.bin") != records) return "reloaded records differ";
  retrieval::save_embeddings({}, dir.path() / "e.bin");
  if (!retrieval::load_embeddings(dir.path() / "e.bin").empty()) return "empty store reloads non-empty";
  return "";
}

std::string store_error_codes() {
  Rng rng(72);
  const auto records = random_records(3, 4, 2, rng, "r");
  ScratchDir dir;
  const auto good = dir.path() / "good.bin";
  retrieval::save_embeddings(records, good);
  const std::string bytes = retrieval::read_file(good);
  auto expect = [&](std::string corrupted, FormatErrorCode code, const char* label) -> std::string {
    const auto p = dir.path() / "bad.bin";
    retrieval::write_file_atomic(p, corrupted);
    try {
      retrieval::load_embeddings(p);
    } catch (const FormatError& e) {
      return e.code() == code ? "" : std::string(label) + " raised " + to_string(e.code());
    }
    return std::string(label) + " loaded without error";
  };
  std::string magic = bytes;
  magic[0] = 'X';
  std::string version = bytes;
  version[4] = char(version[4] + 1);
  if (auto m = expect(magic, FormatErrorCode::MagicMismatch, "corrupted magic"); !m.empty()) return m;
  if (auto m = expect(bytes.substr(0, bytes.size() - 3), FormatErrorCode::Truncated, "truncated payload"); !m.empty()) return m;
  return expect(version, FormatErrorCode::VersionMismatch, "bumped version");
}

std::string schedule_shape() {
  ScheduleConfig s{200, 0.1, 1e-3, 1e-5};
  if (scheduled_rate(s, 0) != 0.0) return fmt("rate at step 0 is %.3g", scheduled_rate(s, 0));
  if (std::abs(scheduled_rate(s, 20) - 1e-3) > 1e-15) return fmt("rate at 10%% is %.9g", scheduled_rate(s, 20));
  for (std::size_t t = 20; t <= 200; ++t) {
    const double expected = 1e-5 + 0.5 * (1e-3 - 1e-5) * (1.0 + std::cos(std::numbers::pi * double(t - 20) / 180.0));
    if (std::abs(scheduled_rate(s, t) - expected) > 1e-15) return fmt("rate at step %g deviates from cosine decay", double(t));
  }
  return "";
}

std::string config_round_trip() {
  RunConfig c;
  c.model.branches.frequency = false;
  c.loss.frequency_alignment = 0.0;
  c.train.steps = 37;
  const std::string once = serialize_config(c);
  const std::string twice = serialize_config(parse_config(once));
  return once == twice ? "" : "serialize(parse(text)) differs from text";
}

class FftFault {
 public:
  explicit FftFault(bool on) : on_(on) {
    if (on_) spectral::testing::corrupt_inverse_normalization(true);
  }
  ~FftFault() {
    if (on_) spectral::testing::corrupt_inverse_normalization(false);
  }

 private:
  bool on_;
};

}  // namespace

ModelConfig gradient_toy_config() {
  ModelConfig c;
  c.backbone.stage_channels = {2, 4, 4, 8};
  c.backbone.blocks_per_stage = 1;
  c.backbone.input_size = 128;
  c.embedding_dim = 16;
  c.num_classes = 4;
  c.heads = 2;
  return c;
}

ToyProblem make_toy_problem(std::size_t pairs, std::uint64_t seed) {
  ToyProblem p;
  p.config = gradient_toy_config();
  p.config.num_classes = std::max<std::size_t>(pairs, 2);
  Rng rng(seed);
  const std::size_t s = p.config.backbone.input_size;
  p.images = Tensor<double>({2 * pairs, 3, s, s});
  for (auto& v : p.images.values()) v = rng.normal();
  for (std::size_t i = 0; i < pairs; ++i) p.labels.push_back(i);
  return p;
}

void spread_parameters(ParameterStore<double>& store, std::uint64_t seed) {
  Rng rng(seed);
  auto ends_with = [](const std::string& s, std::string_view tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
  };
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.at(i);
    if (!p.trainable() || ends_with(p.name, ".p") || ends_with(p.name, "log_temperature")) continue;
    if (p.role == ParamRole::Weight) {
      const double std = 1.0 / std::sqrt(double(p.value.size() / p.value.dim(0)));
      for (auto& v : p.value.values()) v = rng.normal() * std;
    } else if (ends_with(p.name, ".gamma")) {
      for (auto& v : p.value.values()) v = rng.uniform(0.5, 1.5);
    } else {
      for (auto& v : p.value.values()) v = rng.uniform(-0.3, 0.3);
    }
  }
}

Var<double> toy_loss(const SfdeModel<double>& model, const ToyProblem& problem, Tape<double>& tape) {
  Rng dropout(problem.dropout_seed);
  Context<double> ctx{tape, ops::Mode::Train, &dropout};
  return model.loss(ctx, tape.constant(problem.images), problem.labels, losses::LossWeights{}).total;
}

std::vector<PropertyResult> run(const Options& options) {
  const FftFault fault(options.corrupt_fft_normalization);
  const std::vector<std::pair<std::string, Check>> properties = {
      {"fft.round_trip.f32", [] { return fft_round_trip<float>(1e-5); }},
      {"fft.round_trip.f64", [] { return fft_round_trip<double>(1e-10); }},
      {"fft.dc_and_impulse", fft_dc_and_impulse},
      {"fft.direct_dft_8x8", fft_naive_dft},
      {"gem.mean_at_p1", gem_mean_at_one},
      {"gem.max_at_p64", gem_max_at_64},
      {"gem.monotone_in_p", gem_monotone},
      {"gates.identity_chain", gate_identity_chain},
      {"scales.two_thirds_identity", scale_fusion_identity},
      {"activations.ranges", activation_ranges},
      {"attention.row_sums", attention_rows},
      {"grad.kernels", kernel_gradients},
      {"grad.toy_model", toy_model_gradients},
      {"loss.scalar_oracles", loss_oracles},
      {"metrics.brute_force_oracle", metric_oracle},
      {"metrics.ap_hand_cases", ap_hand_cases},
      {"store.round_trip", store_round_trip},
      {"store.error_codes", store_error_codes},
      {"schedule.warmup_cosine", schedule_shape},
      {"config.round_trip", config_round_trip},
  };
  std::vector<PropertyResult> results;
  for (const auto& [name, check] : properties) {
    PropertyResult r{name, false, {}, 0.0};
    const auto start = std::chrono::steady_clock::now();
    try {
      r.detail = check();
      r.passed = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
  return results;
}

std::string format_table(const std::vector<PropertyResult>& results) {
  std::ostringstream out;
  std::size_t failed = 0;
  char buf[128];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-30s %s", r.name.c_str(), r.passed ? "PASS" : "FAIL");
    out << buf;
    if (!r.passed) {
      ++failed;
      out << "  " << r.detail;
    }
    out << '\n';
  }
  out << results.size() - failed << "/" << results.size() << " properties passed\n";
  return out.str();
}

}  // namespace sfde::selftest
