#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sfde/checkpoint.hpp"
#include "sfde/config.hpp"
#include "sfde/dataset.hpp"
#include "sfde/pipeline.hpp"
#include "sfde/retrieval.hpp"
#include "sfde/selftest.hpp"

namespace fs = std::filesystem;
using namespace sfde;

namespace {

int run_selftest(bool inject_fft_fault) {
  selftest::Options options;
  options.corrupt_fft_normalization = inject_fft_fault;
  const auto results = selftest::run(options);
  std::cout << selftest::format_table(results);
  int status = 0;
  for (const auto& r : results) {
    if (!r.passed) {
      std::cerr << "selftest failed: " << r.name << "\n";
      status = 1;
    }
  }
  return status;
}

int run_ingest(const fs::path& root, const fs::path& out) {
  const auto manifest = data::ingest(root);
  data::write_manifest(manifest, out);
  std::set<std::string> splits;
  for (const auto& e : manifest.entries) splits.insert(e.split);
  for (const auto& s : splits) {
    const auto c = manifest.counts(s);
    std::printf("%s: N=%zu drone, M=%zu satellite, P=%zu classes\n", s.c_str(), c.drone, c.satellite, c.classes);
  }
  return 0;
}

int run_train(const std::optional<fs::path>& config_path, const fs::path& manifest_path, const fs::path& out,
              std::optional<fs::path> log_path, const std::string& split, bool quiet) {
  const RunConfig config = config_path ? load_config(*config_path) : RunConfig{};
  config.validate();
  const auto manifest = data::read_manifest(manifest_path);
  const std::size_t every = std::max<std::size_t>(1, config.train.steps / 20);
  auto result = pipeline::train(config, manifest, split, [&](const pipeline::StepRecord& r) {
    if (quiet || (r.step % every != 0 && r.step + 1 != config.train.steps)) return;
    std::fprintf(stderr, "step %4zu  lr %.3g  total %.5f  ce %.5f  nce %.5f  dsa %.5f", r.step, r.learning_rate,
                 r.total, r.parts.classification, r.parts.local_contrast, r.parts.frequency_alignment);
    if (r.recall_at_1) std::fprintf(stderr, "  R@1 %.4f", *r.recall_at_1);
    std::fputc('\n', stderr);
  });
  save_checkpoint(result.checkpoint, out);
  if (!log_path) log_path = fs::path(out.string() + ".steps.csv");
  pipeline::write_step_log(result.log, *log_path);
  std::printf("checkpoint %s, step log %s\n", out.string().c_str(), log_path->string().c_str());
  return 0;
}

int run_embed(const fs::path& ckpt_path, const std::optional<fs::path>& config_path, const fs::path& manifest_path,
              const std::string& split, const std::string& view, const fs::path& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  std::unique_ptr<SfdeModel<float>> model;
  if (config_path) {
    ModelConfig mc = load_config(*config_path).model;
    mc.num_classes = ck.config.model.num_classes;
    model = std::make_unique<SfdeModel<float>>(mc, ck.config.train.seed);
    restore_parameters(*model, ck.tensors);
  } else {
    model = instantiate(ck);
  }
  const auto manifest = data::read_manifest(manifest_path);
  std::optional<retrieval::View> filter;
  if (view != "both") filter = retrieval::parse_view(view);
  const auto entries = manifest.select(split, filter);
  if (entries.empty()) throw ValidationError("no manifest entries for split '" + split + "' and view " + view);
  const auto bank = data::load_images(entries, model->config().backbone.input_size);
  const auto records = pipeline::embed(*model, bank, ck.normalization);
  retrieval::save_embeddings(records, out);
  std::printf("%zu embeddings of dimension %zu written to %s\n", records.size(), model->config().descriptor_dim(),
              out.string().c_str());
  return 0;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ValidationError("--k expects a comma-separated list of positive integers, got '" + text + "'");
    }
  }
  if (ks.empty()) throw ValidationError("--k is empty");
  return ks;
}

int run_eval(const fs::path& query_path, const fs::path& gallery_path, const std::string& ks, const fs::path& out,
             std::size_t bins) {
  const auto query = retrieval::load_embeddings(query_path);
  const auto gallery = retrieval::load_embeddings(gallery_path);
  pipeline::EvalSettings settings;
  settings.ks = parse_ks(ks);
  settings.histogram_bins = bins;
  for (const auto& r : pipeline::evaluate_stores(query, gallery, settings, out)) {
    std::printf("%s:", r.direction.c_str());
    for (const auto& [k, v] : r.recall_at) std::printf(" R@%zu=%.4f", k, v);
    std::printf(" mAP=%.4f (%zu queries, %zu excluded)\n", r.mean_ap, r.evaluated_queries, r.excluded_queries.size());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sfde: cross-view drone/satellite retrieval with spatial and frequency branches"};
  app.require_subcommand(1);

  auto* selftest_cmd = app.add_subcommand("selftest", "Run the invariant suite and print a property table");
  std::string inject;
  selftest_cmd->add_option("--inject-fault", inject, "Fault to inject (fft-normalization)")
      ->check(CLI::IsMember({"fft-normalization"}));

  auto* ingest_cmd = app.add_subcommand("ingest", "Scan a dataset tree and write a manifest CSV");
  fs::path root, manifest_out;
  ingest_cmd->add_option("--root", root, "Dataset root (<split>/<class>/{drone,satellite}/*.pgm|ppm)")->required();
  ingest_cmd->add_option("--out", manifest_out, "Manifest CSV to write")->required();

  auto* train_cmd = app.add_subcommand("train", "Train on a manifest split and write a checkpoint");
  std::optional<fs::path> train_config, train_log;
  fs::path train_manifest, train_out;
  std::string train_split = "train";
  bool quiet = false;
  train_cmd->add_option("--config", train_config, "Run configuration file");
  train_cmd->add_option("--manifest", train_manifest, "Manifest CSV")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train_log, "Per-step loss CSV (default <out>.steps.csv)");
  train_cmd->add_option("--split", train_split, "Manifest split to train on");
  train_cmd->add_flag("--quiet", quiet, "Suppress progress lines");

  auto* embed_cmd = app.add_subcommand("embed", "Write an embedding store for a manifest subset");
  fs::path embed_ckpt, embed_manifest, embed_out;
  std::optional<fs::path> embed_config;
  std::string embed_split, embed_view = "both";
  embed_cmd->add_option("--ckpt", embed_ckpt, "Checkpoint")->required();
  embed_cmd->add_option("--manifest", embed_manifest, "Manifest CSV")->required();
  embed_cmd->add_option("--split", embed_split, "Manifest split")->required();
  embed_cmd->add_option("--view", embed_view, "drone, satellite or both")
      ->check(CLI::IsMember({"drone", "satellite", "both"}));
  embed_cmd->add_option("--config", embed_config, "Model configuration to load the checkpoint into");
  embed_cmd->add_option("--out", embed_out, "Embedding store path")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Rank a query store against a gallery store");
  fs::path eval_query, eval_gallery, eval_out;
  std::string eval_k = "1,5,10";
  std::size_t bins = 20;
  eval_cmd->add_option("--query", eval_query, "Query embedding store")->required();
  eval_cmd->add_option("--gallery", eval_gallery, "Gallery embedding store")->required();
  eval_cmd->add_option("--k", eval_k, "Comma-separated K values");
  eval_cmd->add_option("--bins", bins, "Distance histogram bins");
  eval_cmd->add_option("--out", eval_out, "Report directory")->required();

  auto* synth_cmd = app.add_subcommand("synth", "Generate a procedural paired-view dataset");
  data::SynthOptions synth;
  fs::path synth_out;
  synth_cmd->add_option("--out", synth_out, "Dataset root to create")->required();
  synth_cmd->add_option("--classes", synth.classes, "Location classes");
  synth_cmd->add_option("--drones", synth.drones_per_class, "Drone views per class");
  synth_cmd->add_option("--satellites", synth.satellites_per_class, "Satellite views per class");
  synth_cmd->add_option("--size", synth.image_size, "Image side in pixels");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--split", synth.split, "Split directory name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (selftest_cmd->parsed()) return run_selftest(inject == "fft-normalization");
    if (ingest_cmd->parsed()) return run_ingest(root, manifest_out);
    if (train_cmd->parsed()) return run_train(train_config, train_manifest, train_out, train_log, train_split, quiet);
    if (embed_cmd->parsed()) return run_embed(embed_ckpt, embed_config, embed_manifest, embed_split, embed_view, embed_out);
    if (eval_cmd->parsed()) return run_eval(eval_query, eval_gallery, eval_k, eval_out, bins);
    if (synth_cmd->parsed()) {
      data::generate_synthetic(synth_out, synth);
      std::printf("synthetic dataset written to %s\n", synth_out.string().c_str());
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(ErrorKind::Io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
