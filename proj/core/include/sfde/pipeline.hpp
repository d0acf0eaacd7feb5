#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sfde/checkpoint.hpp"
#include "sfde/config.hpp"
#include "sfde/dataset.hpp"
#include "sfde/model.hpp"
#include "sfde/retrieval.hpp"

namespace sfde::pipeline {

struct StepRecord {
  std::size_t step = 0;
  double learning_rate = 0.0;
  losses::LossParts parts;
  double total = 0.0;
  /// Training-set Drone->Satellite R@1 after this step, when measured.
  std::optional<double> recall_at_1;
};

struct TrainResult {
  std::unique_ptr<SfdeModel<float>> model;
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
  /// Number of completed steps at the first measurement with R@1 = 1.
  std::optional<std::size_t> first_perfect_step;
};

using StepObserver = std::function<void(const StepRecord&)>;

/// Desk-scale training on one split. Each step draws pairs_per_batch distinct
/// classes with one drone and one satellite image each.
TrainResult train(const RunConfig& config, const data::Manifest& manifest, const std::string& split = "train",
                  const StepObserver& observer = {});

/// step,learning_rate,total,classification,local_contrast,frequency_alignment,recall_at_1
void write_step_log(const std::vector<StepRecord>& log, const std::filesystem::path& path);

std::vector<retrieval::EmbeddingRecord> embed(const SfdeModel<float>& model, const data::ImageBank& bank,
                                              const data::Normalization& norm, std::size_t chunk = 16);

/// Drone->Satellite R@1 over the bank, both views drawn from it.
double drone_to_satellite_recall(const SfdeModel<float>& model, const data::ImageBank& bank,
                                 const data::Normalization& norm);

struct EvalSettings {
  std::vector<std::size_t> ks{1, 5, 10};
  std::size_t histogram_bins = 20;
};

/// Query->gallery and gallery->query reports plus a distance histogram,
/// written to out_dir as ranking_<dir>.csv, summary_<dir>.csv, histogram.csv.
std::vector<retrieval::RetrievalReport> evaluate_stores(const std::vector<retrieval::EmbeddingRecord>& query,
                                                        const std::vector<retrieval::EmbeddingRecord>& gallery,
                                                        const EvalSettings& settings,
                                                        const std::filesystem::path& out_dir);

}  // namespace sfde::pipeline
