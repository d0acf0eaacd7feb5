#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sfde/config.hpp"
#include "sfde/dataset.hpp"
#include "sfde/model.hpp"

namespace sfde {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Trained model state in a self-describing binary file ("SFDC" magic,
/// little-endian, float32 payloads).
struct Checkpoint {
  struct Entry {
    std::string name;
    ParamRole role = ParamRole::Weight;
    Shape shape;
    std::vector<float> values;
  };

  RunConfig config;
  /// class_ids[k] is the dataset class behind classifier row k.
  std::vector<std::uint32_t> class_ids;
  data::Normalization normalization;
  std::string optimizer;
  std::uint64_t steps = 0;
  std::vector<Entry> tensors;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<Checkpoint::Entry> capture_parameters(const SfdeModel<T>& model);

/// Copies stored tensors into the model. Missing, extra or differently shaped
/// tensors raise ConfigError listing each disagreement.
template <typename T>
void restore_parameters(SfdeModel<T>& model, const std::vector<Checkpoint::Entry>& tensors);

/// Builds the model described by the checkpoint and restores its parameters.
std::unique_ptr<SfdeModel<float>> instantiate(const Checkpoint& checkpoint);

}  // namespace sfde
