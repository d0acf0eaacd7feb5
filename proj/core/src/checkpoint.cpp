#include "sfde/checkpoint.hpp"

#include <map>

#include "sfde/binary_io.hpp"
#include "sfde/retrieval.hpp"

namespace sfde {
namespace {

constexpr char kMagic[4] = {'S', 'F', 'D', 'C'};

ParamRole role_from(std::uint8_t raw, const io::ByteReader& in) {
  if (raw > static_cast<std::uint8_t>(ParamRole::Buffer)) {
    throw FormatError(FormatErrorCode::InvalidField,
                      in.what() + ": unknown parameter role " + std::to_string(raw) + " at byte " +
                          std::to_string(in.position() - 1));
  }
  return static_cast<ParamRole>(raw);
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::ByteWriter out;
  out.put_bytes(std::string_view(kMagic, 4));
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put_string32(serialize_config(ck.config));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(ck.class_ids.size()));
  for (auto id : ck.class_ids) out.put<std::uint32_t>(id);
  for (float m : ck.normalization.mean) out.put<float>(m);
  for (float s : ck.normalization.std) out.put<float>(s);
  out.put_string32(ck.optimizer);
  out.put<std::uint64_t>(ck.steps);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& e : ck.tensors) {
    out.put_string16(e.name);
    out.put<std::uint8_t>(static_cast<std::uint8_t>(e.role));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) out.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    if (e.values.size() != shape_numel(e.shape)) {
      throw ValidationError("checkpoint tensor " + e.name + " holds " + std::to_string(e.values.size()) +
                            " values for shape " + to_string(e.shape));
    }
    for (float v : e.values) out.put<float>(v);
  }
  retrieval::write_file_atomic(path, out.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = retrieval::read_file(path);
  io::ByteReader in(bytes, path.string());
  if (in.get_bytes(std::min<std::size_t>(4, bytes.size()), "magic") != std::string_view(kMagic, 4)) {
    throw FormatError(FormatErrorCode::MagicMismatch, path.string() + ": not a checkpoint (expected magic SFDC)");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorCode::VersionMismatch, path.string() + ": checkpoint version " +
                                                            std::to_string(version) + ", expected " +
                                                            std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  ck.config = parse_config(in.get_string32("config"), path.string() + " [embedded config]");
  const auto classes = in.get<std::uint32_t>("class count");
  for (std::uint32_t i = 0; i < classes; ++i) ck.class_ids.push_back(in.get<std::uint32_t>("class id"));
  ck.config.model.num_classes = classes;
  for (auto& m : ck.normalization.mean) m = in.get<float>("normalization mean");
  for (auto& s : ck.normalization.std) s = in.get<float>("normalization std");
  ck.optimizer = in.get_string32("optimizer description");
  ck.steps = in.get<std::uint64_t>("step count");
  const auto count = in.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Checkpoint::Entry e;
    e.name = in.get_string16("tensor name");
    e.role = role_from(in.get<std::uint8_t>("tensor role"), in);
    const auto rank = in.get<std::uint32_t>("tensor rank");
    if (rank > 8) {
      throw FormatError(FormatErrorCode::InvalidField, path.string() + ": tensor " + e.name + " has rank " +
                                                           std::to_string(rank));
    }
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.get<std::uint32_t>("tensor extent"));
    const std::size_t n = shape_numel(e.shape);
    if (n * sizeof(float) > in.remaining()) {
      throw FormatError(FormatErrorCode::Truncated, path.string() + ": tensor " + e.name + " payload of " +
                                                        std::to_string(n) + " floats exceeds the " +
                                                        std::to_string(in.remaining()) + " bytes left at byte " +
                                                        std::to_string(in.position()));
    }
    e.values.resize(n);
    for (auto& v : e.values) v = in.get<float>("tensor values");
    ck.tensors.push_back(std::move(e));
  }
  if (in.remaining() != 0) {
    throw FormatError(FormatErrorCode::InvalidField, path.string() + ": " + std::to_string(in.remaining()) +
                                                         " trailing bytes after the last tensor");
  }
  return ck;
}

template <typename T>
std::vector<Checkpoint::Entry> capture_parameters(const SfdeModel<T>& model) {
  std::vector<Checkpoint::Entry> out;
  const auto& store = model.parameters();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store.at(i);
    Checkpoint::Entry e{p.name, p.role, p.value.shape(), {}};
    e.values.assign(p.value.values().begin(), p.value.values().end());
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
void restore_parameters(SfdeModel<T>& model, const std::vector<Checkpoint::Entry>& tensors) {
  auto& store = model.parameters();
  std::map<std::string, const Checkpoint::Entry*> by_name;
  for (const auto& e : tensors) by_name[e.name] = &e;
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store.at(i);
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      problems.push_back(p.name + ": missing from checkpoint (model expects " + to_string(p.value.shape()) + ")");
    } else if (it->second->shape != p.value.shape()) {
      problems.push_back(p.name + ": checkpoint " + to_string(it->second->shape) + " vs model " +
                         to_string(p.value.shape()));
    }
  }
  for (const auto& e : tensors) {
    if (!store.contains(e.name)) problems.push_back(e.name + ": present in checkpoint but not in model");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not fit the model configuration (" + std::to_string(problems.size()) +
                      " dimension mismatch(es)):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.at(i);
    const auto& src = by_name.at(p.name)->values;
    for (std::size_t j = 0; j < src.size(); ++j) p.value[j] = T(src[j]);
  }
}

std::unique_ptr<SfdeModel<float>> instantiate(const Checkpoint& ck) {
  auto model = std::make_unique<SfdeModel<float>>(ck.config.model, ck.config.train.seed);
  restore_parameters(*model, ck.tensors);
  return model;
}

template std::vector<Checkpoint::Entry> capture_parameters<float>(const SfdeModel<float>&);
template std::vector<Checkpoint::Entry> capture_parameters<double>(const SfdeModel<double>&);
template void restore_parameters<float>(SfdeModel<float>&, const std::vector<Checkpoint::Entry>&);
template void restore_parameters<double>(SfdeModel<double>&, const std::vector<Checkpoint::Entry>&);

}  // namespace sfde
