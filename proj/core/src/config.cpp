#include "sfde/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>
#include <vector>

#include "sfde/retrieval.hpp"

namespace sfde {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(std::string_view text) {
  const std::string s(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_uint(std::string_view text) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

bool to_bool(std::string_view text) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw ConfigError("expected true/false, got '" + std::string(text) + "'");
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename M>
Field size_field(const char* section, const char* key, M member) {
  return {section, key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, std::string_view v) { member(c) = static_cast<std::size_t>(to_uint(v)); }};
}

template <typename M>
Field double_field(const char* section, const char* key, M member) {
  return {section, key, [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, std::string_view v) { member(c) = to_double(v); }};
}

template <typename M>
Field bool_field(const char* section, const char* key, M member) {
  return {section, key,
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [member](RunConfig& c, std::string_view v) { member(c) = to_bool(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      size_field("model", "input_size", [](RunConfig& c) -> std::size_t& { return c.model.backbone.input_size; }),
      {"model", "stage_channels",
       [](const RunConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < 4; ++i) out += (i ? "," : "") + std::to_string(c.model.backbone.stage_channels[i]);
         return out;
       },
       [](RunConfig& c, std::string_view v) {
         std::vector<std::size_t> parts;
         std::size_t start = 0;
         while (start <= v.size()) {
           const auto comma = v.find(',', start);
           const auto piece = trim(v.substr(start, comma == std::string_view::npos ? v.size() - start : comma - start));
           parts.push_back(static_cast<std::size_t>(to_uint(piece)));
           if (comma == std::string_view::npos) break;
           start = comma + 1;
         }
         if (parts.size() != 4) throw ConfigError("stage_channels needs exactly 4 comma-separated values");
         for (std::size_t i = 0; i < 4; ++i) c.model.backbone.stage_channels[i] = parts[i];
       }},
      size_field("model", "blocks_per_stage",
                 [](RunConfig& c) -> std::size_t& { return c.model.backbone.blocks_per_stage; }),
      size_field("model", "embedding_dim", [](RunConfig& c) -> std::size_t& { return c.model.embedding_dim; }),
      size_field("model", "heads", [](RunConfig& c) -> std::size_t& { return c.model.heads; }),
      double_field("model", "global_dropout", [](RunConfig& c) -> double& { return c.model.global_dropout; }),
      double_field("model", "fusion_dropout", [](RunConfig& c) -> double& { return c.model.fusion_dropout; }),
      size_field("model", "token_budget", [](RunConfig& c) -> std::size_t& { return c.model.token_budget; }),
      bool_field("model", "lgsb", [](RunConfig& c) -> bool& { return c.model.branches.local; }),
      bool_field("model", "gscb", [](RunConfig& c) -> bool& { return c.model.branches.global; }),
      bool_field("model", "fsab", [](RunConfig& c) -> bool& { return c.model.branches.frequency; }),
      double_field("loss", "classification", [](RunConfig& c) -> double& { return c.loss.classification; }),
      double_field("loss", "local_contrast", [](RunConfig& c) -> double& { return c.loss.local_contrast; }),
      double_field("loss", "frequency_alignment",
                   [](RunConfig& c) -> double& { return c.loss.frequency_alignment; }),
      double_field("optim", "learning_rate", [](RunConfig& c) -> double& { return c.optimizer.learning_rate; }),
      double_field("optim", "weight_decay", [](RunConfig& c) -> double& { return c.optimizer.weight_decay; }),
      double_field("optim", "beta1", [](RunConfig& c) -> double& { return c.optimizer.beta1; }),
      double_field("optim", "beta2", [](RunConfig& c) -> double& { return c.optimizer.beta2; }),
      double_field("optim", "epsilon", [](RunConfig& c) -> double& { return c.optimizer.epsilon; }),
      double_field("optim", "warmup_fraction", [](RunConfig& c) -> double& { return c.warmup_fraction; }),
      double_field("optim", "lr_floor", [](RunConfig& c) -> double& { return c.lr_floor; }),
      size_field("train", "steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; }),
      size_field("train", "pairs_per_batch", [](RunConfig& c) -> std::size_t& { return c.train.pairs_per_batch; }),
      {"train", "seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
       [](RunConfig& c, std::string_view v) { c.train.seed = to_uint(v); }},
      double_field("train", "flip_probability", [](RunConfig& c) -> double& { return c.train.flip_probability; }),
      size_field("train", "eval_every", [](RunConfig& c) -> std::size_t& { return c.train.eval_every; }),
  };
  return all;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  optimizer.validate();
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1)");
  if (!(lr_floor >= 0.0 && lr_floor <= optimizer.learning_rate)) {
    throw ConfigError("lr_floor must lie in [0, learning_rate]");
  }
  if (train.steps == 0) throw ConfigError("train.steps must be positive");
  if (train.pairs_per_batch < 2) throw ConfigError("train.pairs_per_batch must be at least 2 (in-batch negatives)");
  if (!(train.flip_probability >= 0.0 && train.flip_probability <= 1.0)) {
    throw ConfigError("flip_probability must lie in [0, 1]");
  }
}

ScheduleConfig RunConfig::schedule() const {
  return {train.steps, warmup_fraction, optimizer.learning_rate, lr_floor};
}

RunConfig parse_config(std::string_view text, const std::string& origin) {
  RunConfig config;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view raw = text.substr(start, nl == std::string_view::npos ? text.size() - start : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string_view::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "model" && section != "loss" && section != "optim" && section != "train") {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    if (section.empty()) throw ConfigError(where + "key outside of any section");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    bool found = false;
    for (const auto& f : fields()) {
      if (section == f.section && key == f.key) {
        try {
          f.set(config, value);
        } catch (const ConfigError& e) {
          throw ConfigError(where + key + ": " + e.what());
        }
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
  }
  config.validate();
  return config;
}

std::string serialize_config(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(retrieval::read_file(path), path.string());
}

}  // namespace sfde
