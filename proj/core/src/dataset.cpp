#include "sfde/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "sfde/image.hpp"
#include "sfde/random.hpp"

namespace sfde::data {
namespace fs = std::filesystem;
namespace {

bool is_pnm(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm";
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint32_t parse_class(const fs::path& dir) {
  const std::string name = dir.filename().string();
  if (name.empty() || !std::all_of(name.begin(), name.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
      name.size() > 9) {
    throw ValidationError("ingest: class directory '" + dir.string() + "' is not a numeric class id");
  }
  return static_cast<std::uint32_t>(std::stoul(name));
}

void check_csv_field(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) {
    throw ValidationError("manifest field '" + s + "' contains a comma or newline");
  }
}

struct Pattern {
  struct Grating {
    double fx, fy, phase;
    std::array<double, 3> color;
  };
  struct Blob {
    double cx, cy, radius;
    std::array<double, 3> color;
  };
  std::array<double, 3> base;
  std::vector<Grating> gratings;
  std::vector<Blob> blobs;

  static Pattern random(Rng& rng) {
    Pattern p;
    for (auto& b : p.base) b = rng.uniform(0.25, 0.75);
    for (int i = 0; i < 3; ++i) {
      const double freq = rng.uniform(1.5, 5.0);
      const double angle = rng.uniform(0.0, std::numbers::pi);
      Grating g{freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi), {}};
      for (auto& c : g.color) c = rng.uniform(-0.2, 0.2);
      p.gratings.push_back(g);
    }
    for (int i = 0; i < 2; ++i) {
      Blob b{rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(0.15, 0.35), {}};
      for (auto& c : b.color) c = rng.uniform(-0.35, 0.35);
      p.blobs.push_back(b);
    }
    return p;
  }

  double value(double u, double v, std::size_t c) const {
    double x = base[c];
    for (const auto& g : gratings) x += g.color[c] * std::sin(std::numbers::pi * (g.fx * u + g.fy * v) + g.phase);
    for (const auto& b : blobs) {
      const double d2 = (u - b.cx) * (u - b.cx) + (v - b.cy) * (v - b.cy);
      x += b.color[c] * std::exp(-d2 / (2.0 * b.radius * b.radius));
    }
    return x;
  }
};

struct ViewTransform {
  double angle = 0.0, scale = 1.0, dx = 0.0, dy = 0.0, gain = 1.0, offset = 0.0, noise = 0.0;
};

image::Image render(const Pattern& p, const ViewTransform& t, std::size_t size, Rng& rng) {
  image::Image img{size, size, 3, std::vector<float>(size * size * 3)};
  const double ca = std::cos(t.angle), sa = std::sin(t.angle);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u0 = 2.0 * (double(x) + 0.5) / double(size) - 1.0;
      const double v0 = 2.0 * (double(y) + 0.5) / double(size) - 1.0;
      const double u = (ca * u0 - sa * v0) / t.scale + t.dx;
      const double v = (sa * u0 + ca * v0) / t.scale + t.dy;
      for (std::size_t c = 0; c < 3; ++c) {
        double val = 0.5 + t.gain * (p.value(u, v, c) - 0.5) + t.offset;
        if (t.noise > 0) val += t.noise * rng.normal();
        img.at(y, x, c) = float(std::clamp(val, 0.0, 1.0));
      }
    }
  return img;
}

}  // namespace

ManifestCounts Manifest::counts(const std::string& split) const {
  ManifestCounts c;
  std::set<std::uint32_t> classes;
  for (const auto& e : entries) {
    if (!split.empty() && e.split != split) continue;
    (e.view == retrieval::View::Drone ? c.drone : c.satellite)++;
    classes.insert(e.class_id);
  }
  c.classes = classes.size();
  return c;
}

std::vector<ManifestEntry> Manifest::select(const std::string& split, std::optional<retrieval::View> view) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == split && (!view || e.view == *view)) out.push_back(e);
  }
  return out;
}

Manifest ingest(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("ingest: " + root.string() + " is not a directory");
  Manifest m;
  std::vector<std::string> file_errors;
  std::optional<FormatErrorCode> first_code;
  std::vector<std::string> pairing_problems;
  for (const auto& split_dir : sorted_children(root, true)) {
    const std::string split = split_dir.filename().string();
    for (const auto& class_dir : sorted_children(split_dir, true)) {
      const std::uint32_t cls = parse_class(class_dir);
      std::size_t per_view[2] = {0, 0};
      for (retrieval::View view : {retrieval::View::Drone, retrieval::View::Satellite}) {
        const fs::path vdir = class_dir / retrieval::to_string(view);
        if (!fs::is_directory(vdir)) continue;
        for (const auto& file : sorted_children(vdir, false)) {
          if (!is_pnm(file)) continue;
          try {
            image::read_pnm(file);
          } catch (const FormatError& e) {
            if (!first_code) first_code = e.code();
            file_errors.push_back(e.what());
            continue;
          }
          ManifestEntry entry{split + "/" + class_dir.filename().string() + "/" + retrieval::to_string(view) + "/" +
                                  file.stem().string(),
                              file.string(), view, cls, split};
          check_csv_field(entry.id);
          check_csv_field(entry.path);
          m.entries.push_back(std::move(entry));
          per_view[static_cast<int>(view)]++;
        }
      }
      if (split == "train" && (per_view[0] == 0 || per_view[1] == 0)) {
        pairing_problems.push_back("class " + std::to_string(cls) + " in split '" + split + "' has " +
                                   std::to_string(per_view[0]) + " drone and " + std::to_string(per_view[1]) +
                                   " satellite images");
      }
    }
  }
  if (!file_errors.empty()) {
    std::string msg = std::to_string(file_errors.size()) + " malformed image(s):";
    for (const auto& e : file_errors) msg += "\n  " + e;
    throw FormatError(*first_code, msg);
  }
  if (!pairing_problems.empty()) {
    std::string msg = "ingest validation report:";
    for (const auto& p : pairing_problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  if (m.entries.empty()) throw ValidationError("ingest: empty manifest, no .pgm/.ppm images under " + root.string());
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::ostringstream out;
  out << "id,path,view,class_id,split\n";
  for (const auto& e : manifest.entries) {
    out << e.id << ',' << e.path << ',' << retrieval::to_string(e.view) << ',' << e.class_id << ',' << e.split
        << '\n';
  }
  retrieval::write_file_atomic(path, out.str());
}

Manifest read_manifest(const fs::path& path) {
  std::istringstream in(retrieval::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "id,path,view,class_id,split") {
    throw FormatError(FormatErrorCode::InvalidField, path.string() + ": manifest header must be id,path,view,class_id,split");
  }
  Manifest m;
  std::set<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cols.size() != 5) throw FormatError(FormatErrorCode::InvalidField, where + ": expected 5 columns");
    ManifestEntry e;
    e.id = cols[0];
    e.path = cols[1];
    try {
      e.view = retrieval::parse_view(cols[2]);
      e.class_id = static_cast<std::uint32_t>(std::stoul(cols[3]));
    } catch (const std::exception& ex) {
      throw FormatError(FormatErrorCode::InvalidField, where + ": " + ex.what());
    }
    e.split = cols[4];
    if (!ids.insert(e.id).second) throw ValidationError(where + ": duplicate id '" + e.id + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

ImageBank load_images(const std::vector<ManifestEntry>& entries, std::size_t input_size) {
  ImageBank bank;
  bank.size = input_size;
  bank.entries = entries;
  for (const auto& e : entries) {
    image::Image img = image::read_pnm(e.path);
    if (img.width != input_size || img.height != input_size) img = image::resize_bilinear(img, input_size, input_size);
    bank.pixels.push_back(image::to_planar_rgb(img));
  }
  return bank;
}

Normalization compute_normalization(const ImageBank& bank) {
  Normalization n;
  if (bank.pixels.empty()) return n;
  const std::size_t plane = bank.size * bank.size;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (const auto& px : bank.pixels)
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = px[c * plane + i];
        sum += v;
        sq += v * v;
      }
    const double count = double(plane * bank.pixels.size());
    const double mean = sum / count;
    const double var = std::max(sq / count - mean * mean, 0.0);
    n.mean[c] = float(mean);
    n.std[c] = float(std::max(std::sqrt(var), 1e-3));
  }
  return n;
}

template <typename T>
Tensor<T> make_batch(const ImageBank& bank, const std::vector<std::size_t>& indices, const Normalization& norm,
                     const std::vector<bool>& flips) {
  const std::size_t s = bank.size;
  Tensor<T> batch({indices.size(), 3, s, s});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& px = bank.pixels.at(indices[b]);
    const bool flip = !flips.empty() && flips[b];
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
          const float v = px[(c * s + y) * s + (flip ? s - 1 - x : x)];
          batch.at(b, c, y, x) = T((v - norm.mean[c]) / norm.std[c]);
        }
  }
  return batch;
}

void generate_synthetic(const fs::path& root, const SynthOptions& o) {
  if (o.classes == 0 || o.image_size < 8) throw ValidationError("synthetic dataset needs classes and image size >= 8");
  Rng rng(o.seed);
  for (std::size_t cls = 0; cls < o.classes; ++cls) {
    Rng class_rng = rng.fork();
    const Pattern pattern = Pattern::random(class_rng);
    const fs::path dir = root / o.split / std::to_string(cls);
    fs::create_directories(dir / "drone");
    fs::create_directories(dir / "satellite");
    for (std::size_t i = 0; i < o.satellites_per_class; ++i) {
      ViewTransform t;
      t.noise = 0.01;
      image::write_pnm(dir / "satellite" / ("s" + std::to_string(i) + ".ppm"), render(pattern, t, o.image_size, class_rng));
    }
    for (std::size_t i = 0; i < o.drones_per_class; ++i) {
      ViewTransform t;
      t.angle = class_rng.uniform(-0.26, 0.26);
      t.scale = class_rng.uniform(0.9, 1.15);
      t.dx = class_rng.uniform(-0.08, 0.08);
      t.dy = class_rng.uniform(-0.08, 0.08);
      t.gain = class_rng.uniform(0.85, 1.15);
      t.offset = class_rng.uniform(-0.06, 0.06);
      t.noise = 0.02;
      image::write_pnm(dir / "drone" / ("d" + std::to_string(i) + ".ppm"), render(pattern, t, o.image_size, class_rng));
    }
  }
}

template Tensor<float> make_batch<float>(const ImageBank&, const std::vector<std::size_t>&, const Normalization&,
                                         const std::vector<bool>&);
template Tensor<double> make_batch<double>(const ImageBank&, const std::vector<std::size_t>&, const Normalization&,
                                           const std::vector<bool>&);

}  // namespace sfde::data
