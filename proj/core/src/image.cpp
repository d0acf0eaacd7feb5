#include "sfde/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "sfde/error.hpp"
#include "sfde/ops.hpp"
#include "sfde/retrieval.hpp"

namespace sfde::image {
namespace {

class HeaderParser {
 public:
  HeaderParser(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::size_t number(const char* field) {
    skip_space_and_comments();
    const std::size_t begin = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + std::size_t(bytes_[pos_] - '0');
      if (v > 1'000'000) fail(FormatErrorCode::InvalidField, std::string(field) + " is implausibly large", begin);
      ++pos_;
    }
    if (pos_ == begin) {
      if (pos_ >= bytes_.size()) fail(FormatErrorCode::Truncated, std::string("header ends before ") + field, pos_);
      fail(FormatErrorCode::InvalidField, std::string("expected ") + field, pos_);
    }
    return v;
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size()) fail(FormatErrorCode::Truncated, "header ends before the pixel payload", pos_);
    if (!std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail(FormatErrorCode::InvalidField, "expected whitespace after maxval", pos_);
    }
    ++pos_;
  }

  [[noreturn]] void fail(FormatErrorCode code, const std::string& msg, std::size_t offset) const {
    throw FormatError(code, source_ + ": " + msg + " at byte offset " + std::to_string(offset));
  }

  std::size_t pos_ = 0;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  const std::string& source_;
};

}  // namespace

Image decode_pnm(std::string_view bytes, const std::string& source) {
  HeaderParser p(bytes, source);
  if (bytes.size() < 2) p.fail(FormatErrorCode::Truncated, "file too short for a PNM magic", 0);
  if (bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    p.fail(FormatErrorCode::MagicMismatch, "not a binary PGM/PPM (expected P5 or P6)", 0);
  }
  Image img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  p.pos_ = 2;
  img.width = p.number("width");
  img.height = p.number("height");
  const std::size_t maxval_at = p.pos_;
  const std::size_t maxval = p.number("maxval");
  if (img.width == 0 || img.height == 0) p.fail(FormatErrorCode::InvalidField, "zero image extent", maxval_at);
  if (maxval == 0 || maxval > 65535) p.fail(FormatErrorCode::InvalidField, "maxval outside 1..65535", maxval_at);
  p.single_whitespace();
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t samples = img.width * img.height * img.channels;
  const std::size_t need = samples * sample_bytes;
  if (bytes.size() - p.pos_ < need) {
    p.fail(FormatErrorCode::Truncated,
           "pixel payload truncated: need " + std::to_string(need) + " bytes, found " +
               std::to_string(bytes.size() - p.pos_),
           bytes.size());
  }
  img.pixels.resize(samples);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data() + p.pos_);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t v = sample_bytes == 2 ? (std::size_t(data[2 * i]) << 8) | data[2 * i + 1] : data[i];
    if (v > maxval) {
      p.fail(FormatErrorCode::InvalidField, "sample exceeds maxval", p.pos_ + i * sample_bytes);
    }
    img.pixels[i] = float(double(v) / double(maxval));
  }
  return img;
}

Image read_pnm(const std::filesystem::path& path) { return decode_pnm(retrieval::read_file(path), path.string()); }

std::string encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ValidationError("PNM output needs 1 or 3 channels");
  std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (float v : img.pixels) {
    const long q = std::lround(std::clamp(double(v), 0.0, 1.0) * 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
  retrieval::write_file_atomic(path, encode_pnm(img));
}

Image resize_bilinear(const Image& img, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ValidationError("resize target must be positive");
  const auto rows = ops::bilinear_taps(img.height, height);
  const auto cols = ops::bilinear_taps(img.width, width);
  Image out{width, height, img.channels, std::vector<float>(width * height * img.channels)};
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        const auto& r = rows[y];
        const auto& q = cols[x];
        const double top = (1 - q.frac) * img.at(r.i0, q.i0, c) + q.frac * img.at(r.i0, q.i1, c);
        const double bot = (1 - q.frac) * img.at(r.i1, q.i0, c) + q.frac * img.at(r.i1, q.i1, c);
        out.at(y, x, c) = float((1 - r.frac) * top + r.frac * bot);
      }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

std::vector<float> to_planar_rgb(const Image& img) {
  const std::size_t plane = img.width * img.height;
  std::vector<float> out(3 * plane);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = img.pixels[i * img.channels + (img.channels == 3 ? c : 0)];
  return out;
}

}  // namespace sfde::image
