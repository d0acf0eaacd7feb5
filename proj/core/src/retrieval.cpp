#include "sfde/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sfde/binary_io.hpp"
#include "sfde/error.hpp"

namespace sfde::retrieval {
namespace {

constexpr char kMagic[4] = {'S', 'F', 'D', 'E'};

double norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

void append_normalized(std::vector<double>& out, std::span<const float> seg, const char* branch) {
  if (seg.empty()) return;
  for (float v : seg) {
    if (!std::isfinite(v)) throw NumericError(std::string("embedding: non-finite value in the ") + branch + " segment");
  }
  const double n = std::max(norm(seg), 1e-12);
  for (float v : seg) out.push_back(double(v) / n);
}

std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

bool ranks_before(const Match& a, const Match& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.id != b.id) return a.id < b.id;
  return a.index < b.index;
}

std::vector<Match> full_ranking(std::span<const float> query, const std::vector<EmbeddingRecord>& gallery) {
  std::vector<Match> all(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (gallery[i].vector.size() != query.size()) {
      throw ValidationError("ranking: gallery entry '" + gallery[i].id + "' has dimension " +
                            std::to_string(gallery[i].vector.size()) + ", query has " + std::to_string(query.size()));
    }
    all[i] = {i, gallery[i].id, dot(query, gallery[i].vector)};
  }
  std::sort(all.begin(), all.end(), ranks_before);
  return all;
}

}  // namespace

const char* to_string(View view) { return view == View::Drone ? "drone" : "satellite"; }

View parse_view(std::string_view text) {
  if (text == "drone") return View::Drone;
  if (text == "satellite") return View::Satellite;
  throw ValidationError("unknown view '" + std::string(text) + "' (expected drone or satellite)");
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

std::vector<float> assemble_embedding(std::span<const float> global, std::span<const float> local,
                                      std::span<const float> frequency) {
  std::vector<double> joined;
  append_normalized(joined, global, "global");
  append_normalized(joined, local, "local");
  append_normalized(joined, frequency, "frequency");
  if (joined.empty()) throw ValidationError("embedding: every branch segment is disabled");
  double n = 0.0;
  for (double v : joined) n += v * v;
  n = std::max(std::sqrt(n), 1e-12);
  std::vector<float> out(joined.size());
  for (std::size_t i = 0; i < joined.size(); ++i) out[i] = float(joined[i] / n);
  return out;
}

std::vector<Match> cosine_topk(std::span<const float> query, const std::vector<EmbeddingRecord>& gallery,
                               std::size_t k) {
  if (gallery.empty()) throw ValidationError("ranking: gallery is empty");
  if (k == 0 || k > gallery.size()) {
    throw ValidationError("ranking: K=" + std::to_string(k) + " must be between 1 and the gallery size " +
                          std::to_string(gallery.size()) + "; pass a smaller --k");
  }
  auto all = full_ranking(query, gallery);
  all.resize(k);
  return all;
}

double average_precision(const std::vector<bool>& relevance) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < relevance.size(); ++r) {
    if (!relevance[r]) continue;
    ++hits;
    sum += double(hits) / double(r + 1);
  }
  return hits == 0 ? 0.0 : sum / double(hits);
}

RetrievalReport evaluate(const std::vector<EmbeddingRecord>& queries, const std::vector<EmbeddingRecord>& gallery,
                         std::vector<std::size_t> ks, std::string direction) {
  if (gallery.empty()) throw ValidationError("evaluate: gallery is empty");
  if (ks.empty()) throw ValidationError("evaluate: no K values requested");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.front() == 0 || ks.back() > gallery.size()) {
    throw ValidationError("evaluate: K=" + std::to_string(ks.back() > gallery.size() ? ks.back() : 0) +
                          " is outside 1.." + std::to_string(gallery.size()) + " (gallery size); pass a smaller --k");
  }
  RetrievalReport report;
  report.direction = std::move(direction);
  std::map<std::size_t, std::size_t> hits;
  for (auto k : ks) hits[k] = 0;
  double ap_sum = 0.0;
  for (const auto& q : queries) {
    auto ranking = full_ranking(q.vector, gallery);
    std::vector<bool> relevance(ranking.size());
    bool any = false;
    for (std::size_t r = 0; r < ranking.size(); ++r) {
      relevance[r] = gallery[ranking[r].index].class_id == q.class_id;
      any = any || relevance[r];
    }
    ranking.resize(ks.back());
    report.queries.push_back({q.id, std::move(ranking)});
    if (!any) {
      report.excluded_queries.push_back(q.id);
      continue;
    }
    ++report.evaluated_queries;
    ap_sum += average_precision(relevance);
    const auto first = std::find(relevance.begin(), relevance.end(), true) - relevance.begin();
    for (auto k : ks) {
      if (std::size_t(first) < k) ++hits[k];
    }
  }
  const double denom = report.evaluated_queries ? double(report.evaluated_queries) : 1.0;
  for (auto k : ks) report.recall_at[k] = report.evaluated_queries ? double(hits[k]) / denom : 0.0;
  report.mean_ap = report.evaluated_queries ? ap_sum / denom : 0.0;
  return report;
}

DistanceHistogram distance_histogram(const std::vector<EmbeddingRecord>& queries,
                                     const std::vector<EmbeddingRecord>& gallery, std::size_t bins) {
  if (bins == 0) throw ValidationError("histogram needs at least one bin");
  DistanceHistogram h;
  h.positive.assign(bins, 0);
  h.negative.assign(bins, 0);
  const double width = (h.hi - h.lo) / double(bins);
  for (const auto& q : queries)
    for (const auto& g : gallery) {
      if (&q == &g) continue;
      const double d = std::clamp(1.0 - dot(q.vector, g.vector), h.lo, h.hi);
      const std::size_t b = std::min(bins - 1, std::size_t((d - h.lo) / width));
      (q.class_id == g.class_id ? h.positive : h.negative)[b]++;
    }
  return h;
}

void write_ranking_csv(const RetrievalReport& report, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "query_id,rank,gallery_id,score\n";
  for (const auto& q : report.queries)
    for (std::size_t r = 0; r < q.ranking.size(); ++r)
      out << q.query_id << ',' << r + 1 << ',' << q.ranking[r].id << ',' << format_score(q.ranking[r].score) << '\n';
  write_file_atomic(path, out.str());
}

void write_summary_csv(const RetrievalReport& report, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "metric,K,value\n";
  for (const auto& [k, v] : report.recall_at) out << "recall," << k << ',' << format_score(v) << '\n';
  out << "mean_ap,," << format_score(report.mean_ap) << '\n';
  out << "evaluated_queries,," << report.evaluated_queries << '\n';
  out << "excluded_queries,," << report.excluded_queries.size() << '\n';
  write_file_atomic(path, out.str());
}

void write_histogram_csv(const DistanceHistogram& hist, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "bin_start,bin_end,positive,negative\n";
  const std::size_t bins = hist.positive.size();
  const double width = (hist.hi - hist.lo) / double(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out << format_score(hist.lo + width * double(b)) << ',' << format_score(hist.lo + width * double(b + 1)) << ','
        << hist.positive[b] << ',' << hist.negative[b] << '\n';
  }
  write_file_atomic(path, out.str());
}

void save_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path) {
  const std::size_t dim = records.empty() ? 0 : records.front().vector.size();
  io::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kStoreVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
  for (const auto& r : records) {
    if (r.vector.size() != dim) {
      throw ValidationError("embedding store: record '" + r.id + "' has dimension " + std::to_string(r.vector.size()) +
                            ", expected " + std::to_string(dim));
    }
    if (std::abs(norm(r.vector) - 1.0) > kUnitTolerance) {
      throw ValidationError("embedding store: record '" + r.id + "' is not unit-norm");
    }
    w.put_string16(r.id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.view));
    w.put<std::uint32_t>(r.class_id);
    for (float v : r.vector) w.put<float>(v);
  }
  write_file_atomic(path, w.bytes());
}

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  io::ByteReader r(bytes, "embedding store " + path.string());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(FormatErrorCode::MagicMismatch, r.what() + ": missing SFDE magic");
  }
  r.get_bytes(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kStoreVersion) {
    throw FormatError(FormatErrorCode::VersionMismatch, r.what() + ": format version " + std::to_string(version) +
                                                           ", expected " + std::to_string(kStoreVersion));
  }
  const auto count = r.get<std::uint32_t>("record count");
  const auto dim = r.get<std::uint32_t>("dimension");
  std::vector<EmbeddingRecord> out;
  out.reserve(std::min<std::size_t>(count, bytes.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.id = r.get_string16("record id");
    const auto view = r.get<std::uint8_t>("view tag");
    if (view > 1) {
      throw FormatError(FormatErrorCode::InvalidField, r.what() + ": record '" + rec.id + "' has view tag " +
                                                          std::to_string(view));
    }
    rec.view = static_cast<View>(view);
    rec.class_id = r.get<std::uint32_t>("class id");
    rec.vector.resize(dim);
    for (auto& v : rec.vector) v = r.get<float>("vector payload");
    if (std::abs(norm(rec.vector) - 1.0) > kUnitTolerance) {
      throw FormatError(FormatErrorCode::NonUnitVector, r.what() + ": record '" + rec.id + "' is not unit-norm");
    }
    out.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatErrorCode::InvalidField, r.what() + ": " + std::to_string(r.remaining()) +
                                                        " trailing bytes after the last record");
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

}  // namespace sfde::retrieval
