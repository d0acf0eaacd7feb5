#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sfde::retrieval {

enum class View : std::uint8_t { Drone = 0, Satellite = 1 };

const char* to_string(View view);
View parse_view(std::string_view text);

struct EmbeddingRecord {
  std::string id;
  View view = View::Drone;
  std::uint32_t class_id = 0;
  std::vector<float> vector;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

inline constexpr double kUnitTolerance = 1e-5;

/// Concatenates the L2-normalized non-empty segments and normalizes the
/// result. An empty span drops that segment.
std::vector<float> assemble_embedding(std::span<const float> global, std::span<const float> local,
                                      std::span<const float> frequency);

struct Match {
  std::size_t index = 0;
  std::string id;
  double score = 0.0;
};

double dot(std::span<const float> a, std::span<const float> b);

/// Top-k gallery entries by cosine score; ties resolve by ascending id.
std::vector<Match> cosine_topk(std::span<const float> query, const std::vector<EmbeddingRecord>& gallery,
                               std::size_t k);

/// Mean of precision@rank over relevant ranks; relevance is listed in rank order.
double average_precision(const std::vector<bool>& relevance);

struct QueryResult {
  std::string query_id;
  std::vector<Match> ranking;
};

struct RetrievalReport {
  std::string direction;
  std::vector<QueryResult> queries;
  std::map<std::size_t, double> recall_at;
  double mean_ap = 0.0;
  std::size_t evaluated_queries = 0;
  /// Queries with no relevant gallery entry, excluded from the means.
  std::vector<std::string> excluded_queries;
};

/// Ranks each query against the gallery; relevance is class_id equality.
/// Rankings in the report keep the top max(ks) entries.
RetrievalReport evaluate(const std::vector<EmbeddingRecord>& queries, const std::vector<EmbeddingRecord>& gallery,
                         std::vector<std::size_t> ks, std::string direction = "query_to_gallery");

struct DistanceHistogram {
  double lo = 0.0, hi = 2.0;
  std::vector<std::size_t> positive, negative;
};

/// Cosine distances 1 - cos for same-class (positive) and cross-class pairs.
DistanceHistogram distance_histogram(const std::vector<EmbeddingRecord>& queries,
                                     const std::vector<EmbeddingRecord>& gallery, std::size_t bins = 20);

void write_ranking_csv(const RetrievalReport& report, const std::filesystem::path& path);
void write_summary_csv(const RetrievalReport& report, const std::filesystem::path& path);
void write_histogram_csv(const DistanceHistogram& hist, const std::filesystem::path& path);

inline constexpr std::uint32_t kStoreVersion = 1;

/// Binary little-endian store; written to a temporary file and renamed into place.
void save_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path);
std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path);

/// Writes a file atomically via a sibling temporary and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace sfde::retrieval
