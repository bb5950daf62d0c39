#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "itm/corpus.hpp"
#include "itm/semrel.hpp"

namespace itm {

enum class Direction : std::uint8_t { kI2T = 0, kT2I = 1 };

std::string_view to_string(Direction direction);

// Per query, the full ranking of the opposite modality (best first).
struct RetrievalRun {
  Direction direction = Direction::kI2T;
  std::vector<std::vector<std::uint32_t>> ranked;
  std::string model_tag;

  std::size_t n_queries() const { return ranked.size(); }
  // Throws unless every list is a permutation of [0, n_items).
  void validate(std::size_t n_items) const;
};

// Ranks items by descending score (rows are queries), ties by ascending index.
template <typename Derived>
RetrievalRun rank_by_scores(const Eigen::MatrixBase<Derived>& scores,
                            Direction direction);

std::string serialize_run(const RetrievalRun& run);
RetrievalRun deserialize_run(std::string bytes, std::string what = "run");
void save_run(const RetrievalRun& run, const std::filesystem::path& path);
RetrievalRun load_run(const std::filesystem::path& path);

struct QueryScores {
  std::vector<double> per_query;
  double mean = 0.0;
};

// Annotated relevant items of a query: G_i for images, the paired image for
// captions.
std::vector<std::size_t> gt_items(const Corpus& corpus, Direction direction,
                                  std::size_t query);

// Indicator that any GT item is in the top-k.
QueryScores recall_vse(const RetrievalRun& run, const Corpus& corpus,
                       std::size_t k);
// Fraction of GT items in the top-k.
QueryScores recall_ir(const RetrievalRun& run, const Corpus& corpus,
                      std::size_t k);
QueryScores semantic_recall(const RetrievalRun& run,
                            std::span<const ExtendedGt> ext, std::size_t k);
// Retrieved relevance mass over ideal mass of the extended set. Queries with a
// zero denominator score 0 and still count towards the mean.
QueryScores ncs(const RetrievalRun& run, std::span<const ExtendedGt> ext,
                std::size_t k);
// NCS after removing GT items from both the ranking and the candidate pool.
QueryScores ncs_non_gt(const RetrievalRun& run, const SimMatrix& sim,
                       const Corpus& corpus, std::size_t m, std::size_t k);

std::vector<ExtendedGt> extended_sets(const SimMatrix& sim, Direction direction,
                                      std::size_t m);

struct MetricCell {
  std::size_t k = 0;
  double recall_vse = 0.0;
  double recall_ir = 0.0;
  double semantic_recall = 0.0;
  double ncs = 0.0;
  double ncs_non_gt = 0.0;
};

struct AggregateOptions {
  std::vector<std::size_t> ks{1, 5, 10};
  std::optional<std::size_t> m;  // empty: m = k per cut-off
  bool gt_removed = false;       // selects Nsum(N) as the headline NCS sum
};

struct MetricReport {
  std::vector<MetricCell> i2t;  // one per k, in ks order
  std::vector<MetricCell> t2i;
  double rsum = 0.0;         // sum of 100 * R^V cells
  double nsum = 0.0;         // sum of 100 * NCS cells
  double nsum_non_gt = 0.0;  // sum of 100 * NCS cells with GT removed
  AggregateOptions options;
  std::string scorer;

  double headline_nsum() const { return options.gt_removed ? nsum_non_gt : nsum; }
  std::string to_json() const;
  std::string to_table() const;
};

MetricReport aggregate(const RetrievalRun& i2t, const RetrievalRun& t2i,
                       const Corpus& corpus, const SimMatrix& sim,
                       const AggregateOptions& options = {});

// Product-moment correlation. Throws Error(kValidation) on size mismatch,
// fewer than 2 points, or zero variance.
double pearson_r(std::span<const double> x, std::span<const double> y);

struct Judgment {
  std::string image_id;
  std::string caption_id;
  double score = 0.0;
};

// UTF-8 TSV with columns image_id, caption_id, score; a non-numeric first
// row is treated as a header.
std::vector<Judgment> parse_judgments(std::string_view text,
                                      std::string_view origin = "<memory>");
std::vector<Judgment> load_judgments(const std::filesystem::path& path);

struct Correlation {
  double r = 0.0;
  std::size_t matched = 0;
  std::size_t unmatched = 0;
};

// Joins two score lists on (image_id, caption_id) and correlates the scores.
Correlation correlate(std::span<const Judgment> human,
                      std::span<const Judgment> metric);

// ---------------------------------------------------------------------------

template <typename Derived>
RetrievalRun rank_by_scores(const Eigen::MatrixBase<Derived>& scores,
                            Direction direction) {
  RetrievalRun run;
  run.direction = direction;
  run.ranked.resize(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index q = 0; q < scores.rows(); ++q) {
    auto& list = run.ranked[static_cast<std::size_t>(q)];
    list.resize(static_cast<std::size_t>(scores.cols()));
    for (std::size_t k = 0; k < list.size(); ++k) list[k] = static_cast<std::uint32_t>(k);
    std::stable_sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) {
      return scores(q, static_cast<Eigen::Index>(a)) > scores(q, static_cast<Eigen::Index>(b));
    });
  }
  return run;
}

}  // namespace itm
