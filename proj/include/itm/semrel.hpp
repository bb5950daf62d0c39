#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "itm/corpus.hpp"
#include "itm/ngram.hpp"

namespace itm {

using SimValues =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SimMeta {
  std::string scorer{kScorerTag};
  std::string tokenizer{kTokenizerTag};
  std::string df_checksum;  // hex FNV-1a of the DfTable bytes
  bool leave_one_out = false;

  bool operator==(const SimMeta&) const = default;
};

// values(i, j) = phi(G_i, c_j): semantic relevance of caption j to image i.
struct SimMatrix {
  SimValues values;
  SimMeta meta;

  std::size_t n_images() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_captions() const { return static_cast<std::size_t>(values.cols()); }
};

struct SimOptions {
  std::size_t threads = 0;  // 0: resolve_threads()
  ScorerOptions scorer;
};

SimMatrix build_sim_matrix(const Corpus& corpus, const DfTable& df,
                           SimOptions options = {});

// Writes the ITSM file row block by row block without materializing the
// whole matrix. Produces the same bytes as save_sim(build_sim_matrix(...)).
void stream_sim_matrix(const Corpus& corpus, const DfTable& df,
                       const std::filesystem::path& path,
                       SimOptions options = {});

void save_sim(const SimMatrix& sim, const std::filesystem::path& path);
std::string serialize_sim(const SimMatrix& sim);
// With `expected_df_checksum`, a mismatch against the stored meta throws a
// provenance error.
SimMatrix load_sim(const std::filesystem::path& path,
                   std::optional<std::string> expected_df_checksum = {});
SimMatrix deserialize_sim(std::string bytes,
                          std::optional<std::string> expected_df_checksum = {},
                          std::string what = "sim matrix");

enum class QueryKind { kImage, kCaption };

struct RankedItem {
  std::size_t index;
  double value;

  bool operator==(const RankedItem&) const = default;
};

// The m items most related to a query under the similarity matrix, sorted by
// value descending with ascending index as tie-break.
struct ExtendedGt {
  QueryKind kind = QueryKind::kImage;
  std::size_t query = 0;
  std::size_t m = 0;
  std::vector<RankedItem> items;
};

ExtendedGt extended_gt(const SimMatrix& sim, QueryKind kind, std::size_t query,
                       std::size_t m);
// Same, but items listed in `forced` rank ahead of every other item (each
// group keeps the value/index order). Used to pin the annotated GT inside the
// extended set.
ExtendedGt extended_gt(const SimMatrix& sim, QueryKind kind, std::size_t query,
                       std::size_t m, std::span<const std::size_t> forced);

}  // namespace itm
