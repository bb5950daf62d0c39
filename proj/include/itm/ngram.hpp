#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "itm/corpus.hpp"

namespace itm {

inline constexpr int kMaxOrder = 4;
// Tokens inside an n-gram key are joined with the ASCII unit separator.
inline constexpr char kNgramSeparator = '\x1f';
inline constexpr std::string_view kTokenizerTag = "lower-alnum-v1";
inline constexpr std::string_view kScorerTag = "cider-d";

using TokenSeq = std::vector<std::string>;

// Lowercase ASCII, map every byte outside [a-z0-9] to a space, split.
TokenSeq tokenize(std::string_view raw);

using NgramCounts = std::unordered_map<std::string, std::uint32_t>;

struct NgramProfile {
  std::array<NgramCounts, kMaxOrder> counts;  // counts[n - 1] holds order n
  std::size_t length = 0;

  const NgramCounts& order(int n) const { return counts[n - 1]; }
};

NgramProfile profile(const TokenSeq& tokens);
inline NgramProfile profile(std::string_view raw) {
  return profile(tokenize(raw));
}

// Document frequencies: df counts images whose reference set contains the
// n-gram, not occurrences.
struct DfTable {
  std::array<std::unordered_map<std::string, std::uint32_t>, kMaxOrder> df;
  std::uint32_t corpus_size = 0;

  std::uint32_t lookup(int n, std::string_view key) const;
  // ln(corpus_size) - ln(max(df, 1)); absent n-grams get df = 1.
  double idf(int n, std::string_view key) const;

  // Canonical ITDF bytes (entries sorted by key within each order).
  std::string serialize() const;
  static DfTable deserialize(std::string bytes, std::string what = "df table");
  std::uint64_t checksum() const;
};

DfTable build_df(const Corpus& corpus);
void save_df(const DfTable& table, const std::filesystem::path& path);
DfTable load_df(const std::filesystem::path& path);

inline constexpr double kCiderSigma = 6.0;

// CIDEr-D of one candidate against a reference set, in [0, 10].
double cider_d(const NgramProfile& candidate,
               std::span<const NgramProfile> refs, const DfTable& df);

struct ScorerOptions {
  // Remove the scored caption from its own image's reference set.
  bool leave_one_out = false;
};

// Precomputed tf-idf vectors for every caption of a corpus, with n-grams
// interned to dense ids. phi(i, j) is CIDEr-D of caption j against the
// captions of image i. Immutable after construction; safe for concurrent use.
class CiderScorer {
 public:
  CiderScorer(const Corpus& corpus, const DfTable& df,
              ScorerOptions options = {});

  const Corpus& corpus() const { return *corpus_; }
  const ScorerOptions& options() const { return options_; }
  std::size_t num_ngrams() const { return num_ngrams_; }

  double phi(std::size_t image, std::size_t caption) const;

  // Scores many captions against one image's reference set. Keeps a dense
  // scratch table sized to the n-gram vocabulary; one kernel per thread.
  class RowKernel {
   public:
    explicit RowKernel(const CiderScorer& scorer);
    void bind(std::size_t image);
    double score(std::size_t caption) const;

   private:
    const CiderScorer* scorer_;
    std::vector<std::int32_t> slot_;
    std::vector<std::uint32_t> touched_;
    std::vector<double> weights_;  // [entry * num_refs + ref]
    std::vector<std::size_t> refs_;
  };

 private:
  struct Entry {
    std::uint32_t id;
    double weight;
  };
  struct Vec {
    std::array<std::vector<Entry>, kMaxOrder> entries;  // sorted by id
    std::array<double, kMaxOrder> norm{};
    double length = 0.0;
  };

  const Corpus* corpus_;
  ScorerOptions options_;
  std::size_t num_ngrams_ = 0;
  std::vector<Vec> vecs_;
};

}  // namespace itm
