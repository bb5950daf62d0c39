#include "itm/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_set>

#include "itm/binary_io.hpp"
#include "itm/error.hpp"

namespace itm {
namespace {

// Clipped cosine; rounding can push an exact match a few ulps above 1.
double clipped_cosine(double dot, double norm_a, double norm_b) {
  return std::min(dot / (norm_a * norm_b), 1.0);
}

double length_penalty(double delta) {
  return std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
}

std::string join(const TokenSeq& tokens, std::size_t begin, std::size_t n) {
  std::string key = tokens[begin];
  for (std::size_t k = 1; k < n; ++k) {
    key.push_back(kNgramSeparator);
    key += tokens[begin + k];
  }
  return key;
}

}  // namespace

TokenSeq tokenize(std::string_view raw) {
  TokenSeq tokens;
  std::string current;
  for (char ch : raw) {
    auto c = static_cast<unsigned char>(ch);
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      current.push_back(static_cast<char>(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

NgramProfile profile(const TokenSeq& tokens) {
  NgramProfile p;
  p.length = tokens.size();
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto order = static_cast<std::size_t>(n);
    if (tokens.size() < order) break;
    for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
      ++p.counts[order - 1][join(tokens, i, order)];
    }
  }
  return p;
}

std::uint32_t DfTable::lookup(int n, std::string_view key) const {
  const auto& m = df[static_cast<std::size_t>(n - 1)];
  const auto it = m.find(std::string(key));
  return it == m.end() ? 0 : it->second;
}

double DfTable::idf(int n, std::string_view key) const {
  const double d = std::max<std::uint32_t>(lookup(n, key), 1);
  return std::log(static_cast<double>(corpus_size)) - std::log(d);
}

std::string DfTable::serialize() const {
  ByteWriter out;
  out.magic("ITDF");
  out.u32(corpus_size);
  for (const auto& order : df) {
    std::vector<std::pair<std::string_view, std::uint32_t>> sorted(
        order.begin(), order.end());
    std::sort(sorted.begin(), sorted.end());
    out.u32(static_cast<std::uint32_t>(sorted.size()));
    for (const auto& [key, count] : sorted) {
      out.str(key);
      out.u32(count);
    }
  }
  return out.bytes();
}

DfTable DfTable::deserialize(std::string bytes, std::string what) {
  ByteReader in(std::move(bytes), std::move(what));
  in.expect_magic("ITDF");
  DfTable t;
  t.corpus_size = in.u32();
  for (int n = 1; n <= kMaxOrder; ++n) {
    const std::uint32_t count = in.u32();
    auto& m = t.df[static_cast<std::size_t>(n - 1)];
    m.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
      std::string key = in.str();
      const std::uint32_t v = in.u32();
      if (v == 0 || v > t.corpus_size) {
        fail(ErrorKind::kValidation, "df table: df " + std::to_string(v) +
                                         " outside [1, corpus_size]");
      }
      m.emplace(std::move(key), v);
    }
  }
  in.expect_end();
  return t;
}

std::uint64_t DfTable::checksum() const { return fnv1a64(serialize()); }

DfTable build_df(const Corpus& corpus) {
  if (corpus.num_images() == 0) {
    fail(ErrorKind::kValidation, "build_df: empty corpus");
  }
  DfTable t;
  t.corpus_size = static_cast<std::uint32_t>(corpus.num_images());
  for (std::size_t i = 0; i < corpus.num_images(); ++i) {
    std::array<std::unordered_set<std::string>, kMaxOrder> seen;
    for (std::size_t c : corpus.gt[i]) {
      const NgramProfile p = profile(corpus.captions[c].raw_text);
      for (std::size_t n = 0; n < kMaxOrder; ++n) {
        for (const auto& kv : p.counts[n]) seen[n].insert(kv.first);
      }
    }
    for (std::size_t n = 0; n < kMaxOrder; ++n) {
      for (const auto& key : seen[n]) ++t.df[n][key];
    }
  }
  return t;
}

void save_df(const DfTable& table, const std::filesystem::path& path) {
  write_text_file(path, table.serialize());
}

DfTable load_df(const std::filesystem::path& path) {
  return DfTable::deserialize(read_text_file(path), "df table " + path.string());
}

double cider_d(const NgramProfile& candidate,
               std::span<const NgramProfile> refs, const DfTable& df) {
  if (refs.empty()) fail(ErrorKind::kValidation, "cider_d: empty reference set");

  std::array<std::map<std::string_view, double>, kMaxOrder> cand_vec;
  std::array<double, kMaxOrder> cand_norm{};
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto o = static_cast<std::size_t>(n - 1);
    for (const auto& [key, tf] : candidate.counts[o]) {
      const double w = tf * df.idf(n, key);
      cand_vec[o][key] = w;
      cand_norm[o] += w * w;
    }
    cand_norm[o] = std::sqrt(cand_norm[o]);
  }

  double total = 0.0;
  for (const NgramProfile& ref : refs) {
    const double penalty = length_penalty(static_cast<double>(candidate.length) -
                                          static_cast<double>(ref.length));
    double sum_orders = 0.0;
    for (int n = 1; n <= kMaxOrder; ++n) {
      const auto o = static_cast<std::size_t>(n - 1);
      double dot = 0.0;
      double ref_norm = 0.0;
      for (const auto& [key, tf] : ref.counts[o]) {
        const double wr = tf * df.idf(n, key);
        ref_norm += wr * wr;
        const auto it = cand_vec[o].find(key);
        if (it != cand_vec[o].end()) dot += std::min(it->second, wr) * wr;
      }
      ref_norm = std::sqrt(ref_norm);
      double val = 0.0;
      if (cand_norm[o] > 0.0 && ref_norm > 0.0) val = clipped_cosine(dot, cand_norm[o], ref_norm);
      sum_orders += val * penalty;
    }
    total += sum_orders / kMaxOrder;
  }
  return 10.0 * total / static_cast<double>(refs.size());
}

CiderScorer::CiderScorer(const Corpus& corpus, const DfTable& df,
                         ScorerOptions options)
    : corpus_(&corpus), options_(options) {
  std::unordered_map<std::string, std::uint32_t> ids;
  vecs_.resize(corpus.num_captions());
  for (std::size_t c = 0; c < corpus.num_captions(); ++c) {
    const NgramProfile p = profile(corpus.captions[c].raw_text);
    Vec& v = vecs_[c];
    v.length = static_cast<double>(p.length);
    for (int n = 1; n <= kMaxOrder; ++n) {
      const auto o = static_cast<std::size_t>(n - 1);
      double norm = 0.0;
      for (const auto& [key, tf] : p.counts[o]) {
        const auto [it, inserted] =
            ids.emplace(key, static_cast<std::uint32_t>(ids.size()));
        const double w = tf * df.idf(n, key);
        v.entries[o].push_back({it->second, w});
        norm += w * w;
      }
      std::sort(v.entries[o].begin(), v.entries[o].end(),
                [](const Entry& a, const Entry& b) { return a.id < b.id; });
      v.norm[o] = std::sqrt(norm);
    }
  }
  num_ngrams_ = ids.size();
}

double CiderScorer::phi(std::size_t image, std::size_t caption) const {
  const Vec& cand = vecs_[caption];
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t r : corpus_->gt[image]) {
    if (options_.leave_one_out && r == caption) continue;
    ++used;
    const Vec& ref = vecs_[r];
    const double penalty = length_penalty(cand.length - ref.length);
    double sum_orders = 0.0;
    for (std::size_t o = 0; o < kMaxOrder; ++o) {
      if (cand.norm[o] <= 0.0 || ref.norm[o] <= 0.0) continue;
      const auto& a = cand.entries[o];
      const auto& b = ref.entries[o];
      double dot = 0.0;
      for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
        if (a[i].id < b[j].id) {
          ++i;
        } else if (b[j].id < a[i].id) {
          ++j;
        } else {
          dot += std::min(a[i].weight, b[j].weight) * b[j].weight;
          ++i;
          ++j;
        }
      }
      sum_orders += clipped_cosine(dot, cand.norm[o], ref.norm[o]) * penalty;
    }
    total += sum_orders / kMaxOrder;
  }
  if (used == 0) return 0.0;
  return 10.0 * total / static_cast<double>(used);
}

CiderScorer::RowKernel::RowKernel(const CiderScorer& scorer)
    : scorer_(&scorer), slot_(scorer.num_ngrams(), -1) {}

void CiderScorer::RowKernel::bind(std::size_t image) {
  for (std::uint32_t id : touched_) slot_[id] = -1;
  touched_.clear();
  weights_.clear();
  const auto& gt = scorer_->corpus_->gt[image];
  refs_.assign(gt.begin(), gt.end());
  const std::size_t nr = refs_.size();
  for (std::size_t r = 0; r < nr; ++r) {
    const Vec& ref = scorer_->vecs_[refs_[r]];
    for (const auto& entries : ref.entries) {
      for (const Entry& e : entries) {
        std::int32_t s = slot_[e.id];
        if (s < 0) {
          s = static_cast<std::int32_t>(touched_.size());
          slot_[e.id] = s;
          touched_.push_back(e.id);
          weights_.resize(weights_.size() + nr, 0.0);
        }
        weights_[static_cast<std::size_t>(s) * nr + r] = e.weight;
      }
    }
  }
}

double CiderScorer::RowKernel::score(std::size_t caption) const {
  const Vec& cand = scorer_->vecs_[caption];
  const std::size_t nr = refs_.size();
  constexpr std::size_t kMaxRefsOnStack = 16;
  std::array<std::array<double, kMaxOrder>, kMaxRefsOnStack> stack_dots{};
  std::vector<std::array<double, kMaxOrder>> heap_dots;
  std::array<double, kMaxOrder>* dots = stack_dots.data();
  if (nr > kMaxRefsOnStack) {
    heap_dots.assign(nr, {});
    dots = heap_dots.data();
  }

  for (std::size_t o = 0; o < kMaxOrder; ++o) {
    for (const Entry& e : cand.entries[o]) {
      const std::int32_t s = slot_[e.id];
      if (s < 0) continue;
      const double* w = &weights_[static_cast<std::size_t>(s) * nr];
      for (std::size_t r = 0; r < nr; ++r) {
        if (w[r] != 0.0) dots[r][o] += std::min(e.weight, w[r]) * w[r];
      }
    }
  }

  const bool loo = scorer_->options_.leave_one_out;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t r = 0; r < nr; ++r) {
    if (loo && refs_[r] == caption) continue;
    ++used;
    const Vec& ref = scorer_->vecs_[refs_[r]];
    const double penalty = length_penalty(cand.length - ref.length);
    double sum_orders = 0.0;
    for (std::size_t o = 0; o < kMaxOrder; ++o) {
      if (cand.norm[o] <= 0.0 || ref.norm[o] <= 0.0) continue;
      sum_orders += clipped_cosine(dots[r][o], cand.norm[o], ref.norm[o]) * penalty;
    }
    total += sum_orders / kMaxOrder;
  }
  if (used == 0) return 0.0;
  return 10.0 * total / static_cast<double>(used);
}

}  // namespace itm
