#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace itm {

// In-batch negative selection: hardest (closest), softest (furthest), or
// uniformly random off-diagonal item.
enum class Strategy { kRandom, kHardNegative, kSoftNegative };

std::string_view to_string(Strategy strategy);
Strategy parse_strategy(std::string_view text);  // "RS" | "HN" | "SN"

struct SamConfig {
  double tau = 5.0;
  double fixed_margin = 0.2;
  double sam_weight = 5.0;
  bool keep_original_triplet = true;
  Strategy strategy = Strategy::kSoftNegative;
  bool clamp_negative_margin = false;

  void validate() const;
};

struct AdaptiveMargins {
  double i2t;
  double t2i;
};

// ((phi_pp - phi_pm) / tau, (phi_pp - phi_pk) / tau), optionally clamped at 0.
AdaptiveMargins adaptive_margins(double phi_pp, double phi_pm, double phi_pk,
                                 double tau, bool clamp = false);

// Two-sided hinge with a fixed margin for one anchor.
double fixed_triplet_loss(double sim_pos, double sim_neg_caption,
                          double sim_neg_image, double alpha);

// Negatives per anchor p of a B x B similarity block S(image, caption):
// caption[p] is chosen along row p, image[p] along column p, never p itself.
struct Negatives {
  std::vector<std::size_t> caption;
  std::vector<std::size_t> image;
};

template <typename Derived>
Negatives sample_negatives(const Eigen::MatrixBase<Derived>& sims,
                           Strategy strategy, std::mt19937_64& rng);
Negatives sample_negatives(const Eigen::MatrixXd& sims, Strategy strategy,
                           std::uint64_t seed);

// B anchors. phi(p, j) = phi(G_p, c_j) where c_j is the batch caption paired
// with batch image j, so phi_pm = phi(p, caption[p]) and
// phi_pk = phi(p, image[p]).
struct TripletBatch {
  Eigen::MatrixXd phi;
  Negatives sam_negatives;
  Negatives hard_negatives;  // used by the original triplet term

  std::size_t size() const { return static_cast<std::size_t>(phi.rows()); }
};

struct LossBreakdown {
  double sam = 0.0;      // mean over anchors of the adaptive-margin hinge
  double triplet = 0.0;  // mean over anchors of the fixed-margin hinge
  double total = 0.0;    // sam_weight * sam + (keep_original_triplet ? triplet : 0)
};

// `sims` is the B x B block psi(e_image_p, e_caption_j).
LossBreakdown sam_loss(const TripletBatch& batch, const Eigen::MatrixXd& sims,
                       const SamConfig& config);

// d total / d sims, same shape as sims. Hinges at exactly zero are inactive.
Eigen::MatrixXd sam_loss_grad(const TripletBatch& batch,
                              const Eigen::MatrixXd& sims,
                              const SamConfig& config);

// ---------------------------------------------------------------------------

template <typename Derived>
Negatives sample_negatives(const Eigen::MatrixBase<Derived>& sims,
                           Strategy strategy, std::mt19937_64& rng) {
  const auto b = static_cast<std::size_t>(sims.rows());
  Negatives out;
  out.caption.resize(b);
  out.image.resize(b);
  // Strict comparisons keep the lowest index on ties.
  auto pick = [&](std::size_t p, auto value) {
    if (strategy == Strategy::kRandom) {
      std::uniform_int_distribution<std::size_t> dist(0, b - 2);
      const std::size_t r = dist(rng);
      return r >= p ? r + 1 : r;
    }
    std::size_t best = p == 0 ? 1 : 0;
    for (std::size_t j = best + 1; j < b; ++j) {
      if (j == p) continue;
      const bool better = strategy == Strategy::kHardNegative
                              ? value(j) > value(best)
                              : value(j) < value(best);
      if (better) best = j;
    }
    return best;
  };
  for (std::size_t p = 0; p < b; ++p) {
    const auto pi = static_cast<Eigen::Index>(p);
    out.caption[p] = pick(p, [&](std::size_t j) {
      return sims(pi, static_cast<Eigen::Index>(j));
    });
    out.image[p] = pick(p, [&](std::size_t j) {
      return sims(static_cast<Eigen::Index>(j), pi);
    });
  }
  return out;
}

}  // namespace itm
