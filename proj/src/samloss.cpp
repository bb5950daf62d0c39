#include "itm/samloss.hpp"

#include <algorithm>
#include <string>

#include "itm/error.hpp"

namespace itm {

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::kRandom: return "RS";
    case Strategy::kHardNegative: return "HN";
    case Strategy::kSoftNegative: return "SN";
  }
  return "SN";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "RS") return Strategy::kRandom;
  if (text == "HN") return Strategy::kHardNegative;
  if (text == "SN") return Strategy::kSoftNegative;
  fail(ErrorKind::kValidation, "unknown sampling strategy \"" + std::string(text) +
                                   "\" (expected RS, HN or SN)");
}

void SamConfig::validate() const {
  if (!(tau > 0.0)) fail(ErrorKind::kValidation, "sam: tau must be > 0");
  if (!(fixed_margin >= 0.0)) fail(ErrorKind::kValidation, "sam: fixed_margin must be >= 0");
  if (!(sam_weight >= 0.0)) fail(ErrorKind::kValidation, "sam: sam_weight must be >= 0");
}

AdaptiveMargins adaptive_margins(double phi_pp, double phi_pm, double phi_pk,
                                 double tau, bool clamp) {
  if (!(tau > 0.0)) fail(ErrorKind::kValidation, "adaptive_margins: tau must be > 0");
  AdaptiveMargins m{(phi_pp - phi_pm) / tau, (phi_pp - phi_pk) / tau};
  if (clamp) {
    m.i2t = std::max(m.i2t, 0.0);
    m.t2i = std::max(m.t2i, 0.0);
  }
  return m;
}

double fixed_triplet_loss(double sim_pos, double sim_neg_caption,
                          double sim_neg_image, double alpha) {
  return std::max(alpha + sim_neg_caption - sim_pos, 0.0) +
         std::max(alpha + sim_neg_image - sim_pos, 0.0);
}

Negatives sample_negatives(const Eigen::MatrixXd& sims, Strategy strategy,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_negatives(sims, strategy, rng);
}

namespace {

// Visits each active hinge as (weight, positive cell, negative cell).
template <typename Visit>
void for_each_active_hinge(const TripletBatch& batch, const Eigen::MatrixXd& s,
                           const SamConfig& cfg, Visit&& visit) {
  const std::size_t b = batch.size();
  if (static_cast<std::size_t>(s.rows()) != b || static_cast<std::size_t>(s.cols()) != b) {
    fail(ErrorKind::kValidation, "sam_loss: sims and phi must both be B x B");
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t p = 0; p < b; ++p) {
    const auto pi = static_cast<Eigen::Index>(p);
    const double pos = s(pi, pi);
    {
      const auto m = static_cast<Eigen::Index>(batch.sam_negatives.caption[p]);
      const auto k = static_cast<Eigen::Index>(batch.sam_negatives.image[p]);
      const AdaptiveMargins a =
          adaptive_margins(batch.phi(pi, pi), batch.phi(pi, m), batch.phi(pi, k),
                           cfg.tau, cfg.clamp_negative_margin);
      const double w = cfg.sam_weight * inv_b;
      const double h1 = a.i2t + s(pi, m) - pos;
      const double h2 = a.t2i + s(k, pi) - pos;
      if (h1 > 0.0) visit(true, w, h1, pi, pi, pi, m);
      if (h2 > 0.0) visit(true, w, h2, pi, pi, k, pi);
    }
    if (cfg.keep_original_triplet) {
      const auto m = static_cast<Eigen::Index>(batch.hard_negatives.caption[p]);
      const auto k = static_cast<Eigen::Index>(batch.hard_negatives.image[p]);
      const double h1 = cfg.fixed_margin + s(pi, m) - pos;
      const double h2 = cfg.fixed_margin + s(k, pi) - pos;
      if (h1 > 0.0) visit(false, inv_b, h1, pi, pi, pi, m);
      if (h2 > 0.0) visit(false, inv_b, h2, pi, pi, k, pi);
    }
  }
}

}  // namespace

LossBreakdown sam_loss(const TripletBatch& batch, const Eigen::MatrixXd& sims,
                       const SamConfig& config) {
  LossBreakdown out;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for_each_active_hinge(batch, sims, config,
                        [&](bool is_sam, double, double hinge, Eigen::Index,
                            Eigen::Index, Eigen::Index, Eigen::Index) {
                          (is_sam ? out.sam : out.triplet) += hinge * inv_b;
                        });
  out.total = config.sam_weight * out.sam +
              (config.keep_original_triplet ? out.triplet : 0.0);
  return out;
}

Eigen::MatrixXd sam_loss_grad(const TripletBatch& batch,
                              const Eigen::MatrixXd& sims,
                              const SamConfig& config) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(sims.rows(), sims.cols());
  for_each_active_hinge(batch, sims, config,
                        [&](bool, double w, double, Eigen::Index pr, Eigen::Index pc,
                            Eigen::Index nr, Eigen::Index nc) {
                          g(pr, pc) -= w;
                          g(nr, nc) += w;
                        });
  return g;
}

}  // namespace itm
