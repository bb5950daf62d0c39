#pragma once

// Central finite-difference check of the analytic trainer gradient.

#include <cmath>
#include <random>

#include "itm/samloss.hpp"
#include "itm/trainer.hpp"

namespace itm::oracle {

struct GradCheck {
  bool evaluated = false;  // false when a hinge sits too close to its kink
  double rel_error = 0.0;
};

// Smallest |hinge argument| over every hinge of the batch.
inline double kink_distance(const Model& model, const Batch& batch, const SamConfig& cfg) {
  const Eigen::MatrixXd s = batch_sims(model, batch);
  const auto& t = batch.triplets;
  double best = 1e300;
  for (std::size_t p = 0; p < t.size(); ++p) {
    const std::size_t m = t.sam_negatives.caption[p], k = t.sam_negatives.image[p];
    if (cfg.sam_weight > 0) {
      const AdaptiveMargins a = adaptive_margins(t.phi(p, p), t.phi(p, m), t.phi(p, k),
                                                 cfg.tau, cfg.clamp_negative_margin);
      best = std::min(best, std::abs(a.i2t + s(p, m) - s(p, p)));
      best = std::min(best, std::abs(a.t2i + s(k, p) - s(p, p)));
    }
    if (cfg.keep_original_triplet) {
      const std::size_t hm = t.hard_negatives.caption[p], hk = t.hard_negatives.image[p];
      best = std::min(best, std::abs(cfg.fixed_margin + s(p, hm) - s(p, p)));
      best = std::min(best, std::abs(cfg.fixed_margin + s(hk, p) - s(p, p)));
    }
  }
  return best;
}

inline GradCheck check_gradient(const Model& model, const Batch& batch, const SamConfig& cfg,
                                double step = 1e-5, double min_kink = 1e-3) {
  GradCheck out;
  if (kink_distance(model, batch, cfg) < min_kink) return out;
  const LossGrad lg = loss_and_grad(model, batch, cfg);
  auto fd = [&](bool image) {
    const Eigen::MatrixXd& w = image ? model.w_img : model.w_cap;
    Eigen::MatrixXd g(w.rows(), w.cols());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        Model up = model, dn = model;
        (image ? up.w_img : up.w_cap)(r, c) += step;
        (image ? dn.w_img : dn.w_cap)(r, c) -= step;
        g(r, c) = (batch_loss(up, batch, cfg) - batch_loss(dn, batch, cfg)) / (2 * step);
      }
    }
    return g;
  };
  const Eigen::MatrixXd fi = fd(true), fc = fd(false);
  const double diff = std::sqrt((lg.grad_img - fi).squaredNorm() + (lg.grad_cap - fc).squaredNorm());
  const double scale = std::max({std::sqrt(fi.squaredNorm() + fc.squaredNorm()),
                                 std::sqrt(lg.grad_img.squaredNorm() + lg.grad_cap.squaredNorm()),
                                 1e-12});
  out.evaluated = true;
  out.rel_error = diff / scale;
  return out;
}

// Random model and batch with random phi values and negatives chosen by
// `strategy` from the model similarities.
inline std::pair<Model, Batch> random_problem(std::mt19937_64& rng, Strategy strategy,
                                              std::size_t b = 6, Eigen::Index d = 4,
                                              Eigen::Index d_img = 7, Eigen::Index d_cap = 5) {
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 4);
  Model model = Model::random(d, d_img, d_cap, rng);
  Batch batch;
  batch.image_features = Eigen::MatrixXd::NullaryExpr(b, d_img, [&] { return g(rng); });
  batch.caption_features = Eigen::MatrixXd::NullaryExpr(b, d_cap, [&] { return g(rng); });
  batch.triplets.phi = Eigen::MatrixXd::NullaryExpr(b, b, [&] { return u(rng); });
  select_negatives(model, batch, strategy, rng);
  return {std::move(model), std::move(batch)};
}

}  // namespace itm::oracle
