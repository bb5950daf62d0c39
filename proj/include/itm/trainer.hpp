#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "itm/corpus.hpp"
#include "itm/error.hpp"
#include "itm/metrics.hpp"
#include "itm/ngram.hpp"
#include "itm/samloss.hpp"
#include "itm/semrel.hpp"

namespace itm {

// One linear projection per modality followed by L2 normalization; the joint
// similarity is the cosine of the two embeddings.
template <typename Scalar>
struct EmbeddingModel {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Matrix w_img;  // d x D_img
  Matrix w_cap;  // d x D_cap

  Eigen::Index dim() const { return w_img.rows(); }
  bool operator==(const EmbeddingModel&) const = default;

  static EmbeddingModel random(Eigen::Index d, Eigen::Index d_img,
                               Eigen::Index d_cap, std::mt19937_64& rng);
};

using Model = EmbeddingModel<double>;

// Rows of `features` projected by `weights` (d x D) and normalized to unit
// length. A zero projection maps to the first basis vector.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> embed(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& weights,
    const Eigen::MatrixBase<Derived>& features) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> e =
      features.template cast<Scalar>() * weights.transpose();
  for (Eigen::Index r = 0; r < e.rows(); ++r) {
    const Scalar n = e.row(r).norm();
    if (n > Scalar(0)) {
      e.row(r) /= n;
    } else {
      e.row(r).setZero();
      e(r, 0) = Scalar(1);
    }
  }
  return e;
}

template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> embed(
    const EmbeddingModel<Scalar>& model, const Eigen::MatrixBase<Derived>& features,
    Modality modality) {
  const auto& w = modality == Modality::kImage ? model.w_img : model.w_cap;
  if (features.cols() != w.cols()) {
    fail(ErrorKind::kValidation, "embed: feature dimension " +
                                     std::to_string(features.cols()) +
                                     " does not match model input " +
                                     std::to_string(w.cols()));
  }
  return embed<Scalar>(w, features);
}

struct Dataset {
  Corpus corpus;
  FeatureMatrix images;
  FeatureMatrix captions;

  void validate() const;
};

Dataset subset(const Dataset& data, std::span<const std::size_t> images,
               Split split);

struct DatasetSplits {
  Dataset train;
  Dataset val;
};

// Synthetic corpus with the last `val_per_topic` images of each topic held
// out for validation.
DatasetSplits synth_splits(std::uint64_t seed, std::size_t topics,
                           std::size_t pairs_per_topic, std::size_t dim,
                           std::size_t val_per_topic);

// A mini-batch of B (image, caption) pairs and the semantic scores between
// every batch image's reference set and every batch caption.
struct Batch {
  Eigen::MatrixXd image_features;    // B x D_img
  Eigen::MatrixXd caption_features;  // B x D_cap
  TripletBatch triplets;
};

// Model similarity block psi(image p, caption j) for the batch.
Eigen::MatrixXd batch_sims(const Model& model, const Batch& batch);

// Picks SAM negatives with `strategy` and the original-triplet negatives with
// hard-negative mining, both from the current model similarities.
void select_negatives(const Model& model, Batch& batch, Strategy strategy,
                      std::mt19937_64& rng);

struct LossGrad {
  LossBreakdown loss;
  Eigen::MatrixXd grad_img;
  Eigen::MatrixXd grad_cap;
};

// Loss with negatives held fixed, and its gradient w.r.t. both projections.
LossGrad loss_and_grad(const Model& model, const Batch& batch,
                       const SamConfig& config);
double batch_loss(const Model& model, const Batch& batch, const SamConfig& config);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 0.5;
  double lr_decay_factor = 0.1;
  std::size_t lr_decay_epoch = 0;  // 0: no decay
  std::uint64_t seed = 1;
  double data_fraction = 1.0;
  std::size_t joint_dim = 32;
  SamConfig sam;
  std::vector<std::size_t> eval_ks{1, 5, 10};
  std::optional<std::size_t> eval_m;  // empty: m = k

  void validate() const;
  double rate_for_epoch(std::size_t epoch) const;  // epochs count from 1
};

struct EpochReport {
  std::size_t epoch = 0;  // 0 is the random initialization
  double mean_loss = 0.0;
  MetricReport val;
};

struct TrainResult {
  Model best;
  Model last;
  std::size_t best_epoch = 0;
  std::vector<EpochReport> history;
};

// Keeps round(fraction * |I|) images (at least 1), chosen with the seed, each
// with all of its captions.
std::vector<std::size_t> sample_images(std::size_t n_images, double fraction,
                                       std::uint64_t seed);

// Deterministic gradient descent. Returns the best model by validation Nsum.
// Throws Error(kNumeric) naming the epoch and batch on a non-finite loss.
TrainResult train(const Dataset& train_data, const Dataset& val_data,
                  const SimMatrix& val_sim, const TrainConfig& config);

// psi for every (image, caption) of the dataset.
Eigen::MatrixXd score_matrix(const Model& model, const Dataset& data);
MetricReport evaluate(const Model& model, const Dataset& data,
                      const SimMatrix& sim, const AggregateOptions& options);

struct SweepRow {
  double fraction = 0.0;
  std::string variant;  // "sam+triplet" or "triplet"
  std::uint64_t seed = 0;
  double nsum = 0.0;  // best validation Nsum
  double rsum = 0.0;  // Rsum at the same epoch
};

// Reduced-data experiment: for every fraction and seed, trains the configured
// SAM + original triplet model and a fixed-margin-only baseline.
std::vector<SweepRow> reduced_data_sweep(const Dataset& train_data,
                                         const Dataset& val_data,
                                         const SimMatrix& val_sim,
                                         const TrainConfig& base,
                                         std::span<const double> fractions,
                                         std::span<const std::uint64_t> seeds);

std::string serialize_model(const Model& model);
Model deserialize_model(std::string bytes, std::string what = "checkpoint");
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

template <typename Scalar>
EmbeddingModel<Scalar> EmbeddingModel<Scalar>::random(Eigen::Index d,
                                                      Eigen::Index d_img,
                                                      Eigen::Index d_cap,
                                                      std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](Eigen::Index cols) {
    Matrix m(d, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = Scalar(gauss(rng) * scale);
    return m;
  };
  EmbeddingModel out;
  out.w_img = draw(d_img);
  out.w_cap = draw(d_cap);
  return out;
}

}  // namespace itm
