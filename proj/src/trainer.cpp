#include "itm/trainer.hpp"

#include <algorithm>
#include <numeric>

#include "itm/binary_io.hpp"
#include "itm/error.hpp"

namespace itm {
namespace {

// Independent generator streams derived from the run seed.
enum Stream : std::uint64_t { kInit = 1, kSubsample = 2, kShuffle = 3, kNegatives = 4 };

std::mt19937_64 stream(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  return std::mt19937_64(seq);
}

// Backpropagates d loss / d e through e = u / |u| and u = W x for every row.
Eigen::MatrixXd project_grad(const Eigen::MatrixXd& weights,
                             const Eigen::MatrixXd& features,
                             const Eigen::MatrixXd& embedded,
                             const Eigen::MatrixXd& grad_embedded) {
  const Eigen::MatrixXd u = features * weights.transpose();
  Eigen::MatrixXd grad_u(u.rows(), u.cols());
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    const double n = u.row(r).norm();
    if (n > 0.0) {
      const auto e = embedded.row(r);
      const auto g = grad_embedded.row(r);
      grad_u.row(r) = (g - e * e.dot(g)) / n;
    } else {
      grad_u.row(r).setZero();
    }
  }
  return grad_u.transpose() * features;
}

bool all_finite(const Model& m) {
  return m.w_img.allFinite() && m.w_cap.allFinite();
}

}  // namespace

void Dataset::validate() const {
  corpus.validate();
  if (static_cast<std::size_t>(images.rows()) != corpus.num_images() ||
      static_cast<std::size_t>(captions.rows()) != corpus.num_captions()) {
    fail(ErrorKind::kValidation, "dataset: feature rows do not match corpus");
  }
}

Dataset subset(const Dataset& data, std::span<const std::size_t> images,
               Split split) {
  CorpusSubset sub = subset_images(data.corpus, images, split);
  Dataset out;
  out.images = gather_rows(data.images, images);
  out.captions = gather_rows(data.captions, sub.caption_origin);
  out.corpus = std::move(sub.corpus);
  return out;
}

DatasetSplits synth_splits(std::uint64_t seed, std::size_t topics,
                           std::size_t pairs_per_topic, std::size_t dim,
                           std::size_t val_per_topic) {
  if (val_per_topic == 0 || val_per_topic >= pairs_per_topic) {
    fail(ErrorKind::kValidation,
         "synth_splits: val_per_topic must be in [1, pairs_per_topic)");
  }
  SyntheticData syn = synth_corpus(seed, topics, pairs_per_topic, dim);
  Dataset all{std::move(syn.corpus), std::move(syn.image_features),
              std::move(syn.caption_features)};
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> val_ids;
  for (std::size_t t = 0; t < topics; ++t) {
    for (std::size_t p = 0; p < pairs_per_topic; ++p) {
      const std::size_t i = t * pairs_per_topic + p;
      (p + val_per_topic < pairs_per_topic ? train_ids : val_ids).push_back(i);
    }
  }
  return {subset(all, train_ids, Split::kTrain), subset(all, val_ids, Split::kVal)};
}

Eigen::MatrixXd batch_sims(const Model& model, const Batch& batch) {
  const Eigen::MatrixXd ei = embed(model, batch.image_features, Modality::kImage);
  const Eigen::MatrixXd ec = embed(model, batch.caption_features, Modality::kCaption);
  return ei * ec.transpose();
}

void select_negatives(const Model& model, Batch& batch, Strategy strategy,
                      std::mt19937_64& rng) {
  const Eigen::MatrixXd s = batch_sims(model, batch);
  batch.triplets.sam_negatives = sample_negatives(s, strategy, rng);
  batch.triplets.hard_negatives = sample_negatives(s, Strategy::kHardNegative, rng);
}

LossGrad loss_and_grad(const Model& model, const Batch& batch,
                       const SamConfig& config) {
  const Eigen::MatrixXd ei = embed(model, batch.image_features, Modality::kImage);
  const Eigen::MatrixXd ec = embed(model, batch.caption_features, Modality::kCaption);
  const Eigen::MatrixXd s = ei * ec.transpose();

  LossGrad out;
  out.loss = sam_loss(batch.triplets, s, config);
  const Eigen::MatrixXd gs = sam_loss_grad(batch.triplets, s, config);
  out.grad_img = project_grad(model.w_img, batch.image_features, ei, gs * ec);
  out.grad_cap = project_grad(model.w_cap, batch.caption_features, ec, gs.transpose() * ei);
  return out;
}

double batch_loss(const Model& model, const Batch& batch, const SamConfig& config) {
  return sam_loss(batch.triplets, batch_sims(model, batch), config).total;
}

void TrainConfig::validate() const {
  sam.validate();
  if (batch_size < 2) fail(ErrorKind::kValidation, "train: batch_size must be >= 2");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) {
    fail(ErrorKind::kValidation, "train: data_fraction must be in (0, 1]");
  }
  if (joint_dim < 2) fail(ErrorKind::kValidation, "train: joint_dim must be >= 2");
  if (!(learning_rate > 0.0)) fail(ErrorKind::kValidation, "train: learning_rate must be > 0");
  if (eval_ks.empty()) fail(ErrorKind::kValidation, "train: eval_ks is empty");
}

double TrainConfig::rate_for_epoch(std::size_t epoch) const {
  if (lr_decay_epoch > 0 && epoch > lr_decay_epoch) {
    return learning_rate * lr_decay_factor;
  }
  return learning_rate;
}

std::vector<std::size_t> sample_images(std::size_t n_images, double fraction,
                                       std::uint64_t seed) {
  std::vector<std::size_t> ids(n_images);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  if (fraction >= 1.0) return ids;
  const auto keep = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_images))),
      1, n_images);
  auto rng = stream(seed, kSubsample);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(keep);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Eigen::MatrixXd score_matrix(const Model& model, const Dataset& data) {
  const Eigen::MatrixXd ei = embed(model, data.images.data, Modality::kImage);
  const Eigen::MatrixXd ec = embed(model, data.captions.data, Modality::kCaption);
  return ei * ec.transpose();
}

MetricReport evaluate(const Model& model, const Dataset& data,
                      const SimMatrix& sim, const AggregateOptions& options) {
  const Eigen::MatrixXd scores = score_matrix(model, data);
  const RetrievalRun i2t = rank_by_scores(scores, Direction::kI2T);
  const RetrievalRun t2i = rank_by_scores(scores.transpose(), Direction::kT2I);
  return aggregate(i2t, t2i, data.corpus, sim, options);
}

TrainResult train(const Dataset& train_data, const Dataset& val_data,
                  const SimMatrix& val_sim, const TrainConfig& config) {
  config.validate();
  train_data.validate();
  val_data.validate();

  const std::vector<std::size_t> kept =
      sample_images(train_data.corpus.num_images(), config.data_fraction, config.seed);
  const Dataset data = subset(train_data, kept, Split::kTrain);
  const DfTable df = build_df(data.corpus);
  const CiderScorer scorer(data.corpus, df);

  const Eigen::MatrixXd img_feats = data.images.data.cast<double>();
  const Eigen::MatrixXd cap_feats = data.captions.data.cast<double>();

  auto init_rng = stream(config.seed, kInit);
  auto shuffle_rng = stream(config.seed, kShuffle);
  auto negative_rng = stream(config.seed, kNegatives);

  Model model = Model::random(static_cast<Eigen::Index>(config.joint_dim),
                              img_feats.cols(), cap_feats.cols(), init_rng);

  AggregateOptions eval_opts;
  eval_opts.ks = config.eval_ks;
  eval_opts.m = config.eval_m;

  TrainResult result;
  result.history.push_back({0, 0.0, evaluate(model, val_data, val_sim, eval_opts)});
  result.best = model;
  double best_nsum = result.history.back().val.nsum;

  std::vector<std::size_t> order(data.corpus.num_captions());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t b_max = config.batch_size;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.rate_for_epoch(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += b_max) {
      const std::size_t b = std::min(b_max, order.size() - start);
      if (b < 2) break;
      Batch batch;
      batch.image_features.resize(static_cast<Eigen::Index>(b), img_feats.cols());
      batch.caption_features.resize(static_cast<Eigen::Index>(b), cap_feats.cols());
      batch.triplets.phi.resize(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
      for (std::size_t p = 0; p < b; ++p) {
        const std::size_t cap = order[start + p];
        const auto row = static_cast<Eigen::Index>(p);
        batch.caption_features.row(row) = cap_feats.row(static_cast<Eigen::Index>(cap));
        batch.image_features.row(row) =
            img_feats.row(static_cast<Eigen::Index>(data.corpus.image_of(cap)));
      }
      for (std::size_t p = 0; p < b; ++p) {
        const std::size_t image = data.corpus.image_of(order[start + p]);
        for (std::size_t j = 0; j < b; ++j) {
          batch.triplets.phi(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) =
              scorer.phi(image, order[start + j]);
        }
      }
      select_negatives(model, batch, config.sam.strategy, negative_rng);
      const LossGrad lg = loss_and_grad(model, batch, config.sam);
      if (!std::isfinite(lg.loss.total) || !lg.grad_img.allFinite() ||
          !lg.grad_cap.allFinite()) {
        fail(ErrorKind::kNumeric, "training diverged at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batches));
      }
      model.w_img -= lr * lg.grad_img;
      model.w_cap -= lr * lg.grad_cap;
      if (!all_finite(model)) {
        fail(ErrorKind::kNumeric, "non-finite weights at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batches));
      }
      loss_sum += lg.loss.total;
      ++batches;
    }
    EpochReport rep{epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0,
                    evaluate(model, val_data, val_sim, eval_opts)};
    if (rep.val.nsum > best_nsum) {
      best_nsum = rep.val.nsum;
      result.best = model;
      result.best_epoch = epoch;
    }
    result.history.push_back(std::move(rep));
  }
  result.last = model;
  return result;
}

std::vector<SweepRow> reduced_data_sweep(const Dataset& train_data,
                                         const Dataset& val_data,
                                         const SimMatrix& val_sim,
                                         const TrainConfig& base,
                                         std::span<const double> fractions,
                                         std::span<const std::uint64_t> seeds) {
  std::vector<SweepRow> rows;
  for (double fraction : fractions) {
    for (std::uint64_t seed : seeds) {
      for (const bool with_sam : {true, false}) {
        TrainConfig cfg = base;
        cfg.data_fraction = fraction;
        cfg.seed = seed;
        cfg.sam.keep_original_triplet = true;
        if (!with_sam) cfg.sam.sam_weight = 0.0;
        const TrainResult r = train(train_data, val_data, val_sim, cfg);
        const MetricReport& best = r.history[r.best_epoch].val;
        rows.push_back({fraction, with_sam ? "sam+triplet" : "triplet", seed,
                        best.nsum, best.rsum});
      }
    }
  }
  return rows;
}

std::string serialize_model(const Model& model) {
  if (model.w_img.rows() != model.w_cap.rows()) {
    fail(ErrorKind::kValidation, "checkpoint: projection heights differ");
  }
  ByteWriter out;
  out.magic("ITMW");
  out.u32(static_cast<std::uint32_t>(model.dim()));
  out.u32(static_cast<std::uint32_t>(model.w_img.cols()));
  out.u32(static_cast<std::uint32_t>(model.w_cap.cols()));
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  for (const auto* w : {&model.w_img, &model.w_cap}) {
    const RowMajor rm = *w;
    out.raw(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
  }
  return out.bytes();
}

Model deserialize_model(std::string bytes, std::string what) {
  ByteReader in(std::move(bytes), what);
  in.expect_magic("ITMW");
  const std::uint32_t d = in.u32();
  const std::uint32_t d_img = in.u32();
  const std::uint32_t d_cap = in.u32();
  if (d < 2) fail(ErrorKind::kValidation, what + ": joint dimension must be >= 2");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Model m;
  for (auto [w, cols] : {std::pair{&m.w_img, d_img}, std::pair{&m.w_cap, d_cap}}) {
    RowMajor rm(d, cols);
    in.raw(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
    *w = rm;
  }
  in.expect_end();
  if (!all_finite(m)) fail(ErrorKind::kValidation, what + ": non-finite weights");
  return m;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_text_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) {
  return deserialize_model(read_text_file(path), "checkpoint " + path.string());
}

}  // namespace itm
