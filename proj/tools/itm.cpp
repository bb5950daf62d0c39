// itm: semantic image-text retrieval evaluation and SAM training.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "itm/binary_io.hpp"
#include "itm/config.hpp"
#include "itm/corpus.hpp"
#include "itm/error.hpp"
#include "itm/metrics.hpp"
#include "itm/ngram.hpp"
#include "itm/parallel.hpp"
#include "itm/semrel.hpp"
#include "itm/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;

int exit_code(itm::ErrorKind kind) {
  switch (kind) {
    case itm::ErrorKind::kIo: return kExitIo;
    case itm::ErrorKind::kNumeric: return kExitNumeric;
    default: return kExitValidation;
  }
}

void report_error(std::string_view kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

// Collects what a command read and wrote; emitted after success.
class Manifest {
 public:
  explicit Manifest(std::string command)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& path) {
    inputs_[path.string()] = itm::hex64(itm::fnv1a64(itm::read_text_file(path)));
  }
  void output(const fs::path& path) { outputs_.push_back(path.string()); }
  void set(const std::string& key, json value) { config_[key] = std::move(value); }

  void emit(const std::optional<fs::path>& where) const {
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start_)
                            .count();
    const json j{{"command", command_},
                 {"config", config_},
                 {"inputs", inputs_},
                 {"outputs", outputs_},
                 {"tool_version", ITM_VERSION},
                 {"wall_clock_seconds", secs}};
    if (where) {
      itm::write_text_file(*where, j.dump(2) + "\n");
    } else if (!outputs_.empty()) {
      itm::write_text_file(outputs_.front() + ".manifest.json", j.dump(2) + "\n");
    } else {
      std::cerr << j.dump() << "\n";
    }
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  json config_ = json::object();
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      itm::fail(itm::ErrorKind::kValidation, "--k: bad cut-off \"" + item + "\"");
    }
  }
  if (ks.empty()) itm::fail(itm::ErrorKind::kValidation, "--k: no cut-offs given");
  return ks;
}

std::optional<std::size_t> parse_m(const std::string& text) {
  if (text == "k") return std::nullopt;
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used == text.size() && v > 0) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  itm::fail(itm::ErrorKind::kValidation, "--m must be a positive integer or \"k\"");
}

void write_or_print(const std::optional<fs::path>& out, const std::string& text,
                    Manifest& manifest) {
  if (out) {
    itm::write_text_file(*out, text);
    manifest.output(*out);
  } else {
    std::cout << text;
  }
}

struct Options {
  std::size_t threads = 0;
  std::optional<fs::path> manifest;

  // build-df
  fs::path captions;
  std::string split = "test";
  fs::path out;
  // simmat
  fs::path df;
  bool leave_one_out = false;
  bool stream = false;
  // eval
  std::vector<fs::path> runs;
  fs::path sim;
  std::string m;
  std::string ks = "1,5,10";
  bool non_gt = false;
  std::string report_format = "table";
  std::optional<fs::path> report_out;
  std::optional<fs::path> verify_df;
  // train
  fs::path config;
  fs::path out_model;
  fs::path train_report;
  // correlate
  fs::path judgments;
  fs::path scores;
  // rank
  fs::path model;
  fs::path image_features;
  fs::path caption_features;
  fs::path out_i2t;
  fs::path out_t2i;
  // synth
  std::uint64_t seed = 7;
  std::size_t topics = 10;
  std::size_t pairs_per_topic = 50;
  std::size_t dim = 64;
  std::size_t val_per_topic = 10;
  fs::path out_dir;
};

void run_build_df(const Options& o) {
  Manifest manifest("build-df");
  manifest.input(o.captions);
  manifest.set("split", o.split);
  const itm::Corpus corpus = itm::load_corpus(o.captions, itm::parse_split(o.split));
  const itm::DfTable df = itm::build_df(corpus);
  itm::save_df(df, o.out);
  manifest.output(o.out);
  manifest.set("df_checksum", itm::hex64(df.checksum()));
  manifest.emit(o.manifest);
}

void run_simmat(const Options& o) {
  Manifest manifest("simmat");
  manifest.input(o.captions);
  manifest.input(o.df);
  manifest.set("split", o.split);
  manifest.set("leave_one_out", o.leave_one_out);
  manifest.set("threads", itm::resolve_threads(o.threads));
  const itm::Corpus corpus = itm::load_corpus(o.captions, itm::parse_split(o.split));
  const itm::DfTable df = itm::load_df(o.df);
  if (df.corpus_size != corpus.num_images()) {
    itm::fail(itm::ErrorKind::kProvenance,
              "df table was built over " + std::to_string(df.corpus_size) +
                  " images, corpus split has " + std::to_string(corpus.num_images()));
  }
  itm::SimOptions opts;
  opts.threads = o.threads;
  opts.scorer.leave_one_out = o.leave_one_out;
  if (o.stream) {
    itm::stream_sim_matrix(corpus, df, o.out, opts);
  } else {
    itm::save_sim(itm::build_sim_matrix(corpus, df, opts), o.out);
  }
  manifest.output(o.out);
  manifest.emit(o.manifest);
}

void run_eval(const Options& o) {
  Manifest manifest("eval");
  manifest.input(o.captions);
  manifest.input(o.sim);
  const itm::Corpus corpus = itm::load_corpus(o.captions, itm::parse_split(o.split));
  std::optional<std::string> expected;
  if (o.verify_df) {
    manifest.input(*o.verify_df);
    expected = itm::hex64(itm::load_df(*o.verify_df).checksum());
  }
  const itm::SimMatrix sim = itm::load_sim(o.sim, expected);

  std::optional<itm::RetrievalRun> i2t, t2i;
  for (const auto& path : o.runs) {
    manifest.input(path);
    itm::RetrievalRun run = itm::load_run(path);
    auto& slot = run.direction == itm::Direction::kI2T ? i2t : t2i;
    if (slot) itm::fail(itm::ErrorKind::kValidation, "two runs with the same direction");
    slot = std::move(run);
  }
  if (!i2t || !t2i) {
    itm::fail(itm::ErrorKind::kValidation, "eval needs one i2t and one t2i run");
  }

  itm::AggregateOptions opts;
  opts.ks = parse_ks(o.ks);
  opts.m = parse_m(o.m);
  opts.gt_removed = o.non_gt;
  manifest.set("m", o.m);
  manifest.set("k", opts.ks);
  manifest.set("non_gt", o.non_gt);
  manifest.set("split", o.split);
  const itm::MetricReport report = itm::aggregate(*i2t, *t2i, corpus, sim, opts);
  if (o.report_format == "json") {
    write_or_print(o.report_out, report.to_json(), manifest);
  } else if (o.report_format == "table") {
    write_or_print(o.report_out, report.to_table(), manifest);
  } else {
    itm::fail(itm::ErrorKind::kValidation, "--report must be json or table");
  }
  manifest.emit(o.manifest);
}

void run_rank(const Options& o) {
  Manifest manifest("rank");
  manifest.input(o.captions);
  manifest.input(o.model);
  manifest.input(o.image_features);
  manifest.input(o.caption_features);
  itm::Dataset data;
  data.corpus = itm::load_corpus(o.captions, itm::parse_split(o.split));
  data.images = itm::load_features(o.image_features, data.corpus, itm::Modality::kImage);
  data.captions = itm::load_features(o.caption_features, data.corpus, itm::Modality::kCaption);
  const itm::Model model = itm::load_model(o.model);
  const Eigen::MatrixXd scores = itm::score_matrix(model, data);
  itm::save_run(itm::rank_by_scores(scores, itm::Direction::kI2T), o.out_i2t);
  itm::save_run(itm::rank_by_scores(scores.transpose(), itm::Direction::kT2I), o.out_t2i);
  manifest.output(o.out_i2t);
  manifest.output(o.out_t2i);
  manifest.emit(o.manifest);
}

void run_train(const Options& o) {
  Manifest manifest("train");
  manifest.input(o.config);
  const itm::RunConfig config = itm::load_run_config(o.config);
  for (const auto& [k, v] : itm::describe(config)) manifest.set(k, v);
  if (config.data.source == itm::DataConfig::Source::kFiles) {
    for (const auto* p : {&config.data.captions, &config.data.image_features_train,
                          &config.data.caption_features_train,
                          &config.data.image_features_val,
                          &config.data.caption_features_val}) {
      manifest.input(*p);
    }
  }
  const itm::DatasetSplits data = itm::load_datasets(config.data);
  const itm::DfTable val_df = itm::build_df(data.val.corpus);
  itm::SimOptions sim_opts;
  sim_opts.threads = o.threads;
  const itm::SimMatrix val_sim = itm::build_sim_matrix(data.val.corpus, val_df, sim_opts);

  const itm::TrainResult result = itm::train(data.train, data.val, val_sim, config.train);
  itm::save_model(result.best, o.out_model);
  manifest.output(o.out_model);

  json epochs = json::array();
  for (const auto& e : result.history) {
    epochs.push_back({{"epoch", e.epoch},
                      {"mean_loss", e.mean_loss},
                      {"val", json::parse(e.val.to_json())}});
  }
  const json report{{"best_epoch", result.best_epoch}, {"epochs", std::move(epochs)}};
  itm::write_text_file(o.train_report, report.dump(2) + "\n");
  manifest.output(o.train_report);
  manifest.emit(o.manifest);
}

void run_correlate(const Options& o) {
  Manifest manifest("correlate");
  manifest.input(o.judgments);
  manifest.input(o.scores);
  const auto human = itm::load_judgments(o.judgments);
  const auto metric = itm::load_judgments(o.scores);
  const itm::Correlation c = itm::correlate(human, metric);
  const json j{{"pearson_r", c.r}, {"matched", c.matched}, {"unmatched", c.unmatched}};
  write_or_print(o.report_out, j.dump(2) + "\n", manifest);
  manifest.emit(o.manifest);
}

void run_synth(const Options& o) {
  Manifest manifest("synth");
  manifest.set("seed", o.seed);
  manifest.set("topics", o.topics);
  manifest.set("pairs_per_topic", o.pairs_per_topic);
  manifest.set("dim", o.dim);
  manifest.set("val_per_topic", o.val_per_topic);
  const itm::DatasetSplits d =
      itm::synth_splits(o.seed, o.topics, o.pairs_per_topic, o.dim, o.val_per_topic);
  fs::create_directories(o.out_dir);
  json merged{{"images", json::array()}};
  for (const itm::Dataset* part : {&d.train, &d.val}) {
    json doc = json::parse(itm::corpus_to_json(part->corpus));
    for (auto& img : doc["images"]) merged["images"].push_back(std::move(img));
  }
  const fs::path captions = o.out_dir / "captions.json";
  itm::write_text_file(captions, merged.dump(1) + "\n");
  manifest.output(captions);
  for (const auto& [name, fm] :
       {std::pair{"images_train.itmf", &d.train.images}, {"captions_train.itmf", &d.train.captions},
        {"images_val.itmf", &d.val.images}, {"captions_val.itmf", &d.val.captions}}) {
    itm::save_features(*fm, o.out_dir / name);
    manifest.output(o.out_dir / name);
  }
  manifest.emit(o.manifest);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic image-text retrieval metrics and adaptive-margin training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ITM_VERSION);
  Options o;
  app.add_option("--threads", o.threads, "Worker threads (default: $ITM_THREADS or all cores)");
  app.add_option("--manifest", o.manifest, "Where to write the run manifest");

  auto* build_df = app.add_subcommand("build-df", "Document frequencies of a caption split");
  build_df->add_option("--captions", o.captions, "Caption JSON file")->required();
  build_df->add_option("--split", o.split, "train | val | test")->capture_default_str();
  build_df->add_option("--out", o.out, "Output ITDF file")->required();

  auto* simmat = app.add_subcommand("simmat", "Image x caption CIDEr-D similarity matrix");
  simmat->add_option("--captions", o.captions, "Caption JSON file")->required();
  simmat->add_option("--split", o.split, "train | val | test")->capture_default_str();
  simmat->add_option("--df", o.df, "ITDF file built over the same split")->required();
  simmat->add_option("--out", o.out, "Output ITSM file")->required();
  simmat->add_flag("--leave-one-out", o.leave_one_out, "Drop a caption from its own references");
  simmat->add_flag("--stream", o.stream, "Write row blocks without holding the matrix");
  simmat->add_option("--threads", o.threads, "Worker threads");

  auto* eval = app.add_subcommand("eval", "Recall, Semantic Recall and NCS of a retrieval run pair");
  eval->add_option("--run", o.runs, "ITRR file; give one i2t and one t2i")->required();
  eval->add_option("--captions", o.captions, "Caption JSON file")->required();
  eval->add_option("--split", o.split, "train | val | test")->capture_default_str();
  eval->add_option("--sim", o.sim, "ITSM file")->required();
  eval->add_option("--m", o.m, "Extended set size, or \"k\" to use each cut-off")->required();
  eval->add_option("--k", o.ks, "Comma-separated cut-offs")->capture_default_str();
  eval->add_flag("--non-gt", o.non_gt, "Headline NCS with GT items removed (Nsum(N))");
  eval->add_option("--report", o.report_format, "json | table")->capture_default_str();
  eval->add_option("--out", o.report_out, "Write the report here instead of stdout");
  eval->add_option("--verify-df", o.verify_df, "ITDF file the sim matrix must come from");

  auto* rank = app.add_subcommand("rank", "Retrieval runs from a trained checkpoint");
  rank->add_option("--model", o.model, "ITMW checkpoint")->required();
  rank->add_option("--captions", o.captions, "Caption JSON file")->required();
  rank->add_option("--split", o.split, "train | val | test")->capture_default_str();
  rank->add_option("--image-features", o.image_features, "ITMF image features")->required();
  rank->add_option("--caption-features", o.caption_features, "ITMF caption features")->required();
  rank->add_option("--out-i2t", o.out_i2t, "Output i2t ITRR file")->required();
  rank->add_option("--out-t2i", o.out_t2i, "Output t2i ITRR file")->required();

  auto* train = app.add_subcommand("train", "Train a joint embedding with the SAM loss");
  train->add_option("--config", o.config, "Config file with [train], [sam], [data]")->required();
  train->add_option("--out-model", o.out_model, "Output ITMW checkpoint (best epoch)")->required();
  train->add_option("--report", o.train_report, "Per-epoch JSON report")->required();
  train->add_option("--threads", o.threads, "Worker threads");

  auto* correlate = app.add_subcommand("correlate", "Pearson-R between judgments and metric scores");
  correlate->add_option("--judgments", o.judgments, "TSV: image_id, caption_id, score")->required();
  correlate->add_option("--scores", o.scores, "TSV: image_id, caption_id, score")->required();
  correlate->add_option("--out", o.report_out, "Write the result here instead of stdout");

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus with features");
  synth->add_option("--seed", o.seed)->capture_default_str();
  synth->add_option("--topics", o.topics)->capture_default_str();
  synth->add_option("--pairs-per-topic", o.pairs_per_topic)->capture_default_str();
  synth->add_option("--dim", o.dim)->capture_default_str();
  synth->add_option("--val-per-topic", o.val_per_topic)->capture_default_str();
  synth->add_option("--out-dir", o.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    // Top-level help lists every subcommand with its flags.
    std::cout << app.help("", app.get_subcommands().empty() ? CLI::AppFormatMode::All
                                                            : CLI::AppFormatMode::Normal);
    return kExitOk;
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return kExitValidation;
  }

  try {
    if (*build_df) run_build_df(o);
    else if (*simmat) run_simmat(o);
    else if (*eval) run_eval(o);
    else if (*rank) run_rank(o);
    else if (*train) run_train(o);
    else if (*correlate) run_correlate(o);
    else if (*synth) run_synth(o);
  } catch (const itm::Error& e) {
    report_error(itm::to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    report_error("io", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return kExitValidation;
  }
  return kExitOk;
}
