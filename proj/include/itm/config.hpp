#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "itm/trainer.hpp"

namespace itm {

// Where training data comes from: a generated corpus, or a caption file plus
// per-split feature files.
struct DataConfig {
  enum class Source { kSynth, kFiles } source = Source::kSynth;

  std::uint64_t synth_seed = 7;
  std::size_t topics = 10;
  std::size_t pairs_per_topic = 50;
  std::size_t feature_dim = 64;
  std::size_t val_per_topic = 10;

  std::filesystem::path captions;
  std::string train_split = "train";
  std::string val_split = "val";
  std::filesystem::path image_features_train;
  std::filesystem::path caption_features_train;
  std::filesystem::path image_features_val;
  std::filesystem::path caption_features_val;
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;
};

// Sections [train], [sam], [data] of `key = value` lines; '#' starts a
// comment. Unknown sections or keys are validation errors. Relative paths are
// resolved against `base_dir`.
RunConfig parse_run_config(std::string_view text,
                           const std::filesystem::path& base_dir = {},
                           std::string_view origin = "<memory>");
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical `key = value` rendering of every setting, for manifests.
std::map<std::string, std::string> describe(const RunConfig& config);

DatasetSplits load_datasets(const DataConfig& data);

}  // namespace itm
