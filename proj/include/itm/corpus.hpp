#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Core>

namespace itm {

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split split);
// Accepts "train", "val", "test"; "restval" maps to train.
Split parse_split(std::string_view text);

struct CaptionRecord {
  std::string raw_text;  // NFC-normalized UTF-8
  std::size_t image_index = 0;
  std::string caption_id;
};

// Images, captions and the ground-truth mapping image -> caption indices.
// Indices are dense and 0-based in file order; captions of one image keep
// their file order inside gt[image].
struct Corpus {
  std::vector<std::string> images;
  std::vector<CaptionRecord> captions;
  std::vector<std::vector<std::size_t>> gt;
  Split split = Split::kTest;

  std::size_t num_images() const { return images.size(); }
  std::size_t num_captions() const { return captions.size(); }
  std::size_t image_of(std::size_t caption) const {
    return captions[caption].image_index;
  }

  // Throws Error(kIntegrity) when any corpus invariant is broken.
  void validate() const;
};

enum class Modality : std::uint8_t { kImage, kCaption };

std::string_view to_string(Modality modality);

using FeatureData =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureMatrix {
  FeatureData data;
  Modality modality = Modality::kImage;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
};

Corpus load_corpus(const std::filesystem::path& path, Split split);
// Parses an in-memory caption document; `origin` is used in error messages.
Corpus parse_corpus(std::string_view json_text, Split split,
                    std::string_view origin = "<memory>");
std::string corpus_to_json(const Corpus& corpus);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

FeatureMatrix load_features(const std::filesystem::path& path,
                            const Corpus& corpus, Modality modality);
void save_features(const FeatureMatrix& features,
                   const std::filesystem::path& path);

// Keeps the listed images (in the given order) with all their captions.
// Returns the sub-corpus and the original caption index of each new caption.
struct CorpusSubset {
  Corpus corpus;
  std::vector<std::size_t> caption_origin;
};
CorpusSubset subset_images(const Corpus& corpus,
                           std::span<const std::size_t> image_indices,
                           Split split);
FeatureMatrix gather_rows(const FeatureMatrix& features,
                          std::span<const std::size_t> rows);

struct SyntheticData {
  Corpus corpus;
  FeatureMatrix image_features;
  FeatureMatrix caption_features;
  // Topic id per image, for inspection in tests and harnesses.
  std::vector<std::size_t> image_topic;
};

// Deterministic toy corpus: every topic owns a disjoint word pool, each image
// draws 5 captions from its topic pool (biased towards a few image-specific
// focus words), and features are Gaussian draws around per-topic centers.
SyntheticData synth_corpus(std::uint64_t seed, std::size_t topics,
                           std::size_t pairs_per_topic, std::size_t dim);

}  // namespace itm
