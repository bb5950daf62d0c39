#include "itm/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <unordered_map>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "itm/binary_io.hpp"
#include "itm/error.hpp"
#include "json.hpp"

namespace itm {
namespace {

using nlohmann::json;

std::string nfc(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) fail(ErrorKind::kIo, "ICU NFC normalizer unavailable");
  const icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  if (norm->isNormalized(src, status) && U_SUCCESS(status)) {
    return std::string(utf8);
  }
  status = U_ZERO_ERROR;
  const icu::UnicodeString out = norm->normalize(src, status);
  if (U_FAILURE(status)) fail(ErrorKind::kParse, "NFC normalization failed");
  std::string result;
  out.toUTF8String(result);
  return result;
}

std::string_view trim(std::string_view s) {
  const auto ws = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
  };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

// Image and caption ids may be strings or integers in the wild.
std::string id_text(const json& v, const std::string& what) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  fail(ErrorKind::kIntegrity, what + " must be a string or integer");
}

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + byte, '\n'));
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "test";
}

Split parse_split(std::string_view text) {
  if (text == "train" || text == "restval") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  fail(ErrorKind::kValidation, "unknown split \"" + std::string(text) + "\"");
}

std::string_view to_string(Modality modality) {
  return modality == Modality::kImage ? "image" : "caption";
}

void Corpus::validate() const {
  if (gt.size() != images.size()) {
    fail(ErrorKind::kIntegrity, "gt has " + std::to_string(gt.size()) +
                                    " lists for " +
                                    std::to_string(images.size()) + " images");
  }
  std::vector<int> seen(captions.size(), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i].empty()) {
      fail(ErrorKind::kIntegrity, "image \"" + images[i] + "\" has no captions");
    }
    for (std::size_t c : gt[i]) {
      if (c >= captions.size()) {
        fail(ErrorKind::kIntegrity, "gt of image \"" + images[i] +
                                        "\" references caption index " +
                                        std::to_string(c) + " out of range");
      }
      if (captions[c].image_index != i) {
        fail(ErrorKind::kIntegrity, "caption \"" + captions[c].caption_id +
                                        "\" listed under the wrong image");
      }
      ++seen[c];
    }
  }
  for (std::size_t c = 0; c < captions.size(); ++c) {
    if (seen[c] != 1) {
      fail(ErrorKind::kIntegrity,
           "caption \"" + captions[c].caption_id + "\" appears " +
               std::to_string(seen[c]) + " times across gt lists");
    }
    if (trim(captions[c].raw_text).empty()) {
      fail(ErrorKind::kIntegrity,
           "caption \"" + captions[c].caption_id + "\" is empty");
    }
  }
}

Corpus parse_corpus(std::string_view json_text, Split split,
                    std::string_view origin) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    const std::size_t byte = e.byte == 0 ? 0 : e.byte - 1;
    fail(ErrorKind::kParse, std::string(origin) + ": malformed JSON at line " +
                                std::to_string(line_of(json_text, byte)) +
                                ", byte " + std::to_string(byte) + ": " +
                                e.what());
  }
  if (!doc.is_object() || !doc.contains("images") ||
      !doc["images"].is_array()) {
    fail(ErrorKind::kParse,
         std::string(origin) + ": expected an object with an \"images\" array");
  }

  const json& images = doc["images"];
  std::unordered_map<std::string, std::size_t> all_ids;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const json& img = images[n];
    if (!img.is_object() || !img.contains("id")) {
      fail(ErrorKind::kIntegrity,
           "image entry " + std::to_string(n) + " has no \"id\"");
    }
    const std::string id = id_text(img["id"], "image id");
    if (!all_ids.emplace(id, n).second) {
      fail(ErrorKind::kIntegrity, "duplicate image id \"" + id + "\"");
    }
  }

  Corpus corpus;
  corpus.split = split;
  for (const json& img : images) {
    const std::string id = id_text(img["id"], "image id");
    const Split img_split =
        img.contains("split") ? parse_split(img["split"].get<std::string>())
                              : split;
    const json sentences = img.value("sentences", json::array());
    if (!sentences.is_array()) {
      fail(ErrorKind::kParse, "image \"" + id + "\": \"sentences\" must be an array");
    }
    // Reference checks run on every image, including ones of other splits.
    for (const json& s : sentences) {
      if (!s.is_object() || !s.contains("raw") || !s["raw"].is_string()) {
        fail(ErrorKind::kIntegrity,
             "image \"" + id + "\": sentence without a \"raw\" string");
      }
      const std::string cid =
          s.contains("sentid") ? id_text(s["sentid"], "sentid") : std::string();
      for (const char* key : {"imgid", "image_id"}) {
        if (!s.contains(key)) continue;
        const std::string ref = id_text(s[key], key);
        if (!all_ids.contains(ref)) {
          fail(ErrorKind::kIntegrity, "caption \"" + cid +
                                          "\" references unknown image \"" +
                                          ref + "\"");
        }
        if (ref != id) {
          fail(ErrorKind::kIntegrity, "caption \"" + cid +
                                          "\" is nested under image \"" + id +
                                          "\" but references \"" + ref + "\"");
        }
      }
    }
    if (img_split != split) continue;
    if (sentences.empty()) {
      fail(ErrorKind::kIntegrity, "image \"" + id + "\" has an empty caption list");
    }

    const std::size_t image_index = corpus.images.size();
    corpus.images.push_back(id);
    auto& gt = corpus.gt.emplace_back();
    for (std::size_t k = 0; k < sentences.size(); ++k) {
      const json& s = sentences[k];
      CaptionRecord rec;
      rec.raw_text = nfc(s["raw"].get<std::string>());
      rec.image_index = image_index;
      rec.caption_id = s.contains("sentid")
                           ? id_text(s["sentid"], "sentid")
                           : id + "#" + std::to_string(k);
      if (trim(rec.raw_text).empty()) {
        fail(ErrorKind::kIntegrity,
             "caption \"" + rec.caption_id + "\" is empty after trimming");
      }
      gt.push_back(corpus.captions.size());
      corpus.captions.push_back(std::move(rec));
    }
  }
  corpus.validate();
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, Split split) {
  return parse_corpus(read_text_file(path), split, path.string());
}

std::string corpus_to_json(const Corpus& corpus) {
  json images = json::array();
  for (std::size_t i = 0; i < corpus.num_images(); ++i) {
    json sentences = json::array();
    for (std::size_t c : corpus.gt[i]) {
      sentences.push_back({{"raw", corpus.captions[c].raw_text},
                           {"sentid", corpus.captions[c].caption_id}});
    }
    images.push_back({{"id", corpus.images[i]},
                      {"split", std::string(to_string(corpus.split))},
                      {"sentences", std::move(sentences)}});
  }
  return json{{"images", std::move(images)}}.dump(1) + "\n";
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_text_file(path, corpus_to_json(corpus));
}

FeatureMatrix load_features(const std::filesystem::path& path,
                            const Corpus& corpus, Modality modality) {
  ByteReader in = ByteReader::from_file(path, "feature file " + path.string());
  in.expect_magic("ITMF");
  const std::uint32_t rows = in.u32();
  const std::uint32_t dim = in.u32();
  const std::size_t expected = modality == Modality::kImage
                                   ? corpus.num_images()
                                   : corpus.num_captions();
  if (rows != expected) {
    fail(ErrorKind::kValidation,
         path.string() + ": " + std::to_string(rows) + " rows but corpus has " +
             std::to_string(expected) + " " + std::string(to_string(modality)) +
             "s");
  }
  if (dim == 0) fail(ErrorKind::kValidation, path.string() + ": zero dimension");
  FeatureMatrix out;
  out.modality = modality;
  out.data.resize(rows, dim);
  in.raw(out.data.data(), sizeof(float) * rows * dim);
  in.expect_end();
  for (Eigen::Index r = 0; r < out.data.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.data.cols(); ++c) {
      if (!std::isfinite(out.data(r, c))) {
        fail(ErrorKind::kValidation, path.string() + ": non-finite value at (" +
                                         std::to_string(r) + ", " +
                                         std::to_string(c) + ")");
      }
    }
  }
  return out;
}

void save_features(const FeatureMatrix& features,
                   const std::filesystem::path& path) {
  ByteWriter out;
  out.magic("ITMF");
  out.u32(static_cast<std::uint32_t>(features.rows()));
  out.u32(static_cast<std::uint32_t>(features.dim()));
  out.raw(features.data.data(), sizeof(float) * features.data.size());
  out.write_file(path);
}

CorpusSubset subset_images(const Corpus& corpus,
                           std::span<const std::size_t> image_indices,
                           Split split) {
  CorpusSubset out;
  out.corpus.split = split;
  for (std::size_t src : image_indices) {
    if (src >= corpus.num_images()) {
      fail(ErrorKind::kValidation, "subset image index out of range");
    }
    const std::size_t dst = out.corpus.images.size();
    out.corpus.images.push_back(corpus.images[src]);
    auto& gt = out.corpus.gt.emplace_back();
    for (std::size_t c : corpus.gt[src]) {
      CaptionRecord rec = corpus.captions[c];
      rec.image_index = dst;
      gt.push_back(out.corpus.captions.size());
      out.corpus.captions.push_back(std::move(rec));
      out.caption_origin.push_back(c);
    }
  }
  out.corpus.validate();
  return out;
}

FeatureMatrix gather_rows(const FeatureMatrix& features,
                          std::span<const std::size_t> rows) {
  FeatureMatrix out;
  out.modality = features.modality;
  out.data.resize(static_cast<Eigen::Index>(rows.size()), features.dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.data.row(static_cast<Eigen::Index>(r)) =
        features.data.row(static_cast<Eigen::Index>(rows[r]));
  }
  return out;
}

SyntheticData synth_corpus(std::uint64_t seed, std::size_t topics,
                           std::size_t pairs_per_topic, std::size_t dim) {
  if (topics == 0 || pairs_per_topic == 0 || dim == 0) {
    fail(ErrorKind::kValidation, "synth_corpus: all counts must be >= 1");
  }
  constexpr std::size_t kPoolSize = 24;
  constexpr std::size_t kFocusWords = 4;
  constexpr std::size_t kCaptionsPerImage = 5;
  constexpr double kFocusProb = 0.5;
  constexpr double kInstanceScale = 0.7;
  constexpr double kNoiseScale = 0.5;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pool_pick(0, kPoolSize - 1);
  std::uniform_int_distribution<std::size_t> length_pick(6, 10);

  const auto d = static_cast<Eigen::Index>(dim);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = gauss(rng);
    return m;
  };

  const Eigen::MatrixXd image_centers = gaussian(static_cast<Eigen::Index>(topics), d);
  const Eigen::MatrixXd caption_centers = gaussian(static_cast<Eigen::Index>(topics), d);
  // Fixed linear map from the image-instance latent into caption space.
  const Eigen::MatrixXd mixing = gaussian(d, d) / std::sqrt(static_cast<double>(dim));

  const std::size_t n_images = topics * pairs_per_topic;
  const std::size_t n_captions = n_images * kCaptionsPerImage;
  SyntheticData out;
  out.corpus.split = Split::kTrain;
  out.image_features.modality = Modality::kImage;
  out.caption_features.modality = Modality::kCaption;
  out.image_features.data.resize(static_cast<Eigen::Index>(n_images), d);
  out.caption_features.data.resize(static_cast<Eigen::Index>(n_captions), d);

  for (std::size_t t = 0; t < topics; ++t) {
    for (std::size_t p = 0; p < pairs_per_topic; ++p) {
      const std::size_t image = out.corpus.images.size();
      out.corpus.images.push_back("syn-" + std::to_string(t) + "-" +
                                  std::to_string(p));
      out.image_topic.push_back(t);

      std::array<std::size_t, kFocusWords> focus{};
      for (auto& w : focus) w = pool_pick(rng);

      const Eigen::VectorXd latent = gaussian(d, 1);
      const Eigen::VectorXd img = image_centers.row(static_cast<Eigen::Index>(t)).transpose() +
                                  kInstanceScale * latent +
                                  kNoiseScale * gaussian(d, 1);
      out.image_features.data.row(static_cast<Eigen::Index>(image)) =
          img.transpose().cast<float>();
      const Eigen::VectorXd cap_mean =
          caption_centers.row(static_cast<Eigen::Index>(t)).transpose() +
          kInstanceScale * (mixing * latent);

      auto& gt = out.corpus.gt.emplace_back();
      for (std::size_t k = 0; k < kCaptionsPerImage; ++k) {
        const std::size_t len = length_pick(rng);
        std::string text;
        for (std::size_t w = 0; w < len; ++w) {
          const std::size_t word = unit(rng) < kFocusProb
                                       ? focus[pool_pick(rng) % kFocusWords]
                                       : pool_pick(rng);
          if (!text.empty()) text.push_back(' ');
          text += "t" + std::to_string(t) + "w" + std::to_string(word);
        }
        const std::size_t caption = out.corpus.captions.size();
        gt.push_back(caption);
        out.corpus.captions.push_back(
            {std::move(text), image, std::to_string(caption)});
        const Eigen::VectorXd cap = cap_mean + kNoiseScale * gaussian(d, 1);
        out.caption_features.data.row(static_cast<Eigen::Index>(caption)) =
            cap.transpose().cast<float>();
      }
    }
  }
  out.corpus.validate();
  return out;
}

}  // namespace itm
