#include "itm/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "itm/binary_io.hpp"
#include "itm/error.hpp"

namespace itm {
namespace {

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::string unquote(std::string_view v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    return std::string(v.substr(1, v.size() - 2));
  }
  return std::string(v);
}

class ValueParser {
 public:
  explicit ValueParser(std::string where) : where_(std::move(where)) {}

  double real(std::string_view v) const {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad(v, "a number");
    return out;
  }
  std::uint64_t count(std::string_view v) const {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad(v, "a non-negative integer");
    return out;
  }
  bool flag(std::string_view v) const {
    if (v == "true") return true;
    if (v == "false") return false;
    bad(v, "true or false");
  }
  std::vector<std::size_t> list(std::string_view v) const {
    if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
    std::vector<std::size_t> out;
    while (!v.empty()) {
      const std::size_t comma = v.find(',');
      out.push_back(count(strip(v.substr(0, comma))));
      if (comma == std::string_view::npos) break;
      v.remove_prefix(comma + 1);
    }
    if (out.empty()) bad(v, "a non-empty list");
    return out;
  }

 private:
  [[noreturn]] void bad(std::string_view v, const char* expected) const {
    fail(ErrorKind::kParse,
         where_ + ": \"" + std::string(v) + "\" is not " + expected);
  }
  std::string where_;
};

using Setter = std::function<void(RunConfig&, const ValueParser&, std::string_view)>;

std::map<std::string, Setter> setters(const std::filesystem::path& base) {
  auto path = [base](std::string_view v) {
    std::filesystem::path p(unquote(v));
    return p.is_relative() && !base.empty() ? base / p : p;
  };
  return {
      {"train.epochs", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.epochs = p.count(v); }},
      {"train.batch_size", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.batch_size = p.count(v); }},
      {"train.learning_rate", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.learning_rate = p.real(v); }},
      {"train.lr_decay_factor", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.lr_decay_factor = p.real(v); }},
      {"train.lr_decay_epoch", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.lr_decay_epoch = p.count(v); }},
      {"train.seed", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.seed = p.count(v); }},
      {"train.data_fraction", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.data_fraction = p.real(v); }},
      {"train.joint_dim", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.joint_dim = p.count(v); }},
      {"train.eval_ks", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.eval_ks = p.list(v); }},
      {"train.eval_m", [](RunConfig& c, const ValueParser& p, std::string_view v) {
         if (unquote(v) == "k") c.train.eval_m.reset(); else c.train.eval_m = p.count(v);
       }},
      {"sam.tau", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.sam.tau = p.real(v); }},
      {"sam.fixed_margin", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.sam.fixed_margin = p.real(v); }},
      {"sam.sam_weight", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.sam.sam_weight = p.real(v); }},
      {"sam.keep_original_triplet", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.sam.keep_original_triplet = p.flag(v); }},
      {"sam.strategy", [](RunConfig& c, const ValueParser&, std::string_view v) { c.train.sam.strategy = parse_strategy(unquote(v)); }},
      {"sam.clamp_negative_margin", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.train.sam.clamp_negative_margin = p.flag(v); }},
      {"data.source", [](RunConfig& c, const ValueParser&, std::string_view v) {
         const std::string s = unquote(v);
         if (s == "synth") c.data.source = DataConfig::Source::kSynth;
         else if (s == "files") c.data.source = DataConfig::Source::kFiles;
         else fail(ErrorKind::kValidation, "data.source must be synth or files");
       }},
      {"data.synth_seed", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.data.synth_seed = p.count(v); }},
      {"data.topics", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.data.topics = p.count(v); }},
      {"data.pairs_per_topic", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.data.pairs_per_topic = p.count(v); }},
      {"data.feature_dim", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.data.feature_dim = p.count(v); }},
      {"data.val_per_topic", [](RunConfig& c, const ValueParser& p, std::string_view v) { c.data.val_per_topic = p.count(v); }},
      {"data.captions", [path](RunConfig& c, const ValueParser&, std::string_view v) { c.data.captions = path(v); }},
      {"data.train_split", [](RunConfig& c, const ValueParser&, std::string_view v) { c.data.train_split = unquote(v); }},
      {"data.val_split", [](RunConfig& c, const ValueParser&, std::string_view v) { c.data.val_split = unquote(v); }},
      {"data.image_features_train", [path](RunConfig& c, const ValueParser&, std::string_view v) { c.data.image_features_train = path(v); }},
      {"data.caption_features_train", [path](RunConfig& c, const ValueParser&, std::string_view v) { c.data.caption_features_train = path(v); }},
      {"data.image_features_val", [path](RunConfig& c, const ValueParser&, std::string_view v) { c.data.image_features_val = path(v); }},
      {"data.caption_features_val", [path](RunConfig& c, const ValueParser&, std::string_view v) { c.data.caption_features_val = path(v); }},
  };
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir,
                           std::string_view origin) {
  const auto table = setters(base_dir);
  RunConfig config;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    std::string_view line = raw;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorKind::kParse, where + ": unterminated section header");
      section = std::string(strip(line.substr(1, line.size() - 2)));
      if (section != "train" && section != "sam" && section != "data") {
        fail(ErrorKind::kValidation, where + ": unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) fail(ErrorKind::kParse, where + ": expected key = value");
    if (section.empty()) fail(ErrorKind::kParse, where + ": key outside of a section");
    const std::string key = section + "." + std::string(strip(line.substr(0, eq)));
    const std::string_view value = strip(line.substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) fail(ErrorKind::kValidation, where + ": unknown key " + key);
    it->second(config, ValueParser(where + " (" + key + ")"), value);
  }
  config.train.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path), path.parent_path(), path.string());
}

std::map<std::string, std::string> describe(const RunConfig& c) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  std::string ks;
  for (std::size_t k : c.train.eval_ks) ks += (ks.empty() ? "" : ",") + std::to_string(k);
  std::map<std::string, std::string> out{
      {"train.epochs", std::to_string(c.train.epochs)},
      {"train.batch_size", std::to_string(c.train.batch_size)},
      {"train.learning_rate", num(c.train.learning_rate)},
      {"train.lr_decay_factor", num(c.train.lr_decay_factor)},
      {"train.lr_decay_epoch", std::to_string(c.train.lr_decay_epoch)},
      {"train.seed", std::to_string(c.train.seed)},
      {"train.data_fraction", num(c.train.data_fraction)},
      {"train.joint_dim", std::to_string(c.train.joint_dim)},
      {"train.eval_ks", ks},
      {"train.eval_m", c.train.eval_m ? std::to_string(*c.train.eval_m) : "k"},
      {"sam.tau", num(c.train.sam.tau)},
      {"sam.fixed_margin", num(c.train.sam.fixed_margin)},
      {"sam.sam_weight", num(c.train.sam.sam_weight)},
      {"sam.keep_original_triplet", c.train.sam.keep_original_triplet ? "true" : "false"},
      {"sam.strategy", std::string(to_string(c.train.sam.strategy))},
      {"sam.clamp_negative_margin", c.train.sam.clamp_negative_margin ? "true" : "false"},
      {"data.source", c.data.source == DataConfig::Source::kSynth ? "synth" : "files"},
  };
  if (c.data.source == DataConfig::Source::kSynth) {
    out["data.synth_seed"] = std::to_string(c.data.synth_seed);
    out["data.topics"] = std::to_string(c.data.topics);
    out["data.pairs_per_topic"] = std::to_string(c.data.pairs_per_topic);
    out["data.feature_dim"] = std::to_string(c.data.feature_dim);
    out["data.val_per_topic"] = std::to_string(c.data.val_per_topic);
  } else {
    out["data.captions"] = c.data.captions.string();
    out["data.train_split"] = c.data.train_split;
    out["data.val_split"] = c.data.val_split;
    out["data.image_features_train"] = c.data.image_features_train.string();
    out["data.caption_features_train"] = c.data.caption_features_train.string();
    out["data.image_features_val"] = c.data.image_features_val.string();
    out["data.caption_features_val"] = c.data.caption_features_val.string();
  }
  return out;
}

DatasetSplits load_datasets(const DataConfig& data) {
  if (data.source == DataConfig::Source::kSynth) {
    return synth_splits(data.synth_seed, data.topics, data.pairs_per_topic,
                        data.feature_dim, data.val_per_topic);
  }
  auto load = [&](const std::string& split, const std::filesystem::path& img,
                  const std::filesystem::path& cap) {
    Dataset d;
    d.corpus = load_corpus(data.captions, parse_split(split));
    d.images = load_features(img, d.corpus, Modality::kImage);
    d.captions = load_features(cap, d.corpus, Modality::kCaption);
    return d;
  };
  return {load(data.train_split, data.image_features_train, data.caption_features_train),
          load(data.val_split, data.image_features_val, data.caption_features_val)};
}

}  // namespace itm
