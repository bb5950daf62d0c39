#include "itm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_set>

#include "itm/binary_io.hpp"
#include "itm/error.hpp"
#include "json.hpp"

namespace itm {
namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

QueryScores finish(std::vector<double> per_query) {
  QueryScores out;
  out.mean = mean_of(per_query);
  out.per_query = std::move(per_query);
  return out;
}

std::size_t cutoff(const std::vector<std::uint32_t>& list, std::size_t k) {
  return std::min(k, list.size());
}

void require_k(std::size_t k) {
  if (k == 0) fail(ErrorKind::kValidation, "cut-off k must be >= 1");
}

QueryKind query_kind(Direction d) {
  return d == Direction::kI2T ? QueryKind::kImage : QueryKind::kCaption;
}

double relevance(const SimMatrix& sim, Direction d, std::size_t query,
                 std::size_t item) {
  const auto q = static_cast<Eigen::Index>(query);
  const auto i = static_cast<Eigen::Index>(item);
  return d == Direction::kI2T ? sim.values(q, i) : sim.values(i, q);
}

// Shared NCS kernel: ranked prefix membership against an extended set.
double ncs_query(const std::vector<std::uint32_t>& ranked,
                 const std::vector<RankedItem>& items, std::size_t k) {
  double denom = 0.0;
  for (const auto& it : items) denom += it.value;
  if (!(denom > 0.0)) return 0.0;
  std::unordered_set<std::size_t> top(ranked.begin(),
                                      ranked.begin() + static_cast<std::ptrdiff_t>(cutoff(ranked, k)));
  double num = 0.0;
  for (const auto& it : items) {
    if (top.contains(it.index)) num += it.value;
  }
  return num / denom;
}

}  // namespace

std::string_view to_string(Direction direction) {
  return direction == Direction::kI2T ? "i2t" : "t2i";
}

void RetrievalRun::validate(std::size_t n_items) const {
  std::vector<char> seen(n_items);
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    if (ranked[q].size() != n_items) {
      fail(ErrorKind::kValidation, "run: query " + std::to_string(q) + " ranks " +
                                       std::to_string(ranked[q].size()) + " of " +
                                       std::to_string(n_items) + " items");
    }
    std::fill(seen.begin(), seen.end(), 0);
    for (std::uint32_t item : ranked[q]) {
      if (item >= n_items || seen[item]) {
        fail(ErrorKind::kValidation,
             "run: query " + std::to_string(q) + " is not a permutation");
      }
      seen[item] = 1;
    }
  }
}

std::string serialize_run(const RetrievalRun& run) {
  ByteWriter out;
  out.magic("ITRR");
  out.u8(static_cast<std::uint8_t>(run.direction));
  const std::size_t n_items = run.ranked.empty() ? 0 : run.ranked.front().size();
  out.u32(static_cast<std::uint32_t>(run.ranked.size()));
  out.u32(static_cast<std::uint32_t>(n_items));
  for (const auto& list : run.ranked) {
    if (list.size() != n_items) {
      fail(ErrorKind::kValidation, "run: ragged ranked lists");
    }
    out.raw(list.data(), list.size() * sizeof(std::uint32_t));
  }
  return out.bytes();
}

RetrievalRun deserialize_run(std::string bytes, std::string what) {
  ByteReader in(std::move(bytes), what);
  in.expect_magic("ITRR");
  RetrievalRun run;
  const std::uint8_t dir = in.u8();
  if (dir > 1) fail(ErrorKind::kValidation, what + ": bad direction byte");
  run.direction = static_cast<Direction>(dir);
  const std::uint32_t n_queries = in.u32();
  const std::uint32_t n_items = in.u32();
  run.ranked.resize(n_queries);
  for (auto& list : run.ranked) {
    list.resize(n_items);
    in.raw(list.data(), n_items * sizeof(std::uint32_t));
  }
  in.expect_end();
  run.validate(n_items);
  return run;
}

void save_run(const RetrievalRun& run, const std::filesystem::path& path) {
  write_text_file(path, serialize_run(run));
}

RetrievalRun load_run(const std::filesystem::path& path) {
  RetrievalRun run = deserialize_run(read_text_file(path), "run " + path.string());
  run.model_tag = path.stem().string();
  return run;
}

std::vector<std::size_t> gt_items(const Corpus& corpus, Direction direction,
                                  std::size_t query) {
  if (direction == Direction::kI2T) return corpus.gt[query];
  return {corpus.image_of(query)};
}

QueryScores recall_vse(const RetrievalRun& run, const Corpus& corpus,
                       std::size_t k) {
  require_k(k);
  std::vector<double> out(run.n_queries());
  for (std::size_t q = 0; q < run.n_queries(); ++q) {
    const auto gt = gt_items(corpus, run.direction, q);
    const auto& list = run.ranked[q];
    const auto end = list.begin() + static_cast<std::ptrdiff_t>(cutoff(list, k));
    out[q] = std::any_of(list.begin(), end, [&](std::uint32_t item) {
               return std::find(gt.begin(), gt.end(), item) != gt.end();
             })
                 ? 1.0
                 : 0.0;
  }
  return finish(std::move(out));
}

QueryScores recall_ir(const RetrievalRun& run, const Corpus& corpus,
                      std::size_t k) {
  require_k(k);
  std::vector<double> out(run.n_queries());
  for (std::size_t q = 0; q < run.n_queries(); ++q) {
    const auto gt = gt_items(corpus, run.direction, q);
    const auto& list = run.ranked[q];
    const auto end = list.begin() + static_cast<std::ptrdiff_t>(cutoff(list, k));
    std::size_t hits = 0;
    for (std::size_t g : gt) {
      if (std::find(list.begin(), end, g) != end) ++hits;
    }
    out[q] = static_cast<double>(hits) / static_cast<double>(gt.size());
  }
  return finish(std::move(out));
}

QueryScores semantic_recall(const RetrievalRun& run,
                            std::span<const ExtendedGt> ext, std::size_t k) {
  require_k(k);
  if (ext.size() != run.n_queries()) {
    fail(ErrorKind::kValidation, "semantic_recall: one extended set per query required");
  }
  std::vector<double> out(run.n_queries());
  for (std::size_t q = 0; q < run.n_queries(); ++q) {
    const auto& list = run.ranked[q];
    const auto end = list.begin() + static_cast<std::ptrdiff_t>(cutoff(list, k));
    std::size_t hits = 0;
    for (const auto& it : ext[q].items) {
      if (std::find(list.begin(), end, it.index) != end) ++hits;
    }
    out[q] = ext[q].items.empty()
                 ? 0.0
                 : static_cast<double>(hits) / static_cast<double>(ext[q].items.size());
  }
  return finish(std::move(out));
}

QueryScores ncs(const RetrievalRun& run, std::span<const ExtendedGt> ext,
                std::size_t k) {
  require_k(k);
  if (ext.size() != run.n_queries()) {
    fail(ErrorKind::kValidation, "ncs: one extended set per query required");
  }
  std::vector<double> out(run.n_queries());
  for (std::size_t q = 0; q < run.n_queries(); ++q) {
    out[q] = ncs_query(run.ranked[q], ext[q].items, k);
  }
  return finish(std::move(out));
}

QueryScores ncs_non_gt(const RetrievalRun& run, const SimMatrix& sim,
                       const Corpus& corpus, std::size_t m, std::size_t k) {
  require_k(k);
  if (m == 0) fail(ErrorKind::kValidation, "ncs_non_gt: m must be >= 1");
  std::vector<double> out(run.n_queries());
  for (std::size_t q = 0; q < run.n_queries(); ++q) {
    const auto gt = gt_items(corpus, run.direction, q);
    const auto is_gt = [&](std::size_t item) {
      return std::find(gt.begin(), gt.end(), item) != gt.end();
    };
    std::vector<std::uint32_t> filtered;
    filtered.reserve(run.ranked[q].size());
    for (std::uint32_t item : run.ranked[q]) {
      if (!is_gt(item)) filtered.push_back(item);
    }
    std::vector<RankedItem> candidates;
    candidates.reserve(filtered.size());
    for (std::uint32_t item : filtered) {
      candidates.push_back({item, relevance(sim, run.direction, q, item)});
    }
    const std::size_t take = std::min(m, candidates.size());
    std::partial_sort(candidates.begin(),
                      candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), [](const RankedItem& a, const RankedItem& b) {
                        if (a.value != b.value) return a.value > b.value;
                        return a.index < b.index;
                      });
    candidates.resize(take);
    out[q] = ncs_query(filtered, candidates, k);
  }
  return finish(std::move(out));
}

std::vector<ExtendedGt> extended_sets(const SimMatrix& sim, Direction direction,
                                      std::size_t m) {
  const std::size_t n =
      direction == Direction::kI2T ? sim.n_images() : sim.n_captions();
  std::vector<ExtendedGt> out;
  out.reserve(n);
  for (std::size_t q = 0; q < n; ++q) {
    out.push_back(extended_gt(sim, query_kind(direction), q, m));
  }
  return out;
}

MetricReport aggregate(const RetrievalRun& i2t, const RetrievalRun& t2i,
                       const Corpus& corpus, const SimMatrix& sim,
                       const AggregateOptions& options) {
  if (i2t.direction != Direction::kI2T || t2i.direction != Direction::kT2I) {
    fail(ErrorKind::kValidation, "aggregate: expected one i2t and one t2i run");
  }
  if (sim.n_images() != corpus.num_images() ||
      sim.n_captions() != corpus.num_captions()) {
    fail(ErrorKind::kValidation, "aggregate: sim matrix does not match corpus");
  }
  if (i2t.n_queries() != corpus.num_images() ||
      t2i.n_queries() != corpus.num_captions()) {
    fail(ErrorKind::kValidation, "aggregate: run sizes do not match corpus");
  }
  i2t.validate(corpus.num_captions());
  t2i.validate(corpus.num_images());
  if (options.ks.empty()) fail(ErrorKind::kValidation, "aggregate: no cut-offs");

  MetricReport report;
  report.options = options;
  report.scorer = sim.meta.scorer;

  std::size_t max_m = 0;
  for (std::size_t k : options.ks) {
    require_k(k);
    max_m = std::max(max_m, options.m.value_or(k));
  }

  for (const RetrievalRun* run : {&i2t, &t2i}) {
    const auto full = extended_sets(sim, run->direction, max_m);
    auto& cells = run->direction == Direction::kI2T ? report.i2t : report.t2i;
    for (std::size_t k : options.ks) {
      const std::size_t m = options.m.value_or(k);
      std::vector<ExtendedGt> ext = full;
      for (auto& e : ext) {
        e.m = m;
        if (e.items.size() > m) e.items.resize(m);
      }
      MetricCell cell;
      cell.k = k;
      cell.recall_vse = recall_vse(*run, corpus, k).mean;
      cell.recall_ir = recall_ir(*run, corpus, k).mean;
      cell.semantic_recall = semantic_recall(*run, ext, k).mean;
      cell.ncs = ncs(*run, ext, k).mean;
      cell.ncs_non_gt = ncs_non_gt(*run, sim, corpus, m, k).mean;
      cells.push_back(cell);
    }
  }
  for (const auto* cells : {&report.i2t, &report.t2i}) {
    for (const MetricCell& c : *cells) {
      report.rsum += 100.0 * c.recall_vse;
      report.nsum += 100.0 * c.ncs;
      report.nsum_non_gt += 100.0 * c.ncs_non_gt;
    }
  }
  return report;
}

std::string MetricReport::to_json() const {
  using nlohmann::json;
  auto cells_json = [](const std::vector<MetricCell>& cells) {
    json arr = json::array();
    for (const auto& c : cells) {
      arr.push_back({{"k", c.k},
                     {"recall_vse", c.recall_vse},
                     {"recall_ir", c.recall_ir},
                     {"semantic_recall", c.semantic_recall},
                     {"ncs", c.ncs},
                     {"ncs_non_gt", c.ncs_non_gt}});
    }
    return arr;
  };
  json j;
  j["i2t"] = cells_json(i2t);
  j["t2i"] = cells_json(t2i);
  j["rsum"] = rsum;
  j["nsum"] = nsum;
  j["nsum_non_gt"] = nsum_non_gt;
  j["config"] = {{"m", options.m ? json(*options.m) : json("k")},
                 {"ks", options.ks},
                 {"scorer", scorer},
                 {"gt_removed", options.gt_removed}};
  return j.dump(2) + "\n";
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  char buf[64];
  auto cell = [&](double v) {
    std::snprintf(buf, sizeof buf, "%8.1f", v);
    os << buf;
  };
  auto head = [&](const std::string& s) {
    std::snprintf(buf, sizeof buf, "%8s", s.c_str());
    os << buf;
  };
  os << "# scorer=" << scorer << " m="
     << (options.m ? std::to_string(*options.m) : std::string("k"))
     << " gt_removed=" << (options.gt_removed ? "true" : "false") << "\n";

  auto row_header = [&](const char* label, const char* prefix, const char* sum) {
    std::snprintf(buf, sizeof buf, "%-8s", label);
    os << buf;
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& c : i2t) head(std::string(prefix) + "@" + std::to_string(c.k));
    }
    head(sum);
    os << "\n";
  };
  auto row = [&](const char* label, auto field, double sum) {
    std::snprintf(buf, sizeof buf, "%-8s", label);
    os << buf;
    for (const auto* cells : {&i2t, &t2i}) {
      for (const auto& c : *cells) cell(100.0 * field(c));
    }
    cell(sum);
    os << "\n";
  };
  // Columns: I2T cut-offs, then T2I cut-offs, then the sum.
  const char* nsum_label = options.gt_removed ? "Nsum(N)" : "Nsum";
  row_header("", "R", "Rsum");
  row("R^V", [](const MetricCell& c) { return c.recall_vse; }, rsum);
  row_header("", "N", nsum_label);
  if (options.gt_removed) {
    row("NCS(N)", [](const MetricCell& c) { return c.ncs_non_gt; }, nsum_non_gt);
  } else {
    row("NCS", [](const MetricCell& c) { return c.ncs; }, nsum);
  }
  double ir_sum = 0.0;
  double sr_sum = 0.0;
  for (const auto* cells : {&i2t, &t2i}) {
    for (const auto& c : *cells) {
      ir_sum += 100.0 * c.recall_ir;
      sr_sum += 100.0 * c.semantic_recall;
    }
  }
  row_header("", "R", "sum");
  row("R(IR)", [](const MetricCell& c) { return c.recall_ir; }, ir_sum);
  row("SR", [](const MetricCell& c) { return c.semantic_recall; }, sr_sum);
  return os.str();
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    fail(ErrorKind::kValidation, "pearson_r: length mismatch");
  }
  if (x.size() < 2) fail(ErrorKind::kValidation, "pearson_r: need at least 2 points");
  // Single-pass co-moment update (Welford).
  double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(i + 1);
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    mx += dx / n;
    my += dy / n;
    sxx += dx * (x[i] - mx);
    syy += dy * (y[i] - my);
    sxy += dx * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    fail(ErrorKind::kValidation, "pearson_r: undefined correlation (zero variance)");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<Judgment> parse_judgments(std::string_view text,
                                      std::string_view origin) {
  std::vector<Judgment> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    for (std::size_t start = 0;;) {
      const std::size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    if (cols.size() != 3) fail(ErrorKind::kParse, where + ": expected 3 tab-separated columns");
    double score = 0.0;
    std::size_t used = 0;
    const std::string s(cols[2]);
    try {
      score = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) {
      if (out.empty() && line_no == 1) continue;  // header
      fail(ErrorKind::kParse, where + ": score is not a number");
    }
    if (!std::isfinite(score)) fail(ErrorKind::kParse, where + ": non-finite score");
    out.push_back({std::string(cols[0]), std::string(cols[1]), score});
  }
  return out;
}

std::vector<Judgment> load_judgments(const std::filesystem::path& path) {
  return parse_judgments(read_text_file(path), path.string());
}

Correlation correlate(std::span<const Judgment> human,
                      std::span<const Judgment> metric) {
  std::map<std::pair<std::string_view, std::string_view>, double> index;
  for (const auto& j : metric) index[{j.image_id, j.caption_id}] = j.score;
  std::vector<double> x;
  std::vector<double> y;
  Correlation c;
  for (const auto& j : human) {
    const auto it = index.find({j.image_id, j.caption_id});
    if (it == index.end()) {
      ++c.unmatched;
      continue;
    }
    x.push_back(j.score);
    y.push_back(it->second);
  }
  c.matched = x.size();
  c.r = pearson_r(x, y);
  return c;
}

}  // namespace itm
