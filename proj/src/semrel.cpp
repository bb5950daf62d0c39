#include "itm/semrel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "itm/binary_io.hpp"
#include "itm/error.hpp"
#include "itm/parallel.hpp"
#include "json.hpp"

namespace itm {
namespace {

constexpr std::size_t kRowBlock = 64;

SimMeta make_meta(const DfTable& df, const SimOptions& options) {
  SimMeta meta;
  meta.df_checksum = hex64(df.checksum());
  meta.leave_one_out = options.scorer.leave_one_out;
  return meta;
}

std::string header_bytes(std::size_t rows, std::size_t cols, const SimMeta& meta) {
  const nlohmann::json j{{"scorer", meta.scorer},
                         {"tokenizer", meta.tokenizer},
                         {"df_checksum", meta.df_checksum},
                         {"leave_one_out", meta.leave_one_out}};
  ByteWriter out;
  out.magic("ITSM");
  out.u32(static_cast<std::uint32_t>(rows));
  out.u32(static_cast<std::uint32_t>(cols));
  out.str(j.dump());
  return out.bytes();
}

// Fills rows [first, first + block.rows()) of the matrix.
void compute_rows(const CiderScorer& scorer, std::size_t first, SimValues& block,
                  std::size_t threads) {
  const std::size_t rows = static_cast<std::size_t>(block.rows());
  const std::size_t cols = static_cast<std::size_t>(block.cols());
  threads = std::max<std::size_t>(1, std::min(threads, rows));
  std::vector<CiderScorer::RowKernel> kernels;
  kernels.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) kernels.emplace_back(scorer);
  parallel_for(rows, threads, [&](std::size_t worker, std::size_t r) {
    auto& kernel = kernels[worker];
    kernel.bind(first + r);
    for (std::size_t c = 0; c < cols; ++c) {
      block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          kernel.score(c);
    }
  });
}

}  // namespace

SimMatrix build_sim_matrix(const Corpus& corpus, const DfTable& df,
                           SimOptions options) {
  const CiderScorer scorer(corpus, df, options.scorer);
  SimMatrix sim;
  sim.meta = make_meta(df, options);
  sim.values.resize(static_cast<Eigen::Index>(corpus.num_images()),
                    static_cast<Eigen::Index>(corpus.num_captions()));
  compute_rows(scorer, 0, sim.values, resolve_threads(options.threads));
  return sim;
}

void stream_sim_matrix(const Corpus& corpus, const DfTable& df,
                       const std::filesystem::path& path, SimOptions options) {
  const CiderScorer scorer(corpus, df, options.scorer);
  const std::size_t rows = corpus.num_images();
  const std::size_t cols = corpus.num_captions();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  const std::string header = header_bytes(rows, cols, make_meta(df, options));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  const std::size_t threads = resolve_threads(options.threads);
  SimValues block;
  std::vector<float> buf;
  for (std::size_t first = 0; first < rows; first += kRowBlock) {
    const std::size_t n = std::min(kRowBlock, rows - first);
    block.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
    compute_rows(scorer, first, block, threads);
    buf.resize(block.size());
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        buf.data(), block.rows(), block.cols()) = block.cast<float>();
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

std::string serialize_sim(const SimMatrix& sim) {
  std::string bytes = header_bytes(sim.n_images(), sim.n_captions(), sim.meta);
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f =
      sim.values.cast<float>();
  bytes.append(reinterpret_cast<const char*>(f.data()), f.size() * sizeof(float));
  return bytes;
}

void save_sim(const SimMatrix& sim, const std::filesystem::path& path) {
  write_text_file(path, serialize_sim(sim));
}

SimMatrix deserialize_sim(std::string bytes,
                          std::optional<std::string> expected_df_checksum,
                          std::string what) {
  ByteReader in(std::move(bytes), what);
  in.expect_magic("ITSM");
  const std::uint32_t rows = in.u32();
  const std::uint32_t cols = in.u32();
  SimMatrix sim;
  try {
    const auto j = nlohmann::json::parse(in.str());
    sim.meta.scorer = j.at("scorer").get<std::string>();
    sim.meta.tokenizer = j.at("tokenizer").get<std::string>();
    sim.meta.df_checksum = j.at("df_checksum").get<std::string>();
    sim.meta.leave_one_out = j.at("leave_one_out").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, what + ": bad meta block: " + e.what());
  }
  if (expected_df_checksum && *expected_df_checksum != sim.meta.df_checksum) {
    fail(ErrorKind::kProvenance, what + ": built from df table " +
                                     sim.meta.df_checksum + ", expected " +
                                     *expected_df_checksum);
  }
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(rows, cols);
  in.raw(f.data(), static_cast<std::size_t>(f.size()) * sizeof(float));
  in.expect_end();
  sim.values = f.cast<double>();
  for (Eigen::Index k = 0; k < sim.values.size(); ++k) {
    const double v = sim.values.data()[k];
    if (!std::isfinite(v) || v < 0.0) {
      fail(ErrorKind::kValidation, what + ": invalid value at flat index " +
                                       std::to_string(k));
    }
  }
  return sim;
}

SimMatrix load_sim(const std::filesystem::path& path,
                   std::optional<std::string> expected_df_checksum) {
  return deserialize_sim(read_text_file(path), std::move(expected_df_checksum),
                         "sim matrix " + path.string());
}

ExtendedGt extended_gt(const SimMatrix& sim, QueryKind kind, std::size_t query,
                       std::size_t m) {
  return extended_gt(sim, kind, query, m, {});
}

ExtendedGt extended_gt(const SimMatrix& sim, QueryKind kind, std::size_t query,
                       std::size_t m, std::span<const std::size_t> forced) {
  if (m == 0) fail(ErrorKind::kValidation, "extended_gt: m must be >= 1");
  const bool image_query = kind == QueryKind::kImage;
  const std::size_t n = image_query ? sim.n_captions() : sim.n_images();
  if (query >= (image_query ? sim.n_images() : sim.n_captions())) {
    fail(ErrorKind::kValidation, "extended_gt: query index out of range");
  }

  std::vector<char> pinned(n, 0);
  for (std::size_t f : forced) {
    if (f < n) pinned[f] = 1;
  }
  std::vector<RankedItem> all;
  all.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto q = static_cast<Eigen::Index>(query);
    const auto e = static_cast<Eigen::Index>(k);
    all.push_back({k, image_query ? sim.values(q, e) : sim.values(e, q)});
  }
  const auto before = [&](const RankedItem& a, const RankedItem& b) {
    if (pinned[a.index] != pinned[b.index]) return pinned[a.index] > pinned[b.index];
    if (a.value != b.value) return a.value > b.value;
    return a.index < b.index;
  };
  const std::size_t take = std::min(m, n);
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take),
                    all.end(), before);
  all.resize(take);
  return {kind, query, m, std::move(all)};
}

}  // namespace itm
