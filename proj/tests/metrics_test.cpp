#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "itm/binary_io.hpp"
#include "itm/error.hpp"
#include "itm/metrics.hpp"
#include "oracle/cider_oracle.hpp"
#include "oracle/metric_oracle.hpp"
#include "test_util.hpp"

namespace itm {
namespace {

Corpus toy() { return load_corpus(testing::data_dir() / "toy_corpus.json", Split::kTest); }

std::vector<std::uint32_t> identity(std::size_t n) {
  std::vector<std::uint32_t> v(n);
  std::iota(v.begin(), v.end(), 0u);
  return v;
}

RetrievalRun random_run(Direction d, std::size_t queries, std::size_t items,
                        std::mt19937_64& rng) {
  RetrievalRun run;
  run.direction = d;
  for (std::size_t q = 0; q < queries; ++q) {
    auto list = identity(items);
    std::shuffle(list.begin(), list.end(), rng);
    run.ranked.push_back(std::move(list));
  }
  return run;
}

// Ranks GT first, in ascending order, then everything else.
RetrievalRun perfect_run(const Corpus& c, Direction d) {
  RetrievalRun run;
  run.direction = d;
  const std::size_t nq = d == Direction::kI2T ? c.num_images() : c.num_captions();
  const std::size_t ni = d == Direction::kI2T ? c.num_captions() : c.num_images();
  for (std::size_t q = 0; q < nq; ++q) {
    const auto gt = gt_items(c, d, q);
    std::vector<std::uint32_t> list(gt.begin(), gt.end());
    for (std::uint32_t i = 0; i < ni; ++i)
      if (std::find(gt.begin(), gt.end(), i) == gt.end()) list.push_back(i);
    run.ranked.push_back(std::move(list));
  }
  return run;
}

std::vector<double> relevance_row(const SimMatrix& s, Direction d, std::size_t q) {
  std::vector<double> out;
  if (d == Direction::kI2T) {
    for (Eigen::Index j = 0; j < s.values.cols(); ++j)
      out.push_back(s.values(static_cast<Eigen::Index>(q), j));
  } else {
    for (Eigen::Index i = 0; i < s.values.rows(); ++i)
      out.push_back(s.values(i, static_cast<Eigen::Index>(q)));
  }
  return out;
}

std::set<std::size_t> gt_set(const Corpus& c, Direction d, std::size_t q) {
  const auto g = gt_items(c, d, q);
  return {g.begin(), g.end()};
}

TEST(Recall, IndicatorExamples) {
  const Corpus c = testing::make_corpus(
      {{"a"}, {"b"}, {"c"}, {"d"}, {"e"}, {"f"}, {"g"}, {"h"}, {"i"}, {"j"}});
  RetrievalRun hit{Direction::kT2I, {}, ""};
  // Caption 3 belongs to image 3.
  hit.ranked.assign(10, identity(10));
  hit.ranked[3] = {9, 3, 1, 2, 7, 0, 4, 5, 6, 8};
  EXPECT_EQ(recall_vse(hit, c, 5).per_query[3], 1.0);
  hit.ranked[3] = {9, 8, 1, 2, 7, 0, 4, 5, 6, 3};
  EXPECT_EQ(recall_vse(hit, c, 5).per_query[3], 0.0);
  EXPECT_EQ(recall_ir(hit, c, 5).per_query[3], 0.0);
}

TEST(Recall, PartialGtInTopFive) {
  const Corpus c = toy();
  RetrievalRun run{Direction::kI2T, {}, ""};
  const std::size_t n = c.num_captions();
  for (std::size_t q = 0; q < c.num_images(); ++q) {
    const auto& gt = c.gt[q];
    std::vector<std::uint32_t> list;
    // Two GT captions, three non-GT, then the rest.
    list.push_back(static_cast<std::uint32_t>(gt[0]));
    list.push_back(static_cast<std::uint32_t>(gt[1]));
    for (std::uint32_t i = 0; i < n; ++i)
      if (c.image_of(i) != q && list.size() < 5) list.push_back(i);
    for (std::uint32_t i = 0; i < n; ++i)
      if (std::find(list.begin(), list.end(), i) == list.end()) list.push_back(i);
    run.ranked.push_back(list);
  }
  EXPECT_DOUBLE_EQ(recall_vse(run, c, 5).mean, 1.0);
  EXPECT_DOUBLE_EQ(recall_ir(run, c, 5).mean, 0.4);
  EXPECT_THROW(recall_ir(run, c, 0), Error);
}

TEST(Recall, AllGtInTopTen) {
  const Corpus c = toy();
  const RetrievalRun run = perfect_run(c, Direction::kI2T);
  EXPECT_DOUBLE_EQ(recall_ir(run, c, 10).mean, 1.0);
  EXPECT_DOUBLE_EQ(recall_ir(run, c, 1).mean, 0.2);
}

TEST(Ncs, EqualValuesOneOfFiveRetrieved) {
  SimMatrix s;
  s.values = SimValues::Zero(1, 10);
  for (int j = 0; j < 5; ++j) s.values(0, j) = 3.0;
  const Corpus c = testing::make_corpus({{"x", "y"}});
  RetrievalRun run{Direction::kI2T, {{4, 9, 8, 7, 6, 5, 3, 2, 1, 0}}, ""};
  const auto ext = extended_sets(s, Direction::kI2T, 5);
  EXPECT_DOUBLE_EQ(ncs(run, ext, 5).mean, 0.2);
  EXPECT_DOUBLE_EQ(semantic_recall(run, ext, 5).mean, 0.2);
  run.ranked[0] = {3, 0, 2, 4, 1, 5, 6, 7, 8, 9};
  EXPECT_DOUBLE_EQ(ncs(run, ext, 5).mean, 1.0);
  EXPECT_DOUBLE_EQ(semantic_recall(run, ext, 5).mean, 1.0);
  run.ranked[0] = {5, 6, 7, 8, 9, 0, 1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(semantic_recall(run, ext, 5).mean, 0.0);
  (void)c;
}

TEST(Ncs, ZeroDenominatorScoresZeroAndCounts) {
  SimMatrix s;
  s.values = SimValues::Zero(2, 3);
  s.values(1, 0) = 1.0;
  RetrievalRun run{Direction::kI2T, {{0, 1, 2}, {0, 1, 2}}, ""};
  const auto ext = extended_sets(s, Direction::kI2T, 2);
  const QueryScores q = ncs(run, ext, 1);
  EXPECT_EQ(q.per_query[0], 0.0);
  EXPECT_EQ(q.per_query[1], 1.0);
  EXPECT_DOUBLE_EQ(q.mean, 0.5);
}

TEST(NcsNonGt, ScoresThePostRemovalPrefix) {
  // Image 0 owns captions 0,1; relevances of the non-GT captions 2..5.
  const Corpus c = testing::make_corpus({{"a", "b"}, {"c", "d"}, {"e", "f"}});
  SimMatrix s;
  s.values = SimValues::Zero(3, 6);
  s.values.row(0) << 9, 9, 4, 3, 2, 1;
  RetrievalRun run{Direction::kI2T, {{0, 1, 4, 2, 3, 5}, identity(6), identity(6)}, ""};
  // After removal: [4, 2, 3, 5]; extended set (m=2) = {2, 3} with mass 7.
  EXPECT_DOUBLE_EQ(ncs_non_gt(run, s, c, 2, 2).per_query[0], 4.0 / 7.0);
  EXPECT_DOUBLE_EQ(ncs_non_gt(run, s, c, 2, 3).per_query[0], 1.0);
  // Rows 1 and 2 have no non-GT mass at all.
  EXPECT_EQ(ncs_non_gt(run, s, c, 2, 2).per_query[1], 0.0);
}

TEST(Aggregate, PerfectRunGivesSixHundred) {
  const Corpus c = toy();
  const SimMatrix sim = build_sim_matrix(c, build_df(c));
  const MetricReport r = aggregate(perfect_run(c, Direction::kI2T),
                                   perfect_run(c, Direction::kT2I), c, sim,
                                   {.ks = {1, 5, 10}, .m = std::nullopt});
  EXPECT_DOUBLE_EQ(r.rsum, 600.0);
  ASSERT_EQ(r.i2t.size(), 3u);
  EXPECT_EQ(r.i2t[2].k, 10u);
  EXPECT_EQ(r.scorer, "cider-d");
  for (const auto& cells : {r.i2t, r.t2i})
    for (const auto& cell : cells) {
      for (double v : {cell.recall_vse, cell.recall_ir, cell.semantic_recall, cell.ncs,
                       cell.ncs_non_gt}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
}

TEST(Aggregate, EchoesConfigInJsonAndTable) {
  const Corpus c = toy();
  const SimMatrix sim = build_sim_matrix(c, build_df(c));
  AggregateOptions opts{.ks = {1, 5}, .m = 7, .gt_removed = true};
  const MetricReport r = aggregate(perfect_run(c, Direction::kI2T),
                                   perfect_run(c, Direction::kT2I), c, sim, opts);
  EXPECT_EQ(r.headline_nsum(), r.nsum_non_gt);
  const std::string j = r.to_json();
  EXPECT_NE(j.find("\"m\": 7"), std::string::npos) << j;
  EXPECT_NE(j.find("\"gt_removed\": true"), std::string::npos) << j;
  const std::string t = r.to_table();
  EXPECT_NE(t.find("m=7 gt_removed=true"), std::string::npos) << t;
  EXPECT_NE(t.find("Nsum(N)"), std::string::npos) << t;
  EXPECT_NE(t.find("400.0"), std::string::npos) << t;
}

TEST(Aggregate, MatchesHandOracleOnRandomRuns) {
  const Corpus c = testing::make_corpus({{"a red car", "red car on road", "a car"},
                                         {"a blue car", "blue truck", "a truck on road"},
                                         {"green tree", "a tree on a hill", "tree"}});
  const Eigen::MatrixXd expected_sim = oracle::sim_matrix(testing::caption_groups(c));
  const SimMatrix sim = build_sim_matrix(c, build_df(c));
  ASSERT_LE((sim.values - expected_sim).cwiseAbs().maxCoeff(), 1e-9);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const RetrievalRun i2t = random_run(Direction::kI2T, 3, 9, rng);
    const RetrievalRun t2i = random_run(Direction::kT2I, 9, 3, rng);
    for (std::optional<std::size_t> m : {std::optional<std::size_t>{}, std::optional<std::size_t>{4}}) {
      const MetricReport r = aggregate(i2t, t2i, c, sim, {.ks = {1, 2, 5}, .m = m});
      double rsum = 0, nsum = 0, nsum_n = 0;
      for (const RetrievalRun* run : {&i2t, &t2i}) {
        const auto& cells = run->direction == Direction::kI2T ? r.i2t : r.t2i;
        for (std::size_t ci = 0; ci < cells.size(); ++ci) {
          const std::size_t k = cells[ci].k;
          const std::size_t mm = m.value_or(k);
          double v = 0, ir = 0, n = 0, nn = 0, sr = 0;
          for (std::size_t q = 0; q < run->n_queries(); ++q) {
            const auto rel = relevance_row(sim, run->direction, q);
            const auto gt = gt_set(c, run->direction, q);
            v += oracle::recall_vse(run->ranked[q], gt, k);
            ir += oracle::recall_ir(run->ranked[q], gt, k);
            n += oracle::ncs(run->ranked[q], rel, mm, k);
            nn += oracle::ncs_non_gt(run->ranked[q], rel, gt, mm, k);
            const auto ext = oracle::best_m(rel, mm);
            const auto t = oracle::top(run->ranked[q], k);
            double hits = 0;
            for (auto e : ext) hits += t.count(e);
            sr += hits / static_cast<double>(ext.size());
          }
          const double nq = static_cast<double>(run->n_queries());
          EXPECT_NEAR(cells[ci].recall_vse, v / nq, 1e-12);
          EXPECT_NEAR(cells[ci].recall_ir, ir / nq, 1e-12);
          EXPECT_NEAR(cells[ci].ncs, n / nq, 1e-12);
          EXPECT_NEAR(cells[ci].ncs_non_gt, nn / nq, 1e-12);
          EXPECT_NEAR(cells[ci].semantic_recall, sr / nq, 1e-12);
          rsum += 100 * v / nq;
          nsum += 100 * n / nq;
          nsum_n += 100 * nn / nq;
        }
      }
      EXPECT_NEAR(r.rsum, rsum, 1e-9);
      EXPECT_NEAR(r.nsum, nsum, 1e-9);
      EXPECT_NEAR(r.nsum_non_gt, nsum_n, 1e-9);
    }
  }
}

TEST(Aggregate, RejectsMismatchedRuns) {
  const Corpus c = toy();
  const SimMatrix sim = build_sim_matrix(c, build_df(c));
  const RetrievalRun i2t = perfect_run(c, Direction::kI2T);
  EXPECT_THROW(aggregate(i2t, i2t, c, sim), Error);
  RetrievalRun bad = perfect_run(c, Direction::kT2I);
  bad.ranked[0][0] = bad.ranked[0][1];
  EXPECT_THROW(aggregate(i2t, bad, c, sim), Error);
}

TEST(MetricProperties, RandomRankings) {
  const Corpus c = toy();
  const SimMatrix sim = build_sim_matrix(c, build_df(c));
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    for (Direction d : {Direction::kI2T, Direction::kT2I}) {
      const std::size_t nq = d == Direction::kI2T ? c.num_images() : c.num_captions();
      const std::size_t ni = d == Direction::kI2T ? c.num_captions() : c.num_images();
      const RetrievalRun run = random_run(d, nq, ni, rng);
      const std::size_t m = 5;
      const auto ext = extended_sets(sim, d, m);
      std::vector<double> prev_v(nq, 0), prev_r(nq, 0), prev_s(nq, 0), prev_n(nq, 0);
      for (std::size_t k = 1; k <= ni; ++k) {
        const auto v = recall_vse(run, c, k).per_query;
        const auto r = recall_ir(run, c, k).per_query;
        const auto s = semantic_recall(run, ext, k).per_query;
        const auto n = ncs(run, ext, k).per_query;
        for (std::size_t q = 0; q < nq; ++q) {
          EXPECT_LE(r[q], v[q]);
          if (d == Direction::kT2I) {
            EXPECT_EQ(r[q], v[q]);
          }
          EXPECT_GE(v[q], prev_v[q]);
          EXPECT_GE(r[q], prev_r[q]);
          EXPECT_GE(s[q], prev_s[q]);
          EXPECT_GE(n[q], prev_n[q]);
          EXPECT_LE(n[q], 1.0 + 1e-12);
          // NCS reaches 1 exactly when the whole extended set is retrieved.
          const auto t = oracle::top(run.ranked[q], k);
          bool subset = true, positive = true;
          for (const auto& it : ext[q].items) {
            subset = subset && t.count(it.index);
            positive = positive && it.value > 0.0;
          }
          if (positive) {
            EXPECT_EQ(n[q] == 1.0, subset) << q << " " << k;
          }
        }
        prev_v = v, prev_r = r, prev_s = s, prev_n = n;
      }
    }
  }
}

TEST(MetricProperties, TailRelabelingChangesNothing) {
  const Corpus c = toy();
  const SimMatrix sim = build_sim_matrix(c, build_df(c));
  std::mt19937_64 rng(13);
  const std::size_t kmax = 10;
  for (int trial = 0; trial < 50; ++trial) {
    const RetrievalRun run = random_run(Direction::kI2T, c.num_images(), c.num_captions(), rng);
    RetrievalRun tail = run;
    for (auto& list : tail.ranked) std::shuffle(list.begin() + kmax, list.end(), rng);
    const MetricReport a = aggregate(run, perfect_run(c, Direction::kT2I), c, sim);
    const MetricReport b = aggregate(tail, perfect_run(c, Direction::kT2I), c, sim);
    for (std::size_t i = 0; i < a.i2t.size(); ++i) {
      EXPECT_EQ(a.i2t[i].recall_vse, b.i2t[i].recall_vse);
      EXPECT_EQ(a.i2t[i].recall_ir, b.i2t[i].recall_ir);
      EXPECT_EQ(a.i2t[i].semantic_recall, b.i2t[i].semantic_recall);
      EXPECT_EQ(a.i2t[i].ncs, b.i2t[i].ncs);
    }
    // GT removal pulls up to |G_i| = 5 items from below the cut-off.
    RetrievalRun deep = run;
    for (auto& list : deep.ranked) std::shuffle(list.begin() + kmax + 5, list.end(), rng);
    EXPECT_EQ(a.to_json(), aggregate(deep, perfect_run(c, Direction::kT2I), c, sim).to_json());
  }
}

TEST(Ranking, ByScoresDescendingStableOnTies) {
  Eigen::MatrixXd s(2, 4);
  s << 0.1, 0.9, 0.9, 0.5,
       1.0, 1.0, 1.0, 1.0;
  const RetrievalRun r = rank_by_scores(s, Direction::kI2T);
  EXPECT_EQ(r.ranked[0], (std::vector<std::uint32_t>{1, 2, 3, 0}));
  EXPECT_EQ(r.ranked[1], identity(4));
}

TEST(RunFile, RoundTripsAndValidates) {
  const auto dir = testing::scratch_dir("run_file");
  std::mt19937_64 rng(1);
  const RetrievalRun run = random_run(Direction::kT2I, 7, 4, rng);
  save_run(run, dir / "model_a.itrr");
  const RetrievalRun back = load_run(dir / "model_a.itrr");
  EXPECT_EQ(back.ranked, run.ranked);
  EXPECT_EQ(back.direction, Direction::kT2I);
  EXPECT_EQ(back.model_tag, "model_a");
  EXPECT_EQ(serialize_run(back), serialize_run(run));

  RetrievalRun dup = run;
  dup.ranked[2][1] = dup.ranked[2][0];
  EXPECT_THROW(deserialize_run(serialize_run(dup)), Error);
  std::string bytes = serialize_run(run);
  bytes[4] = 7;
  EXPECT_THROW(deserialize_run(bytes), Error);
}

TEST(Pearson, Examples) {
  std::vector<double> x(100), y(100), z(100);
  for (int i = 0; i < 100; ++i) {
    x[i] = i * 0.37 - 4;
    y[i] = 2 * x[i] + 1;
    z[i] = -x[i];
  }
  EXPECT_NEAR(pearson_r(x, y), 1.0, 1e-12);
  EXPECT_NEAR(pearson_r(x, z), -1.0, 1e-12);
}

TEST(Pearson, MatchesTwoPassOracle) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(100), y(100);
    for (int i = 0; i < 100; ++i) {
      x[i] = g(rng);
      y[i] = 0.5 * x[i] + g(rng);
    }
    const double r = pearson_r(x, y);
    EXPECT_NEAR(r, oracle::pearson(x, y), 1e-12);
    EXPECT_NEAR(pearson_r(y, x), r, 1e-12);
    std::vector<double> ax(100);
    for (int i = 0; i < 100; ++i) ax[i] = 3.5 * x[i] - 11.0;
    EXPECT_NEAR(pearson_r(ax, y), r, 1e-12);
  }
}

TEST(Pearson, UndefinedInputsAreErrors) {
  const std::vector<double> flat{2, 2, 2}, ramp{1, 2, 3}, one{1};
  EXPECT_THROW(pearson_r(flat, ramp), Error);
  EXPECT_THROW(pearson_r(one, one), Error);
  EXPECT_THROW(pearson_r(ramp, std::vector<double>{1, 2}), Error);
}

TEST(Judgments, ParsesHeaderAndJoins) {
  const auto human = parse_judgments("image_id\tcaption_id\tscore\na\t1\t0.5\na\t2\t1.5\nb\t3\t3\n");
  ASSERT_EQ(human.size(), 3u);
  EXPECT_EQ(human[1].caption_id, "2");
  EXPECT_EQ(human[2].score, 3.0);
  const auto metric = parse_judgments("a\t1\t1\na\t2\t2\nb\t3\t4\nz\t9\t1\n");
  const Correlation c = correlate(human, metric);
  EXPECT_EQ(c.matched, 3u);
  EXPECT_EQ(c.unmatched, 0u);
  EXPECT_EQ(correlate(metric, human).unmatched, 1u);
  EXPECT_NEAR(c.r, oracle::pearson({0.5, 1.5, 3}, {1, 2, 4}), 1e-12);
  EXPECT_THROW(parse_judgments("a\t1\n"), Error);
  EXPECT_THROW(parse_judgments("a\t1\t0.5\nb\t2\tabc\n"), Error);
}

}  // namespace
}  // namespace itm
