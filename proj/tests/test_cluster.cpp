#include <algorithm>

#include "doctest.h"
#include "oracles.hpp"
#include "quoteflow/cluster.hpp"
#include "quoteflow/rng.hpp"
#include "quoteflow/util.hpp"
#include "test_common.hpp"

using namespace quoteflow;

namespace {

std::vector<std::string> row_ids(int n, const std::string& prefix = "p") {
  std::vector<std::string> ids;
  char buf[16];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%s%04d", prefix.c_str(), i);
    ids.push_back(buf);
  }
  return ids;
}

// Two 10-point unit-variance blobs 100 apart plus 2 far outliers.
Eigen::MatrixXd two_blob_fixture(Rng& rng) {
  Eigen::MatrixXd pts(22, 2);
  for (int i = 0; i < 10; ++i) {
    pts(i, 0) = rng.normal(0.0, 1.0);
    pts(i, 1) = rng.normal(0.0, 1.0);
  }
  for (int i = 10; i < 20; ++i) {
    pts(i, 0) = rng.normal(100.0, 1.0);
    pts(i, 1) = rng.normal(0.0, 1.0);
  }
  // Outliers farther out than the blob separation, so they detach from the
  // hierarchy root rather than from a blob's cluster.
  pts(20, 0) = 50.0;
  pts(20, 1) = 400.0;
  pts(21, 0) = -60.0;
  pts(21, 1) = -350.0;
  return pts;
}

}  // namespace

TEST_CASE("all identical points form one cluster with no noise") {
  Eigen::MatrixXd pts = Eigen::MatrixXd::Constant(10, 3, 1.25);
  ClusterParams params;
  params.min_cluster_size = 5;
  params.min_samples = 3;
  const ClusterResult res = hdbscan(pts, row_ids(10), params);
  CHECK(res.n_clusters == 1);
  for (int i = 0; i < 10; ++i) {
    CHECK(res.labels[i] == 0);
    CHECK(res.probability[i] == doctest::Approx(1.0));
  }
}

TEST_CASE("two separated blobs with outliers match the level-sweep oracle") {
  Rng rng(42);
  const Eigen::MatrixXd pts = two_blob_fixture(rng);
  ClusterParams params;
  params.min_cluster_size = 5;
  params.min_samples = 3;
  const ClusterResult res = hdbscan(pts, row_ids(22), params);

  CHECK(res.n_clusters == 2);
  const auto got = oracle::canonical_partition(res.labels);
  CHECK(got.noise.size() == 2);
  CHECK(std::find(got.noise.begin(), got.noise.end(), 20) != got.noise.end());
  CHECK(std::find(got.noise.begin(), got.noise.end(), 21) != got.noise.end());

  const auto want = oracle::hdbscan_by_level_sweep(pts, 5, 3, false);
  CHECK(oracle::same_partition(got, want));
}

TEST_CASE("too few points is an error") {
  Eigen::MatrixXd pts(6, 1);
  for (int i = 0; i < 6; ++i) pts(i, 0) = i;
  ClusterParams params;
  params.min_cluster_size = 7;
  params.min_samples = 3;
  CHECK_THROWS_AS(hdbscan(pts, row_ids(6), params), Error);
  pts(0, 0) = std::nan("");
  params.min_cluster_size = 3;
  CHECK_THROWS_AS(hdbscan(pts, row_ids(6), params), Error);
}

TEST_CASE("params validation") {
  ClusterParams p;
  p.min_cluster_size = 1;
  CHECK_THROWS_AS(p.validate(), Error);
  p.min_cluster_size = 3;
  p.min_samples = 4;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("row permutation and positive scaling leave the partition unchanged") {
  Rng rng(7);
  const Eigen::MatrixXd pts = two_blob_fixture(rng);
  const auto ids = row_ids(22);
  ClusterParams params;
  params.min_cluster_size = 4;
  params.min_samples = 2;
  const ClusterResult base = hdbscan(pts, ids, params);

  SUBCASE("permutation") {
    std::vector<int> perm(22);
    for (int i = 0; i < 22; ++i) perm[i] = i;
    Rng shuffle_rng(99);
    for (int i = 21; i > 0; --i) {
      std::swap(perm[i], perm[shuffle_rng.uniform_int(i + 1)]);
    }
    Eigen::MatrixXd shuffled(22, 2);
    std::vector<std::string> shuffled_ids(22);
    for (int i = 0; i < 22; ++i) {
      shuffled.row(i) = pts.row(perm[i]);
      shuffled_ids[i] = ids[perm[i]];
    }
    const ClusterResult res = hdbscan(shuffled, shuffled_ids, params);
    // Map back to original row indexing before comparing.
    std::vector<int> unshuffled(22);
    for (int i = 0; i < 22; ++i) unshuffled[perm[i]] = res.labels[i];
    CHECK(oracle::same_partition(oracle::canonical_partition(unshuffled),
                                 oracle::canonical_partition(base.labels)));
  }
  SUBCASE("scaling by 4 and by 0.25") {
    for (const double s : {4.0, 0.25}) {
      const ClusterResult res = hdbscan((pts.array() * s).matrix(), ids, params);
      CHECK(oracle::same_partition(oracle::canonical_partition(res.labels),
                                   oracle::canonical_partition(base.labels)));
    }
  }
}

TEST_CASE("every cluster has at least min_cluster_size members") {
  Rng rng(123);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 18 + static_cast<int>(rng.uniform_int(10));
    Eigen::MatrixXd pts(n, 3);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) pts(i, j) = rng.normal(0.0, 5.0);
    }
    ClusterParams params;
    params.min_cluster_size = 3 + static_cast<int>(rng.uniform_int(3));
    params.min_samples = 1 + static_cast<int>(rng.uniform_int(params.min_cluster_size));
    const ClusterResult res = hdbscan(pts, row_ids(n), params);
    for (const auto& members : res.members) {
      CHECK(static_cast<int>(members.size()) >= params.min_cluster_size);
    }
  }
}

TEST_CASE("leaf selection also matches the oracle") {
  Rng rng(5);
  const Eigen::MatrixXd pts = two_blob_fixture(rng);
  ClusterParams params;
  params.min_cluster_size = 5;
  params.min_samples = 2;
  params.selection = ClusterSelection::leaf;
  const ClusterResult res = hdbscan(pts, row_ids(22), params);
  const auto want = oracle::hdbscan_by_level_sweep(pts, 5, 2, true);
  CHECK(oracle::same_partition(oracle::canonical_partition(res.labels), want));
}

TEST_CASE("evaluate_matching pairwise counting") {
  SUBCASE("identical labelings are perfect") {
    std::map<std::string, int> pred{{"a", 0}, {"b", 0}, {"c", 1}, {"d", 2}};
    const MatchEvaluation ev = evaluate_matching(pred, pred);
    CHECK(ev.precision == 1.0);
    CHECK(ev.recall == 1.0);
    CHECK(ev.accuracy == 1.0);
  }
  SUBCASE("over-merging: truth {a,b},{c}; predicted {a,b,c}") {
    std::map<std::string, int> pred{{"a", 0}, {"b", 0}, {"c", 0}};
    std::map<std::string, int> truth{{"a", 0}, {"b", 0}, {"c", 1}};
    const MatchEvaluation ev = evaluate_matching(pred, truth);
    CHECK(ev.tp == 1);
    CHECK(ev.fp == 2);
    CHECK(ev.fn == 0);
    CHECK(ev.precision == doctest::Approx(1.0 / 3.0));
    CHECK(ev.recall == 1.0);
  }
  SUBCASE("all-singleton prediction: precision forced to 1 with flag, recall 0") {
    std::map<std::string, int> pred{{"a", -1}, {"b", -1}, {"c", -1}, {"d", -1}};
    std::map<std::string, int> truth{{"a", 0}, {"b", 0}, {"c", 1}, {"d", 1}};
    const MatchEvaluation ev = evaluate_matching(pred, truth);
    CHECK(ev.tp == 0);
    CHECK(ev.fp == 0);
    CHECK(ev.fn == 2);
    CHECK(ev.no_positive_predictions);
    CHECK(ev.precision == 1.0);
    CHECK(ev.recall == 0.0);
  }
  SUBCASE("truth quote missing from prediction is an error") {
    std::map<std::string, int> pred{{"a", 0}};
    std::map<std::string, int> truth{{"a", 0}, {"b", 0}};
    CHECK_THROWS_AS(evaluate_matching(pred, truth), Error);
  }
  SUBCASE("merging truth clusters never decreases recall") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
      std::map<std::string, int> truth, pred, merged;
      for (int i = 0; i < 12; ++i) {
        const std::string q = "q" + std::to_string(i);
        truth[q] = static_cast<int>(rng.uniform_int(4));
        pred[q] = static_cast<int>(rng.uniform_int(5));
      }
      // Merge predicted clusters 0 and 1.
      for (const auto& [q, l] : pred) merged[q] = l == 1 ? 0 : l;
      const double before = evaluate_matching(pred, truth).recall;
      const double after = evaluate_matching(merged, truth).recall;
      CHECK(after >= before - 1e-12);
    }
  }
}

TEST_CASE("sweep produces one row per setting, sorted by recall") {
  Rng rng(17);
  const Eigen::MatrixXd pts = two_blob_fixture(rng);
  const auto ids = row_ids(22);
  std::map<std::string, int> truth;
  for (int i = 0; i < 22; ++i) truth[ids[i]] = i < 10 ? 0 : (i < 20 ? 1 : 2 + i);

  SUBCASE("grid of one") {
    ClusterParams p;
    p.min_cluster_size = 5;
    p.min_samples = 2;
    const auto rows = sweep(pts, ids, {p}, truth);
    CHECK(rows.size() == 1);
    CHECK(rows[0].ok);
  }
  SUBCASE("merging setting has recall at least as high") {
    ClusterParams tight;
    tight.min_cluster_size = 5;
    tight.min_samples = 2;
    ClusterParams merged = tight;
    merged.min_cluster_size = 22;  // forces everything into the root cluster
    const auto rows = sweep(pts, ids, {tight, merged}, truth);
    REQUIRE(rows.size() == 2);
    double recall_tight = -1.0, recall_merged = -1.0;
    for (const auto& r : rows) {
      (r.params.min_cluster_size == 22 ? recall_merged : recall_tight) = r.eval.recall;
    }
    CHECK(recall_merged >= recall_tight - 1e-12);
    CHECK(std::is_sorted(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return a.eval.recall < b.eval.recall;
    }));
    const auto csv = sweep_to_csv(rows);
    CHECK(csv.find("min_cluster_size") != std::string::npos);
  }
  SUBCASE("empty truth is an error") {
    ClusterParams p;
    CHECK_THROWS_AS(sweep(pts, ids, {p}, {}), Error);
  }
  SUBCASE("per-row failures are recorded, not fatal") {
    ClusterParams bad;
    bad.min_cluster_size = 50;  // more than n
    ClusterParams good;
    good.min_cluster_size = 5;
    good.min_samples = 2;
    const auto rows = sweep(pts, ids, {bad, good}, truth);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ok);
    CHECK_FALSE(rows[1].ok);
    CHECK(!rows[1].error.empty());
  }
}

TEST_CASE("cluster_quotes joins outlet usage detail") {
  Corpus corpus;
  corpus.outlets = {{"A", "A", "X", Orientation::unknown},
                    {"B", "B", "X", Orientation::unknown}};
  // Two identical-text groups of 3, far apart in embedding space.
  ReducedMatrix red;
  red.vectors.resize(6, 2);
  for (int i = 0; i < 6; ++i) {
    const bool second = i >= 3;
    red.vectors(i, 0) = second ? 50.0 : 0.0;
    red.vectors(i, 1) = i * 0.01;
    QuoteRecord r;
    r.quote_id = "q" + std::to_string(i);
    r.outlet_id = i % 2 ? "A" : "B";
    r.text = "t";
    r.published_at = 86400 * i;
    r.topic = "t";
    r.sentiment = Sentiment::neutral;
    corpus.records.push_back(r);
    red.quote_ids.push_back("q" + std::to_string(i));
  }
  corpus.rebuild_index();
  ClusterParams params;
  params.min_cluster_size = 3;
  params.min_samples = 1;
  const QuoteClustering qc = cluster_quotes(red, corpus, params);
  REQUIRE(qc.clusters.size() == 2);
  CHECK(qc.clusters[0].distinct_outlets() == 2);
  const auto times = qc.clusters[0].usage_times("B");
  CHECK(std::is_sorted(times.begin(), times.end()));
}
