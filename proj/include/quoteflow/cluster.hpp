#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "quoteflow/corpus.hpp"
#include "quoteflow/embed.hpp"

namespace quoteflow {

enum class ClusterSelection { excess_of_mass, leaf };

struct ClusterParams {
  int min_cluster_size = 5;
  int min_samples = 3;
  ClusterSelection selection = ClusterSelection::excess_of_mass;

  void validate() const;  // min_samples <= min_cluster_size, both sane
};

struct ClusterResult {
  std::vector<int> labels;          // per input row; -1 = noise
  std::vector<double> probability;  // membership strength, 0 for noise
  int n_clusters = 0;
  std::vector<std::vector<int>> members;  // rows per cluster, sorted
};

// HDBSCAN*: core distances at min_samples (self counted, as in the original
// formulation), mutual-reachability distances, MST, condensed tree at
// min_cluster_size, extraction per `selection`. Merges at exactly equal
// heights are treated as one multiway split, which makes the partition
// independent of input order even under tied distances. The hierarchy root is
// itself a selectable cluster, so a single homogeneous blob yields one
// cluster rather than all-noise.
ClusterResult hdbscan(const Eigen::MatrixXd& points,
                      const std::vector<std::string>& ids,
                      const ClusterParams& params);

// Same, with a caller-supplied Euclidean distance matrix (reused by sweep).
ClusterResult hdbscan_with_distances(const Eigen::MatrixXd& dist,
                                     const std::vector<std::string>& ids,
                                     const ClusterParams& params);

struct QuoteUse {
  std::string quote_id;
  std::string outlet_id;
  std::int64_t time = 0;
  Sentiment channel = Sentiment::neutral;
  std::string topic;
};

// A matched-quote group: the q of the salience sum.
struct QuoteCluster {
  int cluster_id = -1;
  std::vector<QuoteUse> members;  // sorted by quote_id

  // Distinct outlets using this quote (optionally restricted to a channel).
  int distinct_outlets(const Sentiment* channel = nullptr) const;
  // Ascending usage times for one outlet (optionally one channel).
  std::vector<std::int64_t> usage_times(const std::string& outlet_id,
                                        const Sentiment* channel = nullptr) const;
};

struct QuoteClustering {
  std::vector<QuoteCluster> clusters;
  std::vector<std::string> noise;  // quote_ids outside every cluster
  ClusterResult assignment;
};

// Clusters reduced embeddings and joins outlet/time/channel detail from the
// corpus. Every corpus record must appear in `reduced`.
QuoteClustering cluster_quotes(const ReducedMatrix& reduced, const Corpus& corpus,
                               const ClusterParams& params);

void export_assignments(const QuoteClustering& qc,
                        const std::vector<std::string>& ids,
                        const std::string& path);

struct MatchEvaluation {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 1.0;
  double recall = 1.0;
  double accuracy = 1.0;
  bool no_positive_predictions = false;  // TP+FP == 0, precision forced to 1
  bool no_positive_truth = false;        // TP+FN == 0, recall forced to 1
};

// Pairwise evaluation over the truth subset: a pair is TP when it shares a
// cluster in both labelings. Noise points count as singletons. Every truth
// quote must be present in `predicted`.
MatchEvaluation evaluate_matching(const std::map<std::string, int>& predicted,
                                  const std::map<std::string, int>& truth);

struct SweepRow {
  ClusterParams params;
  MatchEvaluation eval;
  bool ok = true;
  std::string error;
};

// One row per grid entry, sorted by recall; per-row failures are recorded,
// not fatal.
std::vector<SweepRow> sweep(const Eigen::MatrixXd& points,
                            const std::vector<std::string>& ids,
                            const std::vector<ClusterParams>& grid,
                            const std::map<std::string, int>& truth);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

}  // namespace quoteflow
