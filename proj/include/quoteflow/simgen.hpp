#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "quoteflow/causal.hpp"
#include "quoteflow/corpus.hpp"
#include "quoteflow/rng.hpp"

namespace quoteflow {

struct SimCommunities {
  std::vector<int> sizes;     // must sum to n_outlets
  double within_rate = 4.0;   // expected edge weight inside a block
  double between_rate = 0.2;  // across blocks
};

struct SimConfig {
  int n_outlets = 20;
  int n_quotes = 400;  // paraphrase families
  GlmmParams truth;    // tau, gamma, mu; beta may be empty
  SimCommunities communities;
  double pro_a_fraction = 0.45;
  double pro_b_fraction = 0.45;  // remainder neutral
  std::uint64_t seed = 1;
  int n_hops = 2;
  double follow_scale = 0.25;  // edge weight -> adoption probability scale
  double extra_use_p = 0.35;   // truncated-geometric extra uses
  int max_uses = 5;
  double state_fraction = 0.3;  // leading share of each block marked state_controlled
  int n_topics = 5;
  int hub_outlet = -1;     // optional wire-service style hub...
  double hub_scale = 1.0;  // ...whose outgoing edge rates are scaled by this

  void validate() const;
};

struct SimTruth {
  Eigen::MatrixXd a_star;               // true influence network
  Eigen::MatrixXd expected_follows;     // analytic expected adoptions per pair
  Corpus corpus;                        // generated records + outlet table
  std::map<std::string, int> families;  // quote_id -> paraphrase family
  std::vector<std::string> outlets;
};

// Synthetic media ecosystem: network from the community settings, quote cascades
// propagated with adoption probability increasing in exposure, timestamps
// with the source strictly first, template paraphrase texts per family.
// Byte-identical output for a fixed seed.
SimTruth generate(const SimConfig& cfg);

// Exact record/family counts for clustering benchmarks: `n_records` texts in
// `n_families` paraphrase families spread over `n_outlets`.
SimTruth generate_paraphrase_corpus(int n_records, int n_families, int n_outlets,
                                    std::uint64_t seed);

// A world drawn exactly from the outcome model, for estimator validation:
// kappa_hat from the block rates, A* ~ Poisson(kappa_hat) (optionally zeroed
// across blocks to plant pure homophily), eps* ~ Normal(0, eps_variance),
// Y_ij ~ Poisson(GLMM rate). Covariates are the ones the estimator itself
// would derive from kappa_hat.
struct GlmmWorld {
  Eigen::MatrixXd kappa_hat;
  Eigen::MatrixXd a_star;
  Eigen::MatrixXi outcomes;
  Eigen::MatrixXd covariates;
  Eigen::VectorXd eps_star;
  GlmmParams truth;
  int n_hops = 2;
  std::vector<int> block;  // true block per outlet
  std::vector<Outlet> outlet_meta;
  std::vector<std::string> outlets;
};

GlmmWorld generate_glmm_world(const SimConfig& cfg, bool zero_cross_effect = false);

// Monte-Carlo ground-truth impact: re-simulates outlet j's outcome with and
// without i as source under the true network and parameters. Rate arithmetic
// is inlined here, independent of the estimator's code path.
double oracle_impact(const GlmmWorld& world, int source, int target,
                     int replicates = 10000, std::uint64_t seed = 99);

std::string truth_edges_csv(const SimTruth& truth);
std::string families_csv(const SimTruth& truth);

}  // namespace quoteflow
