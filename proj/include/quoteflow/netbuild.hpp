#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "quoteflow/salience.hpp"

namespace quoteflow {

// Directed weighted influence network; each edge carries a Poisson prior with
// rate kappa_ij (rate 0 pins the edge to 0 downstream).
struct InfluenceNetwork {
  Eigen::MatrixXd adjacency;  // initialized to kappa; doubles as the prior rate
  std::vector<std::string> outlets;
};

InfluenceNetwork build_network(const SalienceMatrix& kappa);

struct NodeCovariates {
  std::vector<std::string> outlets;
  Eigen::VectorXd in_degree;   // column sums of the adjacency
  Eigen::VectorXd out_degree;  // row sums
  Eigen::VectorXi community;   // 0..C-1 per node
  int n_communities = 0;

  // GLMM design matrix: in_degree, out_degree, then community one-hots under
  // reference coding (community 0 dropped, absorbed by the baseline).
  Eigen::MatrixXd design() const;
  std::vector<std::string> design_names() const;
};

// Fits a degree-corrected Poisson blockmodel to the symmetrized adjacency
// (W = A + A^T): spectral/k-means initialization plus seeded random restarts,
// each refined by greedy node moves on the Karrer-Newman log-likelihood.
// Deterministic given the seed. Labels are canonical (first appearance order).
NodeCovariates detect_communities(const InfluenceNetwork& net, int n_communities = 10,
                                  std::uint64_t seed = 1, int restarts = 8);

// The refinement objective, exposed for tests.
double blockmodel_loglik(const Eigen::MatrixXd& sym_adjacency,
                         const std::vector<int>& labels, int n_communities);

// Greedy ascent from a given partition; returns the refined labels and the
// objective value after every accepted move (nondecreasing).
std::pair<std::vector<int>, std::vector<double>> refine_blockmodel(
    const Eigen::MatrixXd& sym_adjacency, std::vector<int> labels, int n_communities);

struct EdgeAnnotation {
  double total_impact = 0.0;
  double slant = 0.0;
};

// DOT export; when `impacts` has an entry for (i,j) the edge gains
// total_impact / slant attributes.
std::string export_graph(const InfluenceNetwork& net,
                         const std::map<std::pair<int, int>, EdgeAnnotation>* impacts = nullptr);

std::string covariates_to_csv(const NodeCovariates& cov);

}  // namespace quoteflow
