#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "quoteflow/corpus.hpp"

namespace quoteflow {

// n-hop exposures to the source vector z through the directed network A:
// row n-1 holds s^(n) = log((A^T)^n z + 1), elementwise natural log.
Eigen::MatrixXd compute_exposures(const Eigen::MatrixXd& A, const Eigen::VectorXd& z,
                                  int n_hops);

struct GlmmParams {
  double tau = 0.0;
  std::vector<double> gamma;  // per hop, each in (0,1)
  Eigen::VectorXd beta;
  double mu = 0.0;
  Eigen::VectorXd eps;  // per-outlet heterogeneity, Normal(0, 0.1)
};

// Per-outlet log Poisson rate:
//   tau*z_j + sum_n s_j^(n) * tau * prod_{k<=n} gamma_k + beta'x_j + mu + eps_j
Eigen::VectorXd linear_predictor(const Eigen::VectorXd& z,
                                 const Eigen::MatrixXd& exposures,
                                 const GlmmParams& params, const Eigen::MatrixXd& x);

struct McmcConfig {
  int n_hops = 2;  // 1..4
  int chains = 4;
  int iterations = 5000;  // per chain, burn-in included
  double burn_fraction = 0.5;
  int thin = 5;
  std::uint64_t seed = 1;
  bool sample_network = true;
  double prior_sd = 10.0;     // tau, beta, mu ~ Normal(0, prior_sd^2)
  double eps_variance = 0.1;  // fixed per the outcome model

  void validate() const;
};

struct ParamDraw {
  double tau = 0.0;
  std::vector<double> gamma;
  Eigen::VectorXd beta;
  double mu = 0.0;
  Eigen::VectorXd eps;
};

struct DiagnosticRow {
  std::string parameter;
  double rhat = 0.0;
  double ess = 0.0;
};

struct FitResult {
  McmcConfig config;
  int n_outlets = 0;
  Eigen::MatrixXd x;  // standardized design actually used by the sampler
  std::vector<std::vector<ParamDraw>> draws;  // per chain, post burn-in, thinned
  std::vector<Eigen::MatrixXd> network_draws;  // thinned A samples, chains merged
  Eigen::MatrixXd network_mean;
  std::vector<DiagnosticRow> diagnostics;
  std::vector<std::string> warnings;  // non-convergence is flagged, never silent

  std::vector<ParamDraw> merged() const;
  bool converged(double threshold = 1.1) const;
};

// Joint Poisson GLMM fit over every source analysis: one observation per
// ordered outlet pair (i,j), i != j, outcome Y(i,j), with exposures of target
// j to source i flowing through the sampled network. A is sampled per edge
// from its Poisson(kappa_prior) prior tempered by the outcome likelihood;
// kappa_prior = 0 pins an edge to zero. Metropolis-within-Gibbs with
// adaptation during burn-in only.
FitResult fit(const Eigen::MatrixXi& outcomes, const Eigen::MatrixXd& kappa_prior,
              const Eigen::MatrixXd& covariates, const McmcConfig& cfg);

// Column z-scoring as applied inside fit(); near-constant columns are zeroed.
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& m);

struct ImpactRow {
  int source = 0, target = 0;
  double kappa = 0.0;  // outcome-channel salience, the max potential impact
  double mean = 0.0, median = 0.0, lo95 = 0.0, hi95 = 0.0;
  bool has_normalized = false;  // only where kappa > 0
  double normalized_mean = 0.0, normalized_lo = 0.0, normalized_hi = 0.0;
  bool out_of_range = false;  // normalized 95% interval entirely outside [0,1]
};

// Observed outcome minus counterfactual draws (source removed, exposures
// gone, per-outlet eps kept from the posterior). Normalized impact divides
// by 10*kappa and is omitted where kappa = 0.
std::vector<ImpactRow> estimate_impact(const FitResult& fit,
                                       const Eigen::MatrixXi& outcomes,
                                       const Eigen::MatrixXd& kappa_outcome,
                                       int source, std::uint64_t seed);

// Posterior-predictive contrast between two treatment vectors with both arms
// imputed; exposures are recomputed per posterior network sample.
std::vector<ImpactRow> impact_contrast(const FitResult& fit,
                                       const Eigen::VectorXd& z_plus,
                                       const Eigen::VectorXd& z_minus,
                                       std::uint64_t seed);

struct ImpactTables {
  std::vector<std::string> outlets;
  Eigen::MatrixXd slant;         // pro_a minus pro_b (pro_b negative by convention)
  Eigen::MatrixXd total;         // pro_a plus pro_b
  Eigen::MatrixXd differential;  // total(i,j) - total(j,i)
  Eigen::VectorXd outlet_slant;  // per-source sums over targets
  Eigen::VectorXd outlet_total;
};

ImpactTables slant_and_totals(const std::vector<ImpactRow>& pro_a,
                              const std::vector<ImpactRow>& pro_b,
                              const std::vector<std::string>& outlets);

struct GroupRow {
  std::string source_group, target_group;
  double mean_normalized = 0.0;      // unweighted average over pairs
  double weighted_normalized = 0.0;  // kappa-weighted average
  long n_pairs = 0;
};

// Average normalized impact by (source group -> target group). Keys:
// "orientation", "country", "outlet". Pairs without a normalized value are
// skipped.
std::vector<GroupRow> group_report(const std::vector<ImpactRow>& impacts,
                                   const std::vector<Outlet>& outlets,
                                   const std::string& source_key,
                                   const std::string& target_key);

std::string impacts_to_csv(const std::vector<ImpactRow>& rows,
                           const std::vector<std::string>& outlets,
                           const std::string& channel);
std::string posterior_to_csv(const FitResult& fit);
// Rebuilds per-chain draws from a posterior CSV (n_outlets eps columns,
// n_cov beta columns expected).
std::vector<std::vector<ParamDraw>> posterior_from_csv(const std::string& content,
                                                       int n_outlets, int n_cov,
                                                       int n_hops);
std::string diagnostics_to_csv(const FitResult& fit);
std::string groups_to_csv(const std::vector<GroupRow>& rows);

}  // namespace quoteflow
