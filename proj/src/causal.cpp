#include "quoteflow/causal.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <set>
#include <sstream>

#include "quoteflow/rng.hpp"
#include "quoteflow/util.hpp"

namespace quoteflow {

Eigen::MatrixXd compute_exposures(const Eigen::MatrixXd& A, const Eigen::VectorXd& z,
                                  int n_hops) {
  if (A.rows() != A.cols()) throw Error("compute_exposures: A not square");
  if (z.size() != A.rows()) throw Error("compute_exposures: z/A dimension mismatch");
  if (n_hops < 1) throw Error("compute_exposures: n_hops must be >= 1");
  Eigen::MatrixXd s(n_hops, A.rows());
  Eigen::VectorXd v = z;
  for (int n = 0; n < n_hops; ++n) {
    v = A.transpose() * v;
    s.row(n) = v.array().log1p().transpose();
  }
  return s;
}

Eigen::VectorXd linear_predictor(const Eigen::VectorXd& z,
                                 const Eigen::MatrixXd& exposures,
                                 const GlmmParams& params, const Eigen::MatrixXd& x) {
  const Eigen::Index n = z.size();
  if (exposures.cols() != n) throw Error("linear_predictor: exposure dimension mismatch");
  const int n_hops = static_cast<int>(exposures.rows());
  if (static_cast<int>(params.gamma.size()) < n_hops) {
    throw Error("linear_predictor: need one gamma per hop");
  }
  for (const double g : params.gamma) {
    if (!(g > 0.0 && g < 1.0)) throw Error("linear_predictor: gamma outside (0,1)");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Constant(n, params.mu);
  out += params.tau * z;
  double prod = 1.0;
  for (int h = 0; h < n_hops; ++h) {
    prod *= params.gamma[h];
    out += params.tau * prod * exposures.row(h).transpose();
  }
  if (x.cols() > 0) {
    if (x.rows() != n || params.beta.size() != x.cols()) {
      throw Error("linear_predictor: covariate dimension mismatch");
    }
    out += x * params.beta;
  }
  if (params.eps.size() > 0) {
    if (params.eps.size() != n) throw Error("linear_predictor: eps dimension mismatch");
    out += params.eps;
  }
  if (!out.allFinite()) throw Error("linear_predictor: non-finite result");
  return out;
}

void McmcConfig::validate() const {
  if (n_hops < 1 || n_hops > 4) throw Error("mcmc: n_hops must be in 1..4");
  if (chains < 2) throw Error("mcmc: need at least 2 chains");
  if (iterations < 20) throw Error("mcmc: need at least 20 iterations");
  if (!(burn_fraction > 0.0 && burn_fraction < 1.0)) {
    throw Error("mcmc: burn_fraction must be in (0,1)");
  }
  if (thin < 1) throw Error("mcmc: thin must be >= 1");
}

std::vector<ParamDraw> FitResult::merged() const {
  std::vector<ParamDraw> out;
  for (const auto& chain : draws) out.insert(out.end(), chain.begin(), chain.end());
  return out;
}

bool FitResult::converged(double threshold) const {
  for (const auto& d : diagnostics) {
    if (d.rhat > threshold) return false;
  }
  return true;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

// log density of logit(gamma) when gamma ~ Uniform(0,1).
double logistic_logpdf(double l) {
  const double a = std::fabs(l);
  return -a - 2.0 * std::log1p(std::exp(-a));
}

double normal_logpdf_kernel(double x, double sd) { return -0.5 * (x / sd) * (x / sd); }

struct Chain {
  const Eigen::MatrixXi& y;
  const Eigen::MatrixXd& kappa;
  const Eigen::MatrixXd& x;
  const McmcConfig& cfg;
  int n, n_hops, n_cov;
  Rng rng;

  double tau = 0.0, mu = 0.0;
  std::vector<double> lgam;
  Eigen::VectorXd beta, eps;
  Eigen::MatrixXd a;                 // current network
  std::vector<Eigen::MatrixXd> pow;  // A^1..A^H
  std::vector<Eigen::MatrixXd> s;    // log(pow+1)
  Eigen::MatrixXd e;                 // sum_n prod(gamma_1..n) * s_n
  Eigen::VectorXd base;              // x*beta + mu + eps
  double loglik = 0.0;

  double step_tau = 0.5, step_mu = 0.5, step_slide = 0.8, step_shift = 0.3;
  std::vector<double> step_lgam;
  Eigen::VectorXd step_beta, step_eps;

  // Adaptive joint block over (tau, logit gamma, beta, mu): empirical
  // covariance accumulated during burn-in, Haario-style scaling.
  int theta_dim = 0;
  double joint_scale = 1.0;
  long cov_count = 0;
  Eigen::VectorXd cov_mean;
  Eigen::MatrixXd cov_acc;
  Eigen::MatrixXd prop_chol;
  bool have_chol = false;

  std::vector<ParamDraw> stored;
  std::vector<Eigen::MatrixXd> stored_a;

  Chain(const Eigen::MatrixXi& y_in, const Eigen::MatrixXd& kappa_in,
        const Eigen::MatrixXd& x_in, const McmcConfig& cfg_in, Rng rng_in)
      : y(y_in), kappa(kappa_in), x(x_in), cfg(cfg_in),
        n(static_cast<int>(y_in.rows())), n_hops(cfg_in.n_hops),
        n_cov(static_cast<int>(x_in.cols())), rng(rng_in) {
    // Dispersed, seeded initial state. tau starts positive: the exposure
    // coefficients tau*prod(gamma) keep essentially all posterior mass on
    // tau > 0, and a negative start can fall into a prior-crushed mirror
    // mode that single-edge updates cannot escape.
    tau = 0.05 + std::fabs(rng.normal(0.0, 1.5));
    lgam.resize(n_hops);
    step_lgam.assign(n_hops, 0.5);
    for (auto& l : lgam) l = logit(rng.uniform(0.15, 0.85));
    beta = Eigen::VectorXd::Zero(n_cov);
    step_beta = Eigen::VectorXd::Constant(n_cov, 0.5);
    for (int m = 0; m < n_cov; ++m) beta[m] = rng.normal(0.0, 0.5);
    double ybar = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i != j) ybar += y(i, j);
      }
    }
    ybar /= std::max(1, n * (n - 1));
    mu = std::log(ybar + 0.1) + rng.normal(0.0, 1.0);
    eps = Eigen::VectorXd::Zero(n);
    step_eps = Eigen::VectorXd::Constant(n, 0.5);
    const double eps_sd = std::sqrt(cfg.eps_variance);
    for (int j = 0; j < n; ++j) eps[j] = rng.normal(0.0, eps_sd);
    a = kappa;
    if (cfg.sample_network) {
      for (int u = 0; u < n; ++u) {
        for (int v = 0; v < n; ++v) {
          a(u, v) = (u == v) ? 0.0 : static_cast<double>(rng.poisson(kappa(u, v)));
        }
      }
    }
    rebuild_network_caches();
    base = x.cols() > 0 ? Eigen::VectorXd(x * beta) : Eigen::VectorXd::Zero(n);
    base.array() += mu;
    base += eps;
    loglik = full_loglik(tau, base, e);

    theta_dim = 2 + n_hops + n_cov;
    cov_mean = Eigen::VectorXd::Zero(theta_dim);
    cov_acc = Eigen::MatrixXd::Zero(theta_dim, theta_dim);
  }

  double gamma_of(int h) const { return sigmoid(lgam[h]); }

  void rebuild_network_caches() {
    pow.assign(n_hops, Eigen::MatrixXd());
    s.assign(n_hops, Eigen::MatrixXd());
    pow[0] = a;
    for (int h = 1; h < n_hops; ++h) pow[h] = a * pow[h - 1];
    for (int h = 0; h < n_hops; ++h) s[h] = pow[h].array().log1p();
    rebuild_exposure_sum();
  }

  void rebuild_exposure_sum() {
    e = Eigen::MatrixXd::Zero(n, n);
    double prod = 1.0;
    for (int h = 0; h < n_hops; ++h) {
      prod *= gamma_of(h);
      e += prod * s[h];
    }
  }

  double full_loglik(double tau_c, const Eigen::VectorXd& base_c,
                     const Eigen::MatrixXd& e_c) const {
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double eta = tau_c * e_c(i, j) + base_c[j];
        ll += y(i, j) * eta - std::exp(eta);
      }
    }
    return ll;
  }

  // Likelihood restricted to one target column (eps_j moves).
  double column_loglik(int j, double base_j) const {
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      if (i == j) continue;
      const double eta = tau * e(i, j) + base_j;
      ll += y(i, j) * eta - std::exp(eta);
    }
    return ll;
  }

  static void adapt(double& step, bool accepted, int iter) {
    const double rate = std::min(0.05, 3.0 / std::sqrt(static_cast<double>(iter + 1)));
    step *= std::exp(rate * ((accepted ? 1.0 : 0.0) - 0.44));
    step = std::clamp(step, 1e-4, 20.0);
  }

  void update_tau(bool adapting, int iter) {
    const double cand = tau + rng.normal(0.0, step_tau);
    const double ll_c = full_loglik(cand, base, e);
    const double delta = ll_c - loglik + normal_logpdf_kernel(cand, cfg.prior_sd) -
                         normal_logpdf_kernel(tau, cfg.prior_sd);
    const bool ok = std::log(rng.uniform() + 1e-300) < delta;
    if (ok) {
      tau = cand;
      loglik = ll_c;
    }
    if (adapting) adapt(step_tau, ok, iter);
  }

  void update_gamma(int h, bool adapting, int iter) {
    const double cand_l = lgam[h] + rng.normal(0.0, step_lgam[h]);
    const double old_l = lgam[h];
    lgam[h] = cand_l;
    Eigen::MatrixXd e_c = Eigen::MatrixXd::Zero(n, n);
    double prod = 1.0;
    for (int k = 0; k < n_hops; ++k) {
      prod *= gamma_of(k);
      e_c += prod * s[k];
    }
    lgam[h] = old_l;
    const double ll_c = full_loglik(tau, base, e_c);
    const double delta =
        ll_c - loglik + logistic_logpdf(cand_l) - logistic_logpdf(old_l);
    const bool ok = std::log(rng.uniform() + 1e-300) < delta;
    if (ok) {
      lgam[h] = cand_l;
      e = std::move(e_c);
      loglik = ll_c;
    }
    if (adapting) adapt(step_lgam[h], ok, iter);
  }

  // Likelihood-invariant move along the tau*gamma_1 ridge: rescale gamma_1
  // and tau so every exposure coefficient is preserved.
  void update_slide(bool adapting, int iter) {
    const double delta_l = rng.normal(0.0, step_slide);
    const double old_l = lgam[0];
    const double g_old = sigmoid(old_l);
    const double g_new = sigmoid(old_l + delta_l);
    const double tau_new = tau * g_old / g_new;
    const double log_ratio = normal_logpdf_kernel(tau_new, cfg.prior_sd) -
                             normal_logpdf_kernel(tau, cfg.prior_sd) +
                             logistic_logpdf(old_l + delta_l) - logistic_logpdf(old_l) +
                             std::log(g_old / g_new);  // Jacobian d(tau')/d(tau)
    const bool ok = std::log(rng.uniform() + 1e-300) < log_ratio;
    if (ok) {
      lgam[0] = old_l + delta_l;
      tau = tau_new;
      e *= g_new / g_old;  // every hop term carries gamma_1 exactly once
    }
    if (adapting) adapt(step_slide, ok, iter);
  }

  void update_beta(int m, bool adapting, int iter) {
    const double cand = beta[m] + rng.normal(0.0, step_beta[m]);
    Eigen::VectorXd base_c = base + (cand - beta[m]) * x.col(m);
    const double ll_c = full_loglik(tau, base_c, e);
    const double delta = ll_c - loglik + normal_logpdf_kernel(cand, cfg.prior_sd) -
                         normal_logpdf_kernel(beta[m], cfg.prior_sd);
    const bool ok = std::log(rng.uniform() + 1e-300) < delta;
    if (ok) {
      beta[m] = cand;
      base = std::move(base_c);
      loglik = ll_c;
    }
    if (adapting) adapt(step_beta[m], ok, iter);
  }

  void update_mu(bool adapting, int iter) {
    const double cand = mu + rng.normal(0.0, step_mu);
    Eigen::VectorXd base_c = base.array() + (cand - mu);
    const double ll_c = full_loglik(tau, base_c, e);
    const double delta = ll_c - loglik + normal_logpdf_kernel(cand, cfg.prior_sd) -
                         normal_logpdf_kernel(mu, cfg.prior_sd);
    const bool ok = std::log(rng.uniform() + 1e-300) < delta;
    if (ok) {
      mu = cand;
      base = std::move(base_c);
      loglik = ll_c;
    }
    if (adapting) adapt(step_mu, ok, iter);
  }

  void update_eps(bool adapting, int iter) {
    const double eps_sd = std::sqrt(cfg.eps_variance);
    for (int j = 0; j < n; ++j) {
      const double cand = eps[j] + rng.normal(0.0, step_eps[j]);
      const double base_j = base[j] + (cand - eps[j]);
      const double ll_old = column_loglik(j, base[j]);
      const double ll_new = column_loglik(j, base_j);
      const double delta = ll_new - ll_old + normal_logpdf_kernel(cand, eps_sd) -
                           normal_logpdf_kernel(eps[j], eps_sd);
      const bool ok = std::log(rng.uniform() + 1e-300) < delta;
      if (ok) {
        loglik += ll_new - ll_old;
        eps[j] = cand;
        base[j] = base_j;
      }
      if (adapting) adapt(step_eps[j], ok, iter);
    }
  }

  // Likelihood-invariant rebalancing of the baseline against the outlet
  // effects: mu' = mu + c, eps_j' = eps_j - c. The eps prior identifies the
  // split; single-coordinate walks cross this direction too slowly.
  void update_shift(bool adapting, int iter) {
    const double c = rng.normal(0.0, step_shift);
    const double eps_sd = std::sqrt(cfg.eps_variance);
    double log_ratio = normal_logpdf_kernel(mu + c, cfg.prior_sd) -
                       normal_logpdf_kernel(mu, cfg.prior_sd);
    for (int j = 0; j < n; ++j) {
      log_ratio += normal_logpdf_kernel(eps[j] - c, eps_sd) -
                   normal_logpdf_kernel(eps[j], eps_sd);
    }
    const bool ok = std::log(rng.uniform() + 1e-300) < log_ratio;
    if (ok) {
      mu += c;
      eps.array() -= c;  // base unchanged
    }
    if (adapting) adapt(step_shift, ok, iter);
  }

  // Shear along the (gamma_h, baseline) trench: deeper-hop coefficients act
  // much like target-level effects on the exposed pairs, so mu and beta
  // absorb the least-squares projection of the rate shift and the Metropolis
  // step only has to price the residual pattern. The compensation depends on
  // (lgam, delta) alone, so the map is a unit-Jacobian shear and reverses
  // exactly under -delta.
  void update_hop_shear(int h, bool adapting, int iter) {
    const double delta_l = rng.normal(0.0, step_lgam[h]);
    std::vector<double> lgam_c = lgam;
    lgam_c[h] += delta_l;
    Eigen::MatrixXd e_c = Eigen::MatrixXd::Zero(n, n);
    double prod = 1.0;
    for (int k = 0; k < n_hops; ++k) {
      prod *= sigmoid(lgam_c[k]);
      e_c += prod * s[k];
    }
    // Per-target mean rate shift, projected onto [1, x].
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        if (i != j) acc += tau * (e_c(i, j) - e(i, j));
      }
      d[j] = acc / static_cast<double>(n - 1);
    }
    double mu_c = mu;
    Eigen::VectorXd beta_c = beta;
    Eigen::VectorXd fitted = Eigen::VectorXd::Zero(n);
    if (n_cov > 0) {
      Eigen::MatrixXd design(n, n_cov + 1);
      design.col(0).setOnes();
      design.rightCols(n_cov) = x;
      const Eigen::VectorXd coef =
          (design.transpose() * design +
           1e-9 * Eigen::MatrixXd::Identity(n_cov + 1, n_cov + 1))
              .ldlt()
              .solve(design.transpose() * d);
      mu_c -= coef[0];
      beta_c -= coef.tail(n_cov);
      fitted = design * coef;
    } else {
      const double mean = d.mean();
      mu_c -= mean;
      fitted.array() = mean;
    }
    Eigen::VectorXd base_c = base - fitted;
    const double ll_c = full_loglik(tau, base_c, e_c);
    double delta = ll_c - loglik + logistic_logpdf(lgam_c[h]) -
                   logistic_logpdf(lgam[h]) +
                   normal_logpdf_kernel(mu_c, cfg.prior_sd) -
                   normal_logpdf_kernel(mu, cfg.prior_sd);
    for (int m = 0; m < n_cov; ++m) {
      delta += normal_logpdf_kernel(beta_c[m], cfg.prior_sd) -
               normal_logpdf_kernel(beta[m], cfg.prior_sd);
    }
    const bool ok = std::log(rng.uniform() + 1e-300) < delta;
    if (ok) {
      lgam = std::move(lgam_c);
      mu = mu_c;
      beta = std::move(beta_c);
      e = std::move(e_c);
      base = std::move(base_c);
      loglik = ll_c;
    }
    (void)adapting;
    (void)iter;
  }

  // Mirror-mode escape: flip the sign of tau, with the same least-squares
  // baseline compensation as the hop shear. An involution (flip twice is the
  // identity) with unit Jacobian, so plain Metropolis acceptance applies.
  void update_sign_flip() {
    const double tau_c = -tau;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        if (i != j) acc += (tau_c - tau) * e(i, j);
      }
      d[j] = acc / static_cast<double>(n - 1);
    }
    double mu_c = mu;
    Eigen::VectorXd beta_c = beta;
    Eigen::VectorXd fitted = Eigen::VectorXd::Zero(n);
    if (n_cov > 0) {
      Eigen::MatrixXd design(n, n_cov + 1);
      design.col(0).setOnes();
      design.rightCols(n_cov) = x;
      const Eigen::VectorXd coef =
          (design.transpose() * design +
           1e-9 * Eigen::MatrixXd::Identity(n_cov + 1, n_cov + 1))
              .ldlt()
              .solve(design.transpose() * d);
      mu_c -= coef[0];
      beta_c -= coef.tail(n_cov);
      fitted = design * coef;
    } else {
      const double mean = d.mean();
      mu_c -= mean;
      fitted.array() = mean;
    }
    // d flips sign exactly under tau -> -tau, so applying the move twice is
    // the identity.
    Eigen::VectorXd base_c = base - fitted;
    const double ll_c = full_loglik(tau_c, base_c, e);
    double delta = ll_c - loglik + normal_logpdf_kernel(tau_c, cfg.prior_sd) -
                   normal_logpdf_kernel(tau, cfg.prior_sd) +
                   normal_logpdf_kernel(mu_c, cfg.prior_sd) -
                   normal_logpdf_kernel(mu, cfg.prior_sd);
    for (int m = 0; m < n_cov; ++m) {
      delta += normal_logpdf_kernel(beta_c[m], cfg.prior_sd) -
               normal_logpdf_kernel(beta[m], cfg.prior_sd);
    }
    if (std::log(rng.uniform() + 1e-300) < delta) {
      tau = tau_c;
      mu = mu_c;
      beta = std::move(beta_c);
      base = std::move(base_c);
      loglik = ll_c;
    }
  }

  Eigen::VectorXd theta() const {
    Eigen::VectorXd t(theta_dim);
    t[0] = tau;
    for (int h = 0; h < n_hops; ++h) t[1 + h] = lgam[h];
    for (int m = 0; m < n_cov; ++m) t[1 + n_hops + m] = beta[m];
    t[theta_dim - 1] = mu;
    return t;
  }

  double theta_log_prior(const Eigen::VectorXd& t) const {
    double lp = normal_logpdf_kernel(t[0], cfg.prior_sd);
    for (int h = 0; h < n_hops; ++h) lp += logistic_logpdf(t[1 + h]);
    for (int m = 0; m < n_cov; ++m) {
      lp += normal_logpdf_kernel(t[1 + n_hops + m], cfg.prior_sd);
    }
    lp += normal_logpdf_kernel(t[theta_dim - 1], cfg.prior_sd);
    return lp;
  }

  void accumulate_covariance() {
    const Eigen::VectorXd t = theta();
    ++cov_count;
    const Eigen::VectorXd delta = t - cov_mean;
    cov_mean += delta / static_cast<double>(cov_count);
    cov_acc += delta * (t - cov_mean).transpose();
    if (cov_count >= 20 && cov_count % 25 == 0) {
      Eigen::MatrixXd cov = cov_acc / static_cast<double>(cov_count - 1);
      cov += 1e-9 * Eigen::MatrixXd::Identity(theta_dim, theta_dim);
      const Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() == Eigen::Success) {
        prop_chol = llt.matrixL();
        have_chol = true;
      }
    }
  }

  // Joint random-walk over the whole coefficient block; the empirical
  // covariance aligns proposals with the posterior's flat directions.
  void update_joint(bool adapting, int iter) {
    if (!have_chol) return;
    Eigen::VectorXd noise(theta_dim);
    for (int d = 0; d < theta_dim; ++d) noise[d] = rng.normal();
    const Eigen::VectorXd cur = theta();
    const double step = 2.38 / std::sqrt(static_cast<double>(theta_dim)) * joint_scale;
    const Eigen::VectorXd cand = cur + step * (prop_chol * noise);

    const double tau_c = cand[0];
    std::vector<double> lgam_c(n_hops);
    for (int h = 0; h < n_hops; ++h) lgam_c[h] = cand[1 + h];
    Eigen::VectorXd beta_c(n_cov);
    for (int m = 0; m < n_cov; ++m) beta_c[m] = cand[1 + n_hops + m];
    const double mu_c = cand[theta_dim - 1];

    Eigen::MatrixXd e_c = Eigen::MatrixXd::Zero(n, n);
    double prod = 1.0;
    for (int h = 0; h < n_hops; ++h) {
      prod *= sigmoid(lgam_c[h]);
      e_c += prod * s[h];
    }
    Eigen::VectorXd base_c =
        n_cov > 0 ? Eigen::VectorXd(x * beta_c) : Eigen::VectorXd::Zero(n);
    base_c.array() += mu_c;
    base_c += eps;
    const double ll_c = full_loglik(tau_c, base_c, e_c);
    const double delta =
        ll_c - loglik + theta_log_prior(cand) - theta_log_prior(cur);
    const bool ok = std::log(rng.uniform() + 1e-300) < delta;
    if (ok) {
      tau = tau_c;
      lgam = lgam_c;
      beta = beta_c;
      mu = mu_c;
      e = std::move(e_c);
      base = std::move(base_c);
      loglik = ll_c;
    }
    if (adapting) {
      const double rate = std::min(0.05, 3.0 / std::sqrt(static_cast<double>(iter + 1)));
      joint_scale *= std::exp(rate * ((ok ? 1.0 : 0.0) - 0.23));
      joint_scale = std::clamp(joint_scale, 1e-3, 1e3);
    }
  }

  double cell_loglik(int i, int j, double e_ij) const {
    const double eta = tau * e_ij + base[j];
    return y(i, j) * eta - std::exp(eta);
  }

  void update_network() {
    const double g1 = gamma_of(0);
    const double g12 = n_hops >= 2 ? g1 * gamma_of(1) : 0.0;
    for (int u = 0; u < n; ++u) {
      for (int v = 0; v < n; ++v) {
        if (u == v || kappa(u, v) <= 0.0) continue;  // rate 0 pins the edge
        const double delta_a = rng.uniform() < 0.5 ? 1.0 : -1.0;
        const double a_old = a(u, v);
        if (a_old + delta_a < 0.0) continue;
        const double log_prior = delta_a > 0.0
                                     ? std::log(kappa(u, v)) - std::log(a_old + 1.0)
                                     : std::log(a_old) - std::log(kappa(u, v));
        double delta_ll = 0.0;
        if (n_hops <= 2) {
          // Changed cells: (u,v) through the 1-hop term; row u and column v
          // of A^2 through the 2-hop term.
          {
            const double s1_new = std::log1p(a_old + delta_a);
            const double e_new = g1 * s1_new + (n_hops >= 2 ? g12 * s[1](u, v) : 0.0);
            delta_ll += cell_loglik(u, v, e_new) - cell_loglik(u, v, e(u, v));
          }
          if (n_hops >= 2) {
            for (int j = 0; j < n; ++j) {
              if (j == u || a(v, j) == 0.0) continue;
              const double s2_new = std::log1p(pow[1](u, j) + delta_a * a(v, j));
              const double e_new = g1 * s[0](u, j) + g12 * s2_new;
              delta_ll += cell_loglik(u, j, e_new) - cell_loglik(u, j, e(u, j));
            }
            for (int i = 0; i < n; ++i) {
              if (i == v || a(i, u) == 0.0) continue;
              const double s2_new = std::log1p(pow[1](i, v) + delta_a * a(i, u));
              const double e_new = g1 * s[0](i, v) + g12 * s2_new;
              delta_ll += cell_loglik(i, v, e_new) - cell_loglik(i, v, e(i, v));
            }
          }
          if (std::log(rng.uniform() + 1e-300) < log_prior + delta_ll) {
            if (n_hops >= 2) {
              for (int j = 0; j < n; ++j) {
                if (a(v, j) == 0.0) continue;
                pow[1](u, j) += delta_a * a(v, j);
                s[1](u, j) = std::log1p(pow[1](u, j));
                if (j != u) e(u, j) = g1 * s[0](u, j) + g12 * s[1](u, j);
              }
              for (int i = 0; i < n; ++i) {
                if (a(i, u) == 0.0) continue;
                pow[1](i, v) += delta_a * a(i, u);
                s[1](i, v) = std::log1p(pow[1](i, v));
                if (i != v) e(i, v) = g1 * s[0](i, v) + g12 * s[1](i, v);
              }
            }
            a(u, v) = a_old + delta_a;
            pow[0](u, v) = a(u, v);
            s[0](u, v) = std::log1p(a(u, v));
            e(u, v) = g1 * s[0](u, v) + (n_hops >= 2 ? g12 * s[1](u, v) : 0.0);
            loglik += delta_ll;
          }
        } else {
          // General n_hops: full candidate recompute. Correct but O(H n^3)
          // per edge; intended for small networks only.
          const double saved = a(u, v);
          a(u, v) = a_old + delta_a;
          std::vector<Eigen::MatrixXd> pow_c(n_hops), s_c(n_hops);
          pow_c[0] = a;
          for (int h = 1; h < n_hops; ++h) pow_c[h] = a * pow_c[h - 1];
          for (int h = 0; h < n_hops; ++h) s_c[h] = pow_c[h].array().log1p();
          Eigen::MatrixXd e_c = Eigen::MatrixXd::Zero(n, n);
          double prod = 1.0;
          for (int h = 0; h < n_hops; ++h) {
            prod *= gamma_of(h);
            e_c += prod * s_c[h];
          }
          const double ll_new = full_loglik(tau, base, e_c);
          if (std::log(rng.uniform() + 1e-300) < log_prior + ll_new - loglik) {
            pow = std::move(pow_c);
            s = std::move(s_c);
            e = std::move(e_c);
            loglik = ll_new;
          } else {
            a(u, v) = saved;
          }
        }
      }
    }
  }

  void run() {
    const int burn = static_cast<int>(cfg.iterations * cfg.burn_fraction);
    for (int iter = 0; iter < cfg.iterations; ++iter) {
      const bool adapting = iter < burn;  // adaptation during burn-in only
      update_tau(adapting, iter);
      for (int h = 0; h < n_hops; ++h) update_gamma(h, adapting, iter);
      update_slide(adapting, iter);
      for (int m = 0; m < n_cov; ++m) update_beta(m, adapting, iter);
      update_mu(adapting, iter);
      for (int h = 1; h < n_hops; ++h) {
        update_hop_shear(h, adapting, iter);
        update_hop_shear(h, adapting, iter);
      }
      for (int rep = 0; rep < 4; ++rep) update_joint(adapting, iter);
      update_shift(adapting, iter);
      update_shift(adapting, iter);
      update_sign_flip();
      update_eps(adapting, iter);
      if (adapting) accumulate_covariance();
      if (cfg.sample_network) update_network();
      if (iter >= burn && (iter - burn) % cfg.thin == 0) {
        ParamDraw d;
        d.tau = tau;
        d.gamma.resize(n_hops);
        for (int h = 0; h < n_hops; ++h) d.gamma[h] = gamma_of(h);
        d.beta = beta;
        d.mu = mu;
        d.eps = eps;
        stored.push_back(std::move(d));
        if (cfg.sample_network) stored_a.push_back(a);
      }
    }
    // The edge updates maintain powers/exposures/loglik incrementally; any
    // bookkeeping drift beyond float noise means a broken update, not a
    // tolerance issue.
    const double cached = loglik;
    rebuild_network_caches();
    loglik = full_loglik(tau, base, e);
    if (std::fabs(cached - loglik) > 1e-6 * (1.0 + std::fabs(loglik))) {
      throw std::logic_error("mcmc: incremental likelihood cache diverged");
    }
  }
};

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  std::size_t min_len = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) min_len = std::min(min_len, c.size());
  if (min_len < 4) return 1.0;
  const std::size_t half = min_len / 2;
  for (const auto& c : chains) {
    halves.emplace_back(c.begin(), c.begin() + half);
    halves.emplace_back(c.begin() + half, c.begin() + 2 * half);
  }
  const double m = static_cast<double>(halves.size());
  const double nn = static_cast<double>(half);
  std::vector<double> means;
  double w = 0.0;
  for (const auto& h : halves) {
    double mean = 0.0;
    for (const double v : h) mean += v;
    mean /= nn;
    double var = 0.0;
    for (const double v : h) var += (v - mean) * (v - mean);
    var /= (nn - 1.0);
    means.push_back(mean);
    w += var;
  }
  w /= m;
  double grand = 0.0;
  for (const double v : means) grand += v;
  grand /= m;
  double b = 0.0;
  for (const double v : means) b += (v - grand) * (v - grand);
  b *= nn / (m - 1.0);
  if (w <= 1e-300) return 1.0;
  const double var_plus = (nn - 1.0) / nn * w + b / nn;
  return std::sqrt(var_plus / w);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  std::size_t min_len = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) min_len = std::min(min_len, c.size());
  if (min_len < 4) return static_cast<double>(min_len * chains.size());
  const std::size_t nn = min_len;
  const double m = static_cast<double>(chains.size());

  std::vector<double> means, vars;
  for (const auto& c : chains) {
    double mean = 0.0;
    for (std::size_t t = 0; t < nn; ++t) mean += c[t];
    mean /= static_cast<double>(nn);
    double var = 0.0;
    for (std::size_t t = 0; t < nn; ++t) var += (c[t] - mean) * (c[t] - mean);
    var /= static_cast<double>(nn - 1);
    means.push_back(mean);
    vars.push_back(var);
  }
  double w = 0.0;
  for (const double v : vars) w += v;
  w /= m;
  double grand = 0.0;
  for (const double v : means) grand += v;
  grand /= m;
  double b_over_n = 0.0;
  for (const double v : means) b_over_n += (v - grand) * (v - grand);
  b_over_n /= std::max(1.0, m - 1.0);
  const double var_plus = (static_cast<double>(nn) - 1.0) / nn * w + b_over_n;
  if (var_plus <= 1e-300) return static_cast<double>(nn * chains.size());

  // Combined autocorrelation with Geyer's initial monotone positive sequence.
  auto acov = [&](const std::vector<double>& c, double mean, std::size_t lag) {
    double sum = 0.0;
    for (std::size_t t = 0; t + lag < nn; ++t) sum += (c[t] - mean) * (c[t + lag] - mean);
    return sum / static_cast<double>(nn);
  };
  std::vector<double> rho;
  for (std::size_t lag = 1; lag < nn; ++lag) {
    double mean_acov = 0.0;
    for (std::size_t c = 0; c < chains.size(); ++c) {
      mean_acov += acov(chains[c], means[c], lag);
    }
    mean_acov /= m;
    rho.push_back(1.0 - (w - mean_acov) / var_plus);
  }
  double tau_int = 1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < rho.size(); t += 2) {
    double pair = rho[t] + rho[t + 1];
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau_int += 2.0 * pair;
  }
  const double total = static_cast<double>(nn) * m;
  return std::clamp(total / tau_int, 1.0, total);
}

}  // namespace

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd x = m;
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    const double sd =
        std::sqrt((x.col(c).array() - mean).square().sum() / std::max(1.0, n - 1.0));
    if (sd < 1e-12) {
      x.col(c).setZero();
    } else {
      x.col(c) = (x.col(c).array() - mean) / sd;
    }
  }
  return x;
}

FitResult fit(const Eigen::MatrixXi& outcomes, const Eigen::MatrixXd& kappa_prior,
              const Eigen::MatrixXd& covariates, const McmcConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(outcomes.rows());
  if (outcomes.cols() != n) throw Error("fit: outcome matrix not square");
  if (n < 2) throw Error("fit: need at least 2 outlets");
  if ((outcomes.array() < 0).any()) throw Error("fit: outcomes must be nonnegative");
  if (kappa_prior.rows() != n || kappa_prior.cols() != n) {
    throw Error("fit: prior matrix dimension mismatch");
  }
  if (!kappa_prior.allFinite() || (kappa_prior.array() < 0.0).any()) {
    throw Error("fit: prior rates must be finite and nonnegative");
  }
  if (covariates.rows() != 0 && covariates.rows() != n) {
    throw Error("fit: covariate row count mismatch");
  }

  // Standardize covariates; near-constant columns are zeroed (absorbed by mu).
  const Eigen::MatrixXd x = standardize_columns(covariates);

  FitResult result;
  result.config = cfg;
  result.n_outlets = n;
  result.x = x;

  Rng master(cfg.seed);
  std::vector<Rng> chain_rngs;
  for (int c = 0; c < cfg.chains; ++c) chain_rngs.push_back(master.split(c));

  auto run_chain = [&](int c) {
    Chain chain(outcomes, kappa_prior, x, cfg, chain_rngs[c]);
    chain.run();
    return std::make_pair(std::move(chain.stored), std::move(chain.stored_a));
  };
  std::vector<std::future<std::pair<std::vector<ParamDraw>, std::vector<Eigen::MatrixXd>>>>
      jobs;
  for (int c = 0; c < cfg.chains; ++c) {
    jobs.push_back(std::async(std::launch::async, run_chain, c));
  }
  result.network_mean = Eigen::MatrixXd::Zero(n, n);
  std::size_t n_network = 0;
  for (auto& job : jobs) {
    auto [draws, nets] = job.get();
    for (const auto& net : nets) {
      result.network_mean += net;
      ++n_network;
    }
    result.network_draws.insert(result.network_draws.end(),
                                std::make_move_iterator(nets.begin()),
                                std::make_move_iterator(nets.end()));
    result.draws.push_back(std::move(draws));
  }
  if (n_network > 0) {
    result.network_mean /= static_cast<double>(n_network);
  } else {
    result.network_mean = kappa_prior;
    result.network_draws.push_back(kappa_prior);  // shared frozen network
  }

  // Split R-hat and ESS per scalar parameter.
  auto series = [&](auto&& getter) {
    std::vector<std::vector<double>> out;
    for (const auto& chain : result.draws) {
      std::vector<double> v;
      v.reserve(chain.size());
      for (const auto& d : chain) v.push_back(getter(d));
      out.push_back(std::move(v));
    }
    return out;
  };
  auto add_diag = [&](const std::string& name, auto&& getter) {
    const auto s = series(getter);
    result.diagnostics.push_back({name, split_rhat(s), effective_sample_size(s)});
  };
  add_diag("tau", [](const ParamDraw& d) { return d.tau; });
  for (int h = 0; h < cfg.n_hops; ++h) {
    add_diag("gamma_" + std::to_string(h + 1),
             [h](const ParamDraw& d) { return d.gamma[h]; });
  }
  add_diag("mu", [](const ParamDraw& d) { return d.mu; });
  for (Eigen::Index m = 0; m < x.cols(); ++m) {
    add_diag("beta_" + std::to_string(m), [m](const ParamDraw& d) { return d.beta[m]; });
  }
  for (const auto& d : result.diagnostics) {
    if (d.rhat > 1.1) {
      result.warnings.push_back("R-hat above 1.1 for " + d.parameter + ": " +
                                fmt_double(d.rhat));
    }
  }
  return result;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

ImpactRow summarize_zeta(int source, int target, double kappa,
                         std::vector<double> draws) {
  ImpactRow row;
  row.source = source;
  row.target = target;
  row.kappa = kappa;
  std::sort(draws.begin(), draws.end());
  double mean = 0.0;
  for (const double v : draws) mean += v;
  mean /= std::max<std::size_t>(1, draws.size());
  row.mean = mean;
  row.median = quantile_sorted(draws, 0.5);
  row.lo95 = quantile_sorted(draws, 0.025);
  row.hi95 = quantile_sorted(draws, 0.975);
  if (kappa > 0.0) {
    row.has_normalized = true;
    const double denom = 10.0 * kappa;  // impact unit: 0.1 saliency-weighted quote
    row.normalized_mean = row.mean / denom;
    row.normalized_lo = row.lo95 / denom;
    row.normalized_hi = row.hi95 / denom;
    row.out_of_range = row.normalized_lo > 1.0 || row.normalized_hi < 0.0;
  }
  return row;
}

}  // namespace

std::vector<ImpactRow> estimate_impact(const FitResult& fit,
                                       const Eigen::MatrixXi& outcomes,
                                       const Eigen::MatrixXd& kappa_outcome,
                                       int source, std::uint64_t seed) {
  const int n = fit.n_outlets;
  if (outcomes.rows() != n || kappa_outcome.rows() != n) {
    throw Error("estimate_impact: dimension mismatch with fit");
  }
  if (source < 0 || source >= n) throw Error("estimate_impact: bad source index");
  const auto samples = fit.merged();
  if (samples.empty()) throw Error("estimate_impact: fit holds no posterior draws");

  Rng rng(seed);
  std::vector<std::vector<double>> zeta(n);
  for (const auto& d : samples) {
    for (int j = 0; j < n; ++j) {
      if (j == source) continue;
      // Counterfactual: source removed, so every exposure term vanishes and
      // the rate is baseline + covariates + the outlet's own eps draw.
      double log_rate = d.mu + d.eps[j];
      if (fit.x.cols() > 0) log_rate += fit.x.row(j).dot(d.beta);
      const double y_cf = static_cast<double>(rng.poisson(std::exp(log_rate)));
      zeta[j].push_back(static_cast<double>(outcomes(source, j)) - y_cf);
    }
  }
  std::vector<ImpactRow> rows;
  for (int j = 0; j < n; ++j) {
    if (j == source) continue;
    rows.push_back(summarize_zeta(source, j, kappa_outcome(source, j),
                                  std::move(zeta[j])));
  }
  return rows;
}

std::vector<ImpactRow> impact_contrast(const FitResult& fit,
                                       const Eigen::VectorXd& z_plus,
                                       const Eigen::VectorXd& z_minus,
                                       std::uint64_t seed) {
  const int n = fit.n_outlets;
  if (z_plus.size() != n || z_minus.size() != n) {
    throw Error("impact_contrast: treatment vector dimension mismatch");
  }
  const auto samples = fit.merged();
  if (samples.empty()) throw Error("impact_contrast: fit holds no posterior draws");

  Rng rng(seed);
  std::vector<std::vector<double>> zeta(n);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& d = samples[s];
    const Eigen::MatrixXd& net = fit.network_draws.size() == samples.size()
                                     ? fit.network_draws[s]
                                     : fit.network_draws.front();
    GlmmParams p;
    p.tau = d.tau;
    p.gamma = d.gamma;
    p.beta = d.beta;
    p.mu = d.mu;
    p.eps = d.eps;
    const Eigen::VectorXd lp_plus = linear_predictor(
        z_plus, compute_exposures(net, z_plus, fit.config.n_hops), p, fit.x);
    const Eigen::VectorXd lp_minus = linear_predictor(
        z_minus, compute_exposures(net, z_minus, fit.config.n_hops), p, fit.x);
    for (int j = 0; j < n; ++j) {
      const double y_plus = static_cast<double>(rng.poisson(std::exp(lp_plus[j])));
      const double y_minus = static_cast<double>(rng.poisson(std::exp(lp_minus[j])));
      zeta[j].push_back(y_plus - y_minus);
    }
  }
  std::vector<ImpactRow> rows;
  for (int j = 0; j < n; ++j) rows.push_back(summarize_zeta(-1, j, 0.0, std::move(zeta[j])));
  return rows;
}

ImpactTables slant_and_totals(const std::vector<ImpactRow>& pro_a,
                              const std::vector<ImpactRow>& pro_b,
                              const std::vector<std::string>& outlets) {
  const int n = static_cast<int>(outlets.size());
  auto to_map = [](const std::vector<ImpactRow>& rows) {
    std::map<std::pair<int, int>, double> m;
    for (const auto& r : rows) m[{r.source, r.target}] = r.mean;
    return m;
  };
  const auto ma = to_map(pro_a);
  const auto mb = to_map(pro_b);
  {
    std::set<std::pair<int, int>> ka, kb;
    for (const auto& [k, _] : ma) ka.insert(k);
    for (const auto& [k, _] : mb) kb.insert(k);
    if (ka != kb) throw Error("slant_and_totals: channel outlet sets mismatch");
  }
  ImpactTables t;
  t.outlets = outlets;
  t.slant = Eigen::MatrixXd::Zero(n, n);
  t.total = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [key, va] : ma) {
    const double vb = mb.at(key);
    t.slant(key.first, key.second) = va - vb;  // pro_b counts negative
    t.total(key.first, key.second) = va + vb;
  }
  t.differential = t.total - t.total.transpose();
  t.outlet_slant = t.slant.rowwise().sum();
  t.outlet_total = t.total.rowwise().sum();
  return t;
}

namespace {

std::string group_key(const Outlet& o, const std::string& key) {
  if (key == "outlet") return o.outlet_id;
  if (key == "orientation") return to_string(o.orientation);
  if (key == "affiliation") {
    switch (o.orientation) {
      case Orientation::state_controlled:
      case Orientation::state_agenda:
        return "state_affiliated";
      case Orientation::independent:
        return "independent";
      case Orientation::unknown:
        return "unknown";
    }
  }
  if (key == "country") {
    if (o.country.empty()) {
      throw Error("group_report: grouping key 'country' absent for outlet " + o.outlet_id);
    }
    return o.country;
  }
  if (key == "country_affiliation") {
    return group_key(o, "country") + "/" + group_key(o, "affiliation");
  }
  throw Error("group_report: unknown grouping key '" + key + "'");
}

}  // namespace

std::vector<GroupRow> group_report(const std::vector<ImpactRow>& impacts,
                                   const std::vector<Outlet>& outlets,
                                   const std::string& source_key,
                                   const std::string& target_key) {
  struct Acc {
    double sum = 0.0, wsum = 0.0, weight = 0.0;
    long count = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> acc;
  for (const auto& r : impacts) {
    if (!r.has_normalized) continue;  // kappa = 0: undefined, omitted
    if (r.source < 0 || r.source >= static_cast<int>(outlets.size()) || r.target < 0 ||
        r.target >= static_cast<int>(outlets.size())) {
      throw Error("group_report: impact row references unknown outlet index");
    }
    const auto key = std::make_pair(group_key(outlets[r.source], source_key),
                                    group_key(outlets[r.target], target_key));
    auto& a = acc[key];
    a.sum += r.normalized_mean;
    a.wsum += r.normalized_mean * r.kappa;
    a.weight += r.kappa;
    a.count += 1;
  }
  std::vector<GroupRow> rows;
  for (const auto& [key, a] : acc) {
    GroupRow row;
    row.source_group = key.first;
    row.target_group = key.second;
    row.n_pairs = a.count;
    row.mean_normalized = a.sum / static_cast<double>(a.count);
    row.weighted_normalized = a.weight > 0.0 ? a.wsum / a.weight : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string impacts_to_csv(const std::vector<ImpactRow>& rows,
                           const std::vector<std::string>& outlets,
                           const std::string& channel) {
  std::ostringstream out;
  out << "source,target,channel,kappa,mean,median,lo95,hi95,normalized_mean,"
         "normalized_lo,normalized_hi,out_of_range\n";
  for (const auto& r : rows) {
    out << csv_escape(outlets[r.source]) << ',' << csv_escape(outlets[r.target]) << ','
        << channel << ',' << fmt_double(r.kappa) << ',' << fmt_double(r.mean) << ','
        << fmt_double(r.median) << ',' << fmt_double(r.lo95) << ',' << fmt_double(r.hi95)
        << ',';
    if (r.has_normalized) {
      out << fmt_double(r.normalized_mean) << ',' << fmt_double(r.normalized_lo) << ','
          << fmt_double(r.normalized_hi) << ',' << (r.out_of_range ? 1 : 0);
    } else {
      out << ",,,";
    }
    out << '\n';
  }
  return out.str();
}

std::string posterior_to_csv(const FitResult& fit) {
  std::ostringstream out;
  out << "parameter,chain,iteration,value\n";
  auto emit = [&](const std::string& name, int chain, std::size_t iter, double v) {
    out << name << ',' << chain << ',' << iter << ',' << fmt_double(v) << '\n';
  };
  for (std::size_t c = 0; c < fit.draws.size(); ++c) {
    for (std::size_t i = 0; i < fit.draws[c].size(); ++i) {
      const auto& d = fit.draws[c][i];
      emit("tau", static_cast<int>(c), i, d.tau);
      for (std::size_t h = 0; h < d.gamma.size(); ++h) {
        emit("gamma_" + std::to_string(h + 1), static_cast<int>(c), i, d.gamma[h]);
      }
      emit("mu", static_cast<int>(c), i, d.mu);
      for (Eigen::Index m = 0; m < d.beta.size(); ++m) {
        emit("beta_" + std::to_string(m), static_cast<int>(c), i, d.beta[m]);
      }
      for (Eigen::Index j = 0; j < d.eps.size(); ++j) {
        emit("eps_" + std::to_string(j), static_cast<int>(c), i, d.eps[j]);
      }
    }
  }
  return out.str();
}

std::vector<std::vector<ParamDraw>> posterior_from_csv(const std::string& content,
                                                       int n_outlets, int n_cov,
                                                       int n_hops) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw Error("posterior CSV: empty file");
  // draws[chain][iteration]
  std::map<int, std::map<int, ParamDraw>> acc;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 4) throw Error("posterior CSV: bad row: " + line);
    const std::string& name = f[0];
    const int chain = std::stoi(f[1]);
    const int iter = std::stoi(f[2]);
    const double value = std::stod(f[3]);
    ParamDraw& d = acc[chain][iter];
    if (d.gamma.empty()) {
      d.gamma.assign(n_hops, 0.5);
      d.beta = Eigen::VectorXd::Zero(n_cov);
      d.eps = Eigen::VectorXd::Zero(n_outlets);
    }
    if (name == "tau") {
      d.tau = value;
    } else if (name == "mu") {
      d.mu = value;
    } else if (name.rfind("gamma_", 0) == 0) {
      d.gamma.at(std::stoul(name.substr(6)) - 1) = value;
    } else if (name.rfind("beta_", 0) == 0) {
      d.beta[std::stol(name.substr(5))] = value;
    } else if (name.rfind("eps_", 0) == 0) {
      d.eps[std::stol(name.substr(4))] = value;
    } else {
      throw Error("posterior CSV: unknown parameter " + name);
    }
  }
  std::vector<std::vector<ParamDraw>> out;
  for (auto& [chain, iters] : acc) {
    std::vector<ParamDraw> v;
    for (auto& [_, d] : iters) v.push_back(std::move(d));
    out.push_back(std::move(v));
  }
  if (out.empty()) throw Error("posterior CSV: no draws");
  return out;
}

std::string diagnostics_to_csv(const FitResult& fit) {
  std::ostringstream out;
  out << "parameter,rhat,ess\n";
  for (const auto& d : fit.diagnostics) {
    out << d.parameter << ',' << fmt_double(d.rhat) << ',' << fmt_double(d.ess) << '\n';
  }
  return out.str();
}

std::string groups_to_csv(const std::vector<GroupRow>& rows) {
  std::ostringstream out;
  out << "source_group,target_group,n_pairs,mean_normalized,weighted_normalized\n";
  for (const auto& r : rows) {
    out << csv_escape(r.source_group) << ',' << csv_escape(r.target_group) << ','
        << r.n_pairs << ',' << fmt_double(r.mean_normalized) << ','
        << fmt_double(r.weighted_normalized) << '\n';
  }
  return out.str();
}

}  // namespace quoteflow
