#include "quoteflow/netbuild.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <sstream>

#include "quoteflow/rng.hpp"
#include "quoteflow/util.hpp"

namespace quoteflow {

InfluenceNetwork build_network(const SalienceMatrix& kappa) {
  if (kappa.kappa.rows() != kappa.kappa.cols()) {
    throw Error("build_network: salience matrix not square");
  }
  if (!kappa.kappa.allFinite()) throw Error("build_network: non-finite entries");
  if ((kappa.kappa.array() < 0.0).any()) throw Error("build_network: negative entries");
  InfluenceNetwork net;
  net.adjacency = kappa.kappa;
  net.adjacency.diagonal().setZero();
  net.outlets = kappa.outlets;
  return net;
}

Eigen::MatrixXd NodeCovariates::design() const {
  // Reference coding: community 0 is absorbed by the model baseline, so the
  // one-hot block has C-1 columns and stays full rank next to an intercept.
  const auto n = static_cast<Eigen::Index>(outlets.size());
  const int extra = std::max(0, n_communities - 1);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, 2 + extra);
  x.col(0) = in_degree;
  x.col(1) = out_degree;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (community[i] > 0) x(i, 1 + community[i]) = 1.0;
  }
  return x;
}

std::vector<std::string> NodeCovariates::design_names() const {
  std::vector<std::string> names{"in_degree", "out_degree"};
  for (int c = 1; c < n_communities; ++c) names.push_back("community_" + std::to_string(c));
  return names;
}

double blockmodel_loglik(const Eigen::MatrixXd& w, const std::vector<int>& labels,
                         int n_communities) {
  // Karrer-Newman degree-corrected objective, constants dropped:
  //   L = sum_rs m_rs * log(m_rs) - 2 * sum_r k_r * log(k_r)
  // with m_rs the total weight between groups and k_r the group degree.
  const int n = static_cast<int>(w.rows());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_communities, n_communities);
  Eigen::VectorXd deg = w.rowwise().sum();
  Eigen::VectorXd k = Eigen::VectorXd::Zero(n_communities);
  for (int i = 0; i < n; ++i) {
    k[labels[i]] += deg[i];
    for (int j = 0; j < n; ++j) m(labels[i], labels[j]) += w(i, j);
  }
  auto xlogx = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };
  double ll = 0.0;
  for (int r = 0; r < n_communities; ++r) {
    for (int s = 0; s < n_communities; ++s) ll += xlogx(m(r, s));
    ll -= 2.0 * xlogx(k[r]);
  }
  return ll;
}

namespace {

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

// Greedy node-move ascent on the degree-corrected objective with O(C) move
// deltas. The objective never decreases across accepted moves.
struct Refiner {
  const Eigen::MatrixXd& w;
  int C;
  std::vector<int> labels;
  Eigen::MatrixXd m;
  Eigen::VectorXd deg, k;
  double ll;

  Refiner(const Eigen::MatrixXd& w_in, std::vector<int> init, int c)
      : w(w_in), C(c), labels(std::move(init)) {
    const int n = static_cast<int>(w.rows());
    m = Eigen::MatrixXd::Zero(C, C);
    deg = w.rowwise().sum();
    k = Eigen::VectorXd::Zero(C);
    for (int i = 0; i < n; ++i) {
      k[labels[i]] += deg[i];
      for (int j = 0; j < n; ++j) m(labels[i], labels[j]) += w(i, j);
    }
    ll = blockmodel_loglik(w, labels, C);
  }

  double move_delta(int a, int b, const Eigen::VectorXd& d, double deg_i) const {
    double delta = 0.0;
    for (int c = 0; c < C; ++c) {
      if (c == a || c == b) continue;
      delta += 2.0 * (xlogx(m(a, c) - d[c]) - xlogx(m(a, c)));
      delta += 2.0 * (xlogx(m(b, c) + d[c]) - xlogx(m(b, c)));
    }
    delta += xlogx(m(a, a) - 2.0 * d[a]) - xlogx(m(a, a));
    delta += xlogx(m(b, b) + 2.0 * d[b]) - xlogx(m(b, b));
    delta += 2.0 * (xlogx(m(a, b) + d[a] - d[b]) - xlogx(m(a, b)));
    delta -= 2.0 * (xlogx(k[a] - deg_i) - xlogx(k[a]));
    delta -= 2.0 * (xlogx(k[b] + deg_i) - xlogx(k[b]));
    return delta;
  }

  void apply_move(int i, int a, int b, const Eigen::VectorXd& d) {
    for (int c = 0; c < C; ++c) {
      if (c == a || c == b) continue;
      m(a, c) -= d[c];
      m(c, a) -= d[c];
      m(b, c) += d[c];
      m(c, b) += d[c];
    }
    m(a, a) -= 2.0 * d[a];
    m(b, b) += 2.0 * d[b];
    m(a, b) += d[a] - d[b];
    m(b, a) += d[a] - d[b];
    k[a] -= deg[i];
    k[b] += deg[i];
    labels[i] = b;
  }

  void run(std::vector<double>* trace = nullptr, int max_sweeps = 200) {
    const int n = static_cast<int>(w.rows());
    Eigen::VectorXd d(C);
    if (trace) trace->push_back(ll);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      bool moved = false;
      for (int i = 0; i < n; ++i) {
        const int a = labels[i];
        d.setZero();
        for (int j = 0; j < n; ++j) d[labels[j]] += w(i, j);
        int best = a;
        double best_delta = 0.0;
        for (int b = 0; b < C; ++b) {
          if (b == a) continue;
          const double delta = move_delta(a, b, d, deg[i]);
          if (delta > best_delta + 1e-10) {
            best_delta = delta;
            best = b;
          }
        }
        if (best != a) {
          apply_move(i, a, best, d);
          ll += best_delta;
          moved = true;
          if (trace) trace->push_back(ll);
        }
      }
      if (!moved) break;
    }
    // Incremental bookkeeping drifts; report the exact value.
    ll = blockmodel_loglik(w, labels, C);
  }
};

std::vector<int> kmeans_labels(const Eigen::MatrixXd& rows, int k, Rng& rng) {
  const int n = static_cast<int>(rows.rows());
  std::vector<int> centers;
  centers.push_back(static_cast<int>(rng.uniform_int(n)));
  Eigen::VectorXd d2 = Eigen::VectorXd::Constant(n, 1e300);
  while (static_cast<int>(centers.size()) < k) {
    for (int i = 0; i < n; ++i) {
      const double d = (rows.row(i) - rows.row(centers.back())).squaredNorm();
      d2[i] = std::min(d2[i], d);
    }
    const double total = d2.sum();
    int next = 0;
    if (total <= 0.0) {
      next = static_cast<int>(rng.uniform_int(n));
    } else {
      double target = rng.uniform() * total;
      for (int i = 0; i < n; ++i) {
        target -= d2[i];
        if (target <= 0.0) {
          next = i;
          break;
        }
      }
    }
    centers.push_back(next);
  }
  Eigen::MatrixXd mu(k, rows.cols());
  for (int c = 0; c < k; ++c) mu.row(c) = rows.row(centers[c]);

  std::vector<int> labels(n, 0);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (rows.row(i) - mu.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (rows.row(i) - mu.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    mu.setZero();
    Eigen::VectorXd count = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < n; ++i) {
      mu.row(labels[i]) += rows.row(i);
      count[labels[i]] += 1.0;
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0.0) mu.row(c) /= count[c];
    }
  }
  return labels;
}

std::vector<int> spectral_init(const Eigen::MatrixXd& w, int C, Rng& rng) {
  const int n = static_cast<int>(w.rows());
  Eigen::VectorXd deg = w.rowwise().sum();
  Eigen::VectorXd dinv =
      deg.unaryExpr([](double d) { return d > 0.0 ? 1.0 / std::sqrt(d) : 0.0; });
  const Eigen::MatrixXd norm = dinv.asDiagonal() * w * dinv.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(norm);
  Eigen::MatrixXd basis(n, C);
  for (int c = 0; c < C; ++c) basis.col(c) = solver.eigenvectors().col(n - 1 - c);
  for (int i = 0; i < n; ++i) {
    const double r = basis.row(i).norm();
    if (r > 0.0) basis.row(i) /= r;
  }
  return kmeans_labels(basis, C, rng);
}

}  // namespace

std::pair<std::vector<int>, std::vector<double>> refine_blockmodel(
    const Eigen::MatrixXd& sym_adjacency, std::vector<int> labels, int n_communities) {
  Refiner ref(sym_adjacency, std::move(labels), n_communities);
  std::vector<double> trace;
  ref.run(&trace);
  return {ref.labels, trace};
}

NodeCovariates detect_communities(const InfluenceNetwork& net, int n_communities,
                                  std::uint64_t seed, int restarts) {
  const int n = static_cast<int>(net.adjacency.rows());
  if (n_communities < 1) throw Error("detect_communities: need C >= 1");
  if (n_communities > n) {
    throw Error("detect_communities: C=" + std::to_string(n_communities) +
                " exceeds node count " + std::to_string(n));
  }

  NodeCovariates cov;
  cov.outlets = net.outlets;
  cov.in_degree = net.adjacency.colwise().sum();
  cov.out_degree = net.adjacency.rowwise().sum();
  cov.n_communities = n_communities;
  cov.community = Eigen::VectorXi::Zero(n);
  if (n_communities == 1) return cov;

  const Eigen::MatrixXd w = net.adjacency + net.adjacency.transpose();
  Rng rng(seed);

  // Restart 0 is spectral; the rest start from random partitions. Streams are
  // seeded up front so restarts can run in parallel with a stable winner.
  const int n_restarts = std::max(1, restarts);
  std::vector<Rng> streams;
  for (int r = 0; r < n_restarts; ++r) streams.push_back(rng.split(r));
  auto run_restart = [&](int r) {
    Rng local = streams[r];
    std::vector<int> init(n);
    if (r == 0) {
      init = spectral_init(w, n_communities, local);
    } else {
      for (int i = 0; i < n; ++i) {
        init[i] = static_cast<int>(local.uniform_int(n_communities));
      }
    }
    Refiner ref(w, std::move(init), n_communities);
    ref.run();
    return std::make_pair(ref.ll, ref.labels);
  };
  std::vector<std::future<std::pair<double, std::vector<int>>>> jobs;
  for (int r = 0; r < n_restarts; ++r) {
    jobs.push_back(std::async(std::launch::async, run_restart, r));
  }
  std::vector<int> best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (auto& j : jobs) {
    auto [ll, labels] = j.get();
    if (ll > best_ll) {  // ties keep the earliest restart
      best_ll = ll;
      best = std::move(labels);
    }
  }

  // Canonical labels: communities numbered by first appearance.
  std::map<int, int> remap;
  for (int i = 0; i < n; ++i) {
    if (!remap.count(best[i])) {
      const int next = static_cast<int>(remap.size());
      remap[best[i]] = next;
    }
    cov.community[i] = remap[best[i]];
  }
  return cov;
}

std::string export_graph(const InfluenceNetwork& net,
                         const std::map<std::pair<int, int>, EdgeAnnotation>* impacts) {
  std::ostringstream out;
  out << "digraph influence {\n";
  for (std::size_t i = 0; i < net.outlets.size(); ++i) {
    out << "  n" << i << " [label=\"" << net.outlets[i] << "\"];\n";
  }
  const int n = static_cast<int>(net.adjacency.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j || net.adjacency(i, j) == 0.0) continue;
      out << "  n" << i << " -> n" << j << " [weight=\""
          << fmt_double(net.adjacency(i, j)) << "\"";
      if (impacts) {
        const auto it = impacts->find({i, j});
        if (it != impacts->end()) {
          out << ", total_impact=\"" << fmt_double(it->second.total_impact)
              << "\", slant=\"" << fmt_double(it->second.slant) << "\"";
        }
      }
      out << "];\n";
    }
  }
  out << "}\n";
  return out.str();
}

std::string covariates_to_csv(const NodeCovariates& cov) {
  std::ostringstream out;
  out << "outlet_id,in_degree,out_degree,community\n";
  for (std::size_t i = 0; i < cov.outlets.size(); ++i) {
    out << csv_escape(cov.outlets[i]) << ','
        << fmt_double(cov.in_degree[static_cast<Eigen::Index>(i)]) << ','
        << fmt_double(cov.out_degree[static_cast<Eigen::Index>(i)]) << ','
        << cov.community[static_cast<Eigen::Index>(i)] << '\n';
  }
  return out.str();
}

}  // namespace quoteflow
