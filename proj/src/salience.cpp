#include "quoteflow/salience.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <future>
#include <map>
#include <set>
#include <sstream>

#include "quoteflow/util.hpp"

namespace quoteflow {

GFunc parse_gfunc(const std::string& s) {
  if (s == "identity") return GFunc::identity;
  if (s == "sqrt") return GFunc::sqrt;
  if (s == "log1p") return GFunc::log1p;
  throw Error("unknown g function: '" + s + "' (identity|sqrt|log1p)");
}

std::string to_string(GFunc g) {
  switch (g) {
    case GFunc::identity: return "identity";
    case GFunc::sqrt: return "sqrt";
    case GFunc::log1p: return "log1p";
  }
  return "identity";
}

SalienceVariant parse_variant(const std::string& s) {
  if (s == "main_text") return SalienceVariant::main_text;
  if (s == "supplement") return SalienceVariant::supplement;
  if (s == "figure2") return SalienceVariant::figure2;
  throw Error("unknown salience variant: '" + s + "' (main_text|supplement|figure2)");
}

std::string to_string(SalienceVariant v) {
  switch (v) {
    case SalienceVariant::main_text: return "main_text";
    case SalienceVariant::supplement: return "supplement";
    case SalienceVariant::figure2: return "figure2";
  }
  return "main_text";
}

namespace {

double apply_g(GFunc g, double x) {
  switch (g) {
    case GFunc::identity: return x;
    case GFunc::sqrt: return std::sqrt(x);
    case GFunc::log1p: return std::log1p(x);
  }
  return x;
}

}  // namespace

int SalienceMatrix::index_of(const std::string& outlet_id) const {
  for (std::size_t i = 0; i < outlets.size(); ++i) {
    if (outlets[i] == outlet_id) return static_cast<int>(i);
  }
  return -1;
}

double per_quote_salience(const QuoteCluster& cluster, const std::string& outlet_i,
                          const std::string& outlet_j, const SalienceConfig& cfg,
                          const std::optional<Sentiment>& channel) {
  if (outlet_i == outlet_j) return 0.0;
  const Sentiment* ch = channel ? &*channel : nullptr;
  const auto t_i = cluster.usage_times(outlet_i, ch);
  const auto t_j = cluster.usage_times(outlet_j, ch);
  if (t_i.empty() || t_j.empty()) return 0.0;

  const double s_q = cluster.distinct_outlets(ch);
  const double n_j = static_cast<double>(t_j.size());
  const std::int64_t first_i = t_i.front();
  double n_after = 0.0;
  for (const auto t : t_j) {
    if (t >= first_i) n_after += 1.0;
  }

  switch (cfg.variant) {
    case SalienceVariant::main_text:
      return (1.0 / apply_g(cfg.g1, s_q)) * apply_g(cfg.g2, n_j) * (n_after / n_j);
    case SalienceVariant::supplement:
      return (1.0 / apply_g(cfg.g1, s_q)) * apply_g(cfg.g2, n_j) *
             (n_after / std::sqrt(n_j));
    case SalienceVariant::figure2:
      return (1.0 / s_q) * n_j * (n_after / n_j);
  }
  return 0.0;
}

SalienceMatrix build_salience(const std::vector<QuoteCluster>& clusters,
                              const std::vector<std::string>& outlets,
                              const SalienceConfig& cfg,
                              const std::optional<Sentiment>& channel) {
  const int n = static_cast<int>(outlets.size());
  std::map<std::string, int> index;
  for (int i = 0; i < n; ++i) index[outlets[i]] = i;

  SalienceMatrix m;
  m.outlets = outlets;
  m.channel = channel ? to_string(*channel) : "all";
  m.kappa = Eigen::MatrixXd::Zero(n, n);

  const Sentiment* ch = channel ? &*channel : nullptr;
  // Parallel over cluster chunks; fixed-order summation of the partial
  // matrices keeps the result deterministic.
  const std::size_t chunks =
      clusters.size() > 64 ? std::min<std::size_t>(4, clusters.size()) : 1;
  auto accumulate = [&](std::size_t from, std::size_t to) {
    Eigen::MatrixXd partial = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t c = from; c < to; ++c) {
      const QuoteCluster& cluster = clusters[c];
      // Outlets present in this cluster (under the channel filter), in
      // matrix order so accumulation is deterministic.
      std::set<int> present;
      for (const auto& u : cluster.members) {
        if (ch && u.channel != *ch) continue;
        const auto it = index.find(u.outlet_id);
        if (it == index.end()) {
          throw Error("build_salience: unknown outlet id in cluster: " + u.outlet_id);
        }
        present.insert(it->second);
      }
      if (present.size() < 2) continue;  // single-outlet clusters carry no signal
      for (const int i : present) {
        for (const int j : present) {
          if (i == j) continue;
          partial(i, j) +=
              per_quote_salience(cluster, outlets[i], outlets[j], cfg, channel);
        }
      }
    }
    return partial;
  };
  if (chunks == 1) {
    m.kappa = accumulate(0, clusters.size());
  } else {
    std::vector<std::future<Eigen::MatrixXd>> jobs;
    for (std::size_t b = 0; b < chunks; ++b) {
      jobs.push_back(std::async(std::launch::async, accumulate,
                                clusters.size() * b / chunks,
                                clusters.size() * (b + 1) / chunks));
    }
    for (auto& j : jobs) m.kappa += j.get();
  }
  if (!m.kappa.allFinite()) throw Error("build_salience: non-finite salience");
  return m;
}

std::string salience_to_csv(const std::vector<const SalienceMatrix*>& matrices) {
  std::ostringstream out;
  out << "source_outlet,target_outlet,channel,kappa\n";
  for (const auto* m : matrices) {
    for (Eigen::Index i = 0; i < m->kappa.rows(); ++i) {
      for (Eigen::Index j = 0; j < m->kappa.cols(); ++j) {
        if (m->kappa(i, j) != 0.0) {
          out << csv_escape(m->outlets[i]) << ',' << csv_escape(m->outlets[j]) << ','
              << m->channel << ',' << fmt_double(m->kappa(i, j)) << '\n';
        }
      }
    }
  }
  return out.str();
}

std::vector<SalienceMatrix> salience_from_csv(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw Error("salience CSV: empty file");

  // Two passes: collect the outlet universe, then fill per-channel matrices.
  std::set<std::string> outlet_set;
  std::vector<std::array<std::string, 4>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 4) throw Error("salience CSV: bad row: " + line);
    outlet_set.insert(f[0]);
    outlet_set.insert(f[1]);
    rows.push_back({f[0], f[1], f[2], f[3]});
  }
  std::vector<std::string> outlets(outlet_set.begin(), outlet_set.end());
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < outlets.size(); ++i) index[outlets[i]] = static_cast<int>(i);

  std::map<std::string, SalienceMatrix> by_channel;
  for (const auto& r : rows) {
    auto& m = by_channel[r[2]];
    if (m.outlets.empty()) {
      m.outlets = outlets;
      m.channel = r[2];
      m.kappa = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(outlets.size()),
                                      static_cast<Eigen::Index>(outlets.size()));
    }
    m.kappa(index.at(r[0]), index.at(r[1])) = std::stod(r[3]);
  }
  std::vector<SalienceMatrix> out;
  for (auto& [_, m] : by_channel) out.push_back(std::move(m));
  return out;
}

}  // namespace quoteflow
