#include "quoteflow/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "quoteflow/netbuild.hpp"
#include "quoteflow/util.hpp"

namespace quoteflow {

void SimConfig::validate() const {
  if (n_outlets < 1) throw Error("simgen: need at least one outlet");
  if (n_quotes < 0) throw Error("simgen: negative quote count");
  if (pro_a_fraction < 0 || pro_b_fraction < 0 ||
      pro_a_fraction + pro_b_fraction > 1.0) {
    throw Error("simgen: channel mix must be probabilities summing to <= 1");
  }
  int total = 0;
  for (const int s : communities.sizes) {
    if (s <= 0) throw Error("simgen: community sizes must be positive");
    total += s;
  }
  if (!communities.sizes.empty() && total != n_outlets) {
    throw Error("simgen: community sizes must sum to n_outlets");
  }
  if (max_uses < 1) throw Error("simgen: max_uses must be >= 1");
}

namespace {

std::vector<int> block_assignment(const SimConfig& cfg) {
  std::vector<int> block(cfg.n_outlets, 0);
  if (cfg.communities.sizes.empty()) return block;
  int idx = 0;
  for (std::size_t b = 0; b < cfg.communities.sizes.size(); ++b) {
    for (int k = 0; k < cfg.communities.sizes[b]; ++k) block[idx++] = static_cast<int>(b);
  }
  return block;
}

std::string outlet_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "O%03d", i);
  return buf;
}

std::vector<Outlet> make_outlets(const SimConfig& cfg, const std::vector<int>& block) {
  std::vector<Outlet> outlets;
  std::vector<int> seen_in_block(
      cfg.communities.sizes.empty() ? 1 : cfg.communities.sizes.size(), 0);
  for (int i = 0; i < cfg.n_outlets; ++i) {
    Outlet o;
    o.outlet_id = outlet_name(i);
    o.name = "Sim Outlet " + std::to_string(i);
    o.country = "C" + std::to_string(block[i]);
    const int b = block[i];
    const int size = cfg.communities.sizes.empty() ? cfg.n_outlets
                                                   : cfg.communities.sizes[b];
    const bool state = seen_in_block[b] < static_cast<int>(cfg.state_fraction * size + 0.5);
    seen_in_block[b] += 1;
    o.orientation = state ? Orientation::state_controlled : Orientation::independent;
    outlets.push_back(std::move(o));
  }
  return outlets;
}

Eigen::MatrixXd sample_network(const SimConfig& cfg, const std::vector<int>& block,
                               Rng& rng, bool zero_cross) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(cfg.n_outlets, cfg.n_outlets);
  for (int u = 0; u < cfg.n_outlets; ++u) {
    for (int v = 0; v < cfg.n_outlets; ++v) {
      if (u == v) continue;
      const bool within = block[u] == block[v];
      if (!within && zero_cross) continue;
      double rate = within ? cfg.communities.within_rate : cfg.communities.between_rate;
      if (u == cfg.hub_outlet) rate *= cfg.hub_scale;
      a(u, v) = static_cast<double>(rng.poisson(rate));
    }
  }
  return a;
}

// Deterministic nonsense word from the rng, 4-7 lowercase letters.
std::string random_word(Rng& rng) {
  const int len = 4 + static_cast<int>(rng.uniform_int(4));
  std::string w;
  for (int i = 0; i < len; ++i) {
    w += static_cast<char>('a' + rng.uniform_int(26));
  }
  return w;
}

struct TextFamily {
  std::vector<std::string> tokens;
};

TextFamily make_family(Rng& rng) {
  TextFamily f;
  const int n_tokens = 6 + static_cast<int>(rng.uniform_int(3));
  for (int t = 0; t < n_tokens; ++t) f.tokens.push_back(random_word(rng));
  return f;
}

// A paraphrase instance: occasional token drop, one adjacent swap, a couple
// of shared noise tokens appended.
std::string paraphrase(const TextFamily& f, const std::vector<std::string>& noise_pool,
                       Rng& rng) {
  std::vector<std::string> tokens = f.tokens;
  if (tokens.size() > 4 && rng.uniform() < 0.3) {
    tokens.erase(tokens.begin() + static_cast<long>(rng.uniform_int(tokens.size())));
  }
  if (tokens.size() > 2 && rng.uniform() < 0.5) {
    const std::size_t i = rng.uniform_int(tokens.size() - 1);
    std::swap(tokens[i], tokens[i + 1]);
  }
  const int extra = 1 + static_cast<int>(rng.uniform_int(2));
  for (int k = 0; k < extra; ++k) {
    tokens.push_back(noise_pool[rng.uniform_int(noise_pool.size())]);
  }
  return join(tokens, " ");
}

int truncated_geometric(Rng& rng, double p, int max_count) {
  int count = 1;
  while (count < max_count && rng.uniform() < p) ++count;
  return count;
}

constexpr std::int64_t kDay = 86400;
constexpr std::int64_t kEpochStart = 17600 * kDay;  // arbitrary fixed origin

}  // namespace

SimTruth generate(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto block = block_assignment(cfg);

  SimTruth truth;
  truth.corpus.outlets = make_outlets(cfg, block);
  for (const auto& o : truth.corpus.outlets) truth.outlets.push_back(o.outlet_id);

  Rng net_rng = rng.split(1000003);
  truth.a_star = sample_network(cfg, block, net_rng, false);

  Rng noise_rng = rng.split(1000007);
  std::vector<std::string> noise_pool;
  for (int k = 0; k < 40; ++k) noise_pool.push_back(random_word(noise_rng));

  // Analytic expected adoptions per ordered pair, the sidecar "true impact":
  // each quote picks its source uniformly, follower j adopts with probability
  // 1 - exp(-scale * A*_ij) and uses the quote E[uses] times.
  const double mean_uses = [&] {
    double ev = 0.0, q = 1.0;  // truncated geometric: P(k) = p^(k-1)(1-p), k < max
    for (int k = 1; k < cfg.max_uses; ++k) {
      ev += k * q * (1.0 - cfg.extra_use_p);
      q *= cfg.extra_use_p;
    }
    return ev + cfg.max_uses * q;
  }();
  truth.expected_follows = Eigen::MatrixXd::Zero(cfg.n_outlets, cfg.n_outlets);
  for (int i = 0; i < cfg.n_outlets; ++i) {
    for (int j = 0; j < cfg.n_outlets; ++j) {
      if (i == j) continue;
      const double p_follow = 1.0 - std::exp(-cfg.follow_scale * truth.a_star(i, j));
      truth.expected_follows(i, j) = static_cast<double>(cfg.n_quotes) /
                                     cfg.n_outlets * p_follow * mean_uses;
    }
  }

  int record_no = 0;
  for (int q = 0; q < cfg.n_quotes; ++q) {
    Rng qrng = rng.split(static_cast<std::uint64_t>(q));
    const int source = static_cast<int>(qrng.uniform_int(cfg.n_outlets));
    const double cu = qrng.uniform();
    const Sentiment channel = cu < cfg.pro_a_fraction ? Sentiment::pro_a
                              : cu < cfg.pro_a_fraction + cfg.pro_b_fraction
                                  ? Sentiment::pro_b
                                  : Sentiment::neutral;
    const std::string topic = "topic_" + std::to_string(qrng.uniform_int(cfg.n_topics));
    const std::string speaker = "speaker_" + std::to_string(qrng.uniform_int(12));
    const TextFamily family = make_family(qrng);
    const std::int64_t day0 =
        kEpochStart + static_cast<std::int64_t>(qrng.uniform_int(300)) * kDay;

    auto add_record = [&](int outlet, std::int64_t at) {
      QuoteRecord r;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "q%05d_%04d", q, record_no++);
      r.quote_id = buf;
      r.outlet_id = truth.outlets[outlet];
      r.article_id = "a" + std::to_string(record_no);
      r.text = paraphrase(family, noise_pool, qrng);
      r.published_at = at;
      r.speaker = speaker;
      r.topic = topic;
      r.sentiment = channel;
      r.country = truth.corpus.outlets[outlet].country;
      r.language = "xx";
      truth.families[r.quote_id] = q;
      truth.corpus.records.push_back(std::move(r));
    };

    // Source first; follower uses start strictly later.
    const int source_uses = truncated_geometric(qrng, cfg.extra_use_p, cfg.max_uses);
    for (int u = 0; u < source_uses; ++u) {
      add_record(source, day0 + static_cast<std::int64_t>(u) * kDay);
    }
    for (int j = 0; j < cfg.n_outlets; ++j) {
      if (j == source) continue;
      const double p_follow = 1.0 - std::exp(-cfg.follow_scale * truth.a_star(source, j));
      if (qrng.uniform() >= p_follow) continue;
      const int uses = truncated_geometric(qrng, cfg.extra_use_p, cfg.max_uses);
      const std::int64_t first =
          day0 + (1 + static_cast<std::int64_t>(qrng.uniform_int(4))) * kDay;
      for (int u = 0; u < uses; ++u) {
        add_record(j, first + static_cast<std::int64_t>(u) * kDay);
      }
    }
  }
  truth.corpus.rebuild_index();
  return truth;
}

SimTruth generate_paraphrase_corpus(int n_records, int n_families, int n_outlets,
                                    std::uint64_t seed) {
  if (n_families < 1 || n_records < n_families) {
    throw Error("simgen: need n_records >= n_families >= 1");
  }
  SimConfig stub;
  stub.n_outlets = n_outlets;
  stub.validate();
  Rng rng(seed);

  // Family sizes from a truncated geometric around the requested mean, then
  // adjusted round-robin to hit n_records exactly.
  std::vector<int> sizes(n_families, 1);
  const double mean = static_cast<double>(n_records) / n_families;
  const double p = std::clamp(1.0 - 1.0 / mean, 0.05, 0.95);
  int total = 0;
  for (auto& s : sizes) {
    s = truncated_geometric(rng, p, static_cast<int>(2 * mean) + 3);
    total += s;
  }
  for (int k = 0; total != n_records; k = (k + 1) % n_families) {
    if (total < n_records) {
      sizes[k] += 1;
      ++total;
    } else if (sizes[k] > 1) {
      sizes[k] -= 1;
      --total;
    }
  }

  SimTruth truth;
  const std::vector<int> block(n_outlets, 0);
  SimConfig cfg = stub;
  cfg.state_fraction = 0.3;
  truth.corpus.outlets = make_outlets(cfg, block);
  for (const auto& o : truth.corpus.outlets) truth.outlets.push_back(o.outlet_id);
  truth.a_star = Eigen::MatrixXd::Zero(n_outlets, n_outlets);
  truth.expected_follows = truth.a_star;

  Rng noise_rng = rng.split(1000007);
  std::vector<std::string> noise_pool;
  for (int k = 0; k < 40; ++k) noise_pool.push_back(random_word(noise_rng));

  int record_no = 0;
  for (int f = 0; f < n_families; ++f) {
    Rng frng = rng.split(static_cast<std::uint64_t>(f));
    const TextFamily family = make_family(frng);
    const std::string topic = "topic_" + std::to_string(frng.uniform_int(5));
    const std::string speaker = "speaker_" + std::to_string(frng.uniform_int(12));
    const std::int64_t day0 =
        kEpochStart + static_cast<std::int64_t>(frng.uniform_int(300)) * kDay;
    for (int k = 0; k < sizes[f]; ++k) {
      QuoteRecord r;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "q%05d_%04d", f, record_no++);
      r.quote_id = buf;
      r.outlet_id = truth.outlets[frng.uniform_int(n_outlets)];
      r.article_id = "a" + std::to_string(record_no);
      r.text = paraphrase(family, noise_pool, frng);
      r.published_at = day0 + static_cast<std::int64_t>(frng.uniform_int(10)) * kDay;
      r.speaker = speaker;
      r.topic = topic;
      r.sentiment = Sentiment::neutral;
      r.country = "C0";
      r.language = "xx";
      truth.families[r.quote_id] = f;
      truth.corpus.records.push_back(std::move(r));
    }
  }
  truth.corpus.rebuild_index();
  return truth;
}

GlmmWorld generate_glmm_world(const SimConfig& cfg, bool zero_cross_effect) {
  cfg.validate();
  if (cfg.truth.gamma.size() < static_cast<std::size_t>(cfg.n_hops)) {
    throw Error("simgen: truth needs one gamma per hop");
  }
  Rng rng(cfg.seed);
  const auto block = block_assignment(cfg);

  GlmmWorld world;
  world.truth = cfg.truth;
  world.n_hops = cfg.n_hops;
  world.block = block;
  world.outlet_meta = make_outlets(cfg, block);
  for (const auto& o : world.outlet_meta) world.outlets.push_back(o.outlet_id);

  const int n = cfg.n_outlets;
  world.kappa_hat = Eigen::MatrixXd::Zero(n, n);
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      if (u == v) continue;
      world.kappa_hat(u, v) = block[u] == block[v] ? cfg.communities.within_rate
                                                   : cfg.communities.between_rate;
    }
  }

  Rng net_rng = rng.split(7);
  world.a_star = Eigen::MatrixXd::Zero(n, n);
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      if (u == v) continue;
      if (zero_cross_effect && block[u] != block[v]) continue;
      world.a_star(u, v) = static_cast<double>(net_rng.poisson(world.kappa_hat(u, v)));
    }
  }

  // Covariates exactly as the estimator derives them from kappa_hat.
  SalienceMatrix sm;
  sm.kappa = world.kappa_hat;
  sm.outlets = world.outlets;
  sm.channel = "all";
  const InfluenceNetwork net = build_network(sm);
  const int n_blocks =
      cfg.communities.sizes.empty() ? 1 : static_cast<int>(cfg.communities.sizes.size());
  const NodeCovariates cov = detect_communities(net, n_blocks, cfg.seed ^ 0x5eedu, 4);
  world.covariates = cov.design();

  Rng eps_rng = rng.split(11);
  world.eps_star = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < n; ++j) world.eps_star[j] = eps_rng.normal(0.0, std::sqrt(0.1));

  GlmmParams truth = cfg.truth;
  if (truth.beta.size() == 0) truth.beta = Eigen::VectorXd::Zero(world.covariates.cols());
  if (truth.beta.size() != world.covariates.cols()) {
    throw Error("simgen: truth beta does not match covariate count");
  }
  truth.eps = world.eps_star;
  world.truth = truth;

  Rng y_rng = rng.split(13);
  world.outcomes = Eigen::MatrixXi::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    z[i] = 1.0;
    const Eigen::MatrixXd expo = compute_exposures(world.a_star, z, cfg.n_hops);
    const Eigen::VectorXd lp = linear_predictor(z, expo, truth, world.covariates);
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      world.outcomes(i, j) = static_cast<int>(y_rng.poisson(std::exp(lp[j])));
    }
  }
  return world;
}

double oracle_impact(const GlmmWorld& world, int source, int target, int replicates,
                     std::uint64_t seed) {
  const int n = static_cast<int>(world.a_star.rows());
  if (source == target) throw Error("oracle_impact: diagonal is undefined");
  if (source < 0 || source >= n || target < 0 || target >= n) {
    throw Error("oracle_impact: index out of range");
  }
  // Inline rate arithmetic: n-hop path sums computed directly.
  double prod = 1.0;
  double exposure_term = 0.0;
  std::vector<double> reach(n, 0.0);
  reach[source] = 1.0;
  for (int hop = 0; hop < world.n_hops; ++hop) {
    std::vector<double> next(n, 0.0);
    for (int a = 0; a < n; ++a) {
      if (reach[a] == 0.0) continue;
      for (int b = 0; b < n; ++b) next[b] += reach[a] * world.a_star(a, b);
    }
    reach = next;
    prod *= world.truth.gamma[hop];
    exposure_term += world.truth.tau * prod * std::log1p(reach[target]);
  }
  double base = world.truth.mu + world.eps_star[target];
  for (Eigen::Index c = 0; c < world.covariates.cols(); ++c) {
    base += world.truth.beta[c] * world.covariates(target, c);
  }
  const double rate_with = std::exp(base + exposure_term);
  const double rate_without = std::exp(base);

  Rng rng(seed ^ (static_cast<std::uint64_t>(source) << 32) ^
          static_cast<std::uint64_t>(target));
  double acc = 0.0;
  for (int r = 0; r < replicates; ++r) {
    acc += static_cast<double>(rng.poisson(rate_with)) -
           static_cast<double>(rng.poisson(rate_without));
  }
  return acc / replicates;
}

std::string truth_edges_csv(const SimTruth& truth) {
  std::ostringstream out;
  out << "source,target,weight,expected_follows\n";
  const int n = static_cast<int>(truth.a_star.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j || (truth.a_star(i, j) == 0.0 && truth.expected_follows(i, j) == 0.0)) {
        continue;
      }
      out << truth.outlets[i] << ',' << truth.outlets[j] << ','
          << fmt_double(truth.a_star(i, j)) << ','
          << fmt_double(truth.expected_follows(i, j)) << '\n';
    }
  }
  return out.str();
}

std::string families_csv(const SimTruth& truth) {
  std::ostringstream out;
  out << "quote_id,family\n";
  for (const auto& [qid, fam] : truth.families) {
    out << qid << ',' << fam << '\n';
  }
  return out.str();
}

}  // namespace quoteflow
