#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "quoteflow/cluster.hpp"

namespace quoteflow {

enum class GFunc { identity, sqrt, log1p };
enum class SalienceVariant { main_text, supplement, figure2 };

GFunc parse_gfunc(const std::string& s);
std::string to_string(GFunc g);
SalienceVariant parse_variant(const std::string& s);
std::string to_string(SalienceVariant v);

// Three circulating forms of the per-quote salience disagree on the third
// factor, so all are kept behind `variant`:
//   main_text:  (1/g1(S_q)) * g2(n_j) * n_after / n_j
//   supplement: (1/g1(S_q)) * g2(n_j) * n_after / sqrt(n_j)
//   figure2:    g1 = g2 = identity, which reduces to n_after / S_q
// Default is main_text with g1 = g2 = sqrt.
struct SalienceConfig {
  GFunc g1 = GFunc::sqrt;
  GFunc g2 = GFunc::sqrt;
  SalienceVariant variant = SalienceVariant::main_text;
};

struct SalienceMatrix {
  Eigen::MatrixXd kappa;             // kappa(i,j) = potential influence of i on j
  std::vector<std::string> outlets;  // row/column order
  std::string channel;               // "all", "pro_a", "pro_b", "neutral"

  int index_of(const std::string& outlet_id) const;  // -1 when absent
};

// Contribution of one matched-quote cluster to kappa_ij. Zero when either
// outlet never used the quote (in the filtered channel). A use by j at
// exactly i's first-use timestamp counts as "at or after" exposure.
double per_quote_salience(const QuoteCluster& cluster, const std::string& outlet_i,
                          const std::string& outlet_j, const SalienceConfig& cfg,
                          const std::optional<Sentiment>& channel = std::nullopt);

// kappa_ij = sum over clusters where both i and j appear. The channel filter
// restricts to member uses of one sentiment channel (S_q recomputed within
// the filtered view). Unknown outlet ids inside clusters are an error.
SalienceMatrix build_salience(const std::vector<QuoteCluster>& clusters,
                              const std::vector<std::string>& outlets,
                              const SalienceConfig& cfg,
                              const std::optional<Sentiment>& channel = std::nullopt);

// CSV rows: source_outlet,target_outlet,channel,kappa (nonzero entries).
std::string salience_to_csv(const std::vector<const SalienceMatrix*>& matrices);
std::vector<SalienceMatrix> salience_from_csv(const std::string& content);

}  // namespace quoteflow
