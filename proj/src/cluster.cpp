#include "quoteflow/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <sstream>

#include "quoteflow/util.hpp"

namespace quoteflow {

namespace {

// Zero distances map to lambda = 1/kDistFloor; identical points therefore
// persist "forever" and never separate.
constexpr double kDistFloor = 1e-12;

double to_lambda(double d) { return 1.0 / std::max(d, kDistFloor); }

// Edge identity used to break weight ties: (min quote_id, max quote_id).
struct EdgeRank {
  const std::string* lo = nullptr;
  const std::string* hi = nullptr;
};

EdgeRank make_rank(const std::vector<std::string>& ids, int a, int b) {
  EdgeRank r;
  if (ids[a] <= ids[b]) {
    r.lo = &ids[a];
    r.hi = &ids[b];
  } else {
    r.lo = &ids[b];
    r.hi = &ids[a];
  }
  return r;
}

bool rank_less(const EdgeRank& x, const EdgeRank& y) {
  if (*x.lo != *y.lo) return *x.lo < *y.lo;
  return *x.hi < *y.hi;
}

struct MstEdge {
  int a, b;
  double w;
};

}  // namespace

void ClusterParams::validate() const {
  if (min_cluster_size < 2) throw Error("min_cluster_size must be >= 2");
  if (min_samples < 1) throw Error("min_samples must be >= 1");
  if (min_samples > min_cluster_size) {
    throw Error("min_samples must be <= min_cluster_size");
  }
}

namespace {

// Pairwise Euclidean distances, parallel over row blocks.
Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  Eigen::MatrixXd dist(n, n);
  const int blocks = n > 256 ? 4 : 1;
  auto fill_rows = [&](int from, int to) {
    for (int i = from; i < to; ++i) {
      dist(i, i) = 0.0;
      for (int j = 0; j < n; ++j) {
        if (j != i) dist(i, j) = (points.row(i) - points.row(j)).norm();
      }
    }
  };
  if (blocks == 1) {
    fill_rows(0, n);
  } else {
    std::vector<std::future<void>> jobs;
    for (int b = 0; b < blocks; ++b) {
      jobs.push_back(std::async(std::launch::async, fill_rows, n * b / blocks,
                                n * (b + 1) / blocks));
    }
    for (auto& j : jobs) j.get();
  }
  return dist;
}

}  // namespace

ClusterResult hdbscan(const Eigen::MatrixXd& points,
                      const std::vector<std::string>& ids,
                      const ClusterParams& params) {
  if (!points.allFinite()) throw Error("hdbscan: non-finite coordinates");
  return hdbscan_with_distances(pairwise_distances(points), ids, params);
}

ClusterResult hdbscan_with_distances(const Eigen::MatrixXd& dist,
                                     const std::vector<std::string>& ids,
                                     const ClusterParams& params) {
  params.validate();
  const int n = static_cast<int>(dist.rows());
  if (static_cast<int>(ids.size()) != n) throw Error("hdbscan: ids/point count mismatch");
  if (n < params.min_cluster_size) {
    throw Error("hdbscan: " + std::to_string(n) + " points but min_cluster_size=" +
                std::to_string(params.min_cluster_size));
  }

  // Core distance: distance to the min_samples-th nearest neighbor, the
  // point itself counted first.
  std::vector<double> core(n);
  {
    std::vector<double> row(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) row[j] = dist(i, j);
      std::nth_element(row.begin(), row.begin() + (params.min_samples - 1), row.end());
      core[i] = row[params.min_samples - 1];
    }
  }
  auto mreach = [&](int a, int b) {
    return std::max({core[a], core[b], dist(a, b)});
  };

  // Prim over the complete mutual-reachability graph. Weight ties break by
  // the edge's (min quote_id, max quote_id) so results do not depend on row
  // order. Start from the smallest quote_id for the same reason.
  int start = 0;
  for (int i = 1; i < n; ++i) {
    if (ids[i] < ids[start]) start = i;
  }
  std::vector<MstEdge> edges;
  edges.reserve(n - 1);
  {
    std::vector<char> in_tree(n, 0);
    std::vector<double> best_w(n, std::numeric_limits<double>::infinity());
    std::vector<int> best_from(n, -1);
    in_tree[start] = 1;
    for (int v = 0; v < n; ++v) {
      if (v == start) continue;
      best_w[v] = mreach(start, v);
      best_from[v] = start;
    }
    for (int step = 1; step < n; ++step) {
      int u = -1;
      for (int v = 0; v < n; ++v) {
        if (in_tree[v]) continue;
        if (u < 0 || best_w[v] < best_w[u]) {
          u = v;
        } else if (best_w[v] == best_w[u] &&
                   rank_less(make_rank(ids, best_from[v], v),
                             make_rank(ids, best_from[u], u))) {
          u = v;
        }
      }
      edges.push_back({best_from[u], u, best_w[u]});
      in_tree[u] = 1;
      for (int v = 0; v < n; ++v) {
        if (in_tree[v]) continue;
        const double w = mreach(u, v);
        if (w < best_w[v] ||
            (w == best_w[v] && rank_less(make_rank(ids, u, v),
                                         make_rank(ids, best_from[v], v)))) {
          best_w[v] = w;
          best_from[v] = u;
        }
      }
    }
  }
  std::sort(edges.begin(), edges.end(), [&](const MstEdge& x, const MstEdge& y) {
    if (x.w != y.w) return x.w < y.w;
    const EdgeRank rx = make_rank(ids, x.a, x.b), ry = make_rank(ids, y.a, y.b);
    return rank_less(rx, ry);
  });

  // Single-linkage dendrogram over the MST edges. Nodes 0..n-1 are leaves,
  // internal nodes follow in merge order.
  const int n_nodes = 2 * n - 1;
  std::vector<int> left(n_nodes, -1), right(n_nodes, -1), node_size(n_nodes, 1);
  std::vector<double> height(n_nodes, 0.0);
  {
    std::vector<int> uf_parent(n_nodes);
    std::vector<int> comp_node(n_nodes);
    for (int i = 0; i < n_nodes; ++i) uf_parent[i] = i;
    for (int i = 0; i < n; ++i) comp_node[i] = i;
    std::function<int(int)> find = [&](int x) {
      while (uf_parent[x] != x) {
        uf_parent[x] = uf_parent[uf_parent[x]];
        x = uf_parent[x];
      }
      return x;
    };
    int next = n;
    for (const auto& e : edges) {
      const int ra = find(e.a), rb = find(e.b);
      const int node = next++;
      left[node] = comp_node[ra];
      right[node] = comp_node[rb];
      height[node] = e.w;
      node_size[node] = node_size[comp_node[ra]] + node_size[comp_node[rb]];
      uf_parent[ra] = node;
      uf_parent[rb] = node;
      uf_parent[node] = node;
      comp_node[node] = node;
    }
  }
  const int root = n_nodes - 1;

  // Condensed tree. A run of merges at exactly equal heights is treated as a
  // single multiway split; this matches a levelwise sweep of the
  // mutual-reachability graph for any MST, ties included.
  struct Cond {
    int parent = -1;
    double birth = 0.0;
    double death = 0.0;
    double stability = 0.0;
    std::vector<int> children;
  };
  std::vector<Cond> cond;
  std::vector<int> fall_cid(n, 0);
  std::vector<double> fall_lambda(n, 0.0);

  auto collect_leaves = [&](int v) {
    std::vector<int> out;
    std::vector<int> stack{v};
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      if (u < n) {
        out.push_back(u);
      } else {
        stack.push_back(left[u]);
        stack.push_back(right[u]);
      }
    }
    std::sort(out.begin(), out.end(),
              [&](int a, int b) { return ids[a] < ids[b]; });
    return out;
  };

  auto min_leaf_id = [&](int v) -> const std::string& {
    int best = -1;
    std::vector<int> stack{v};
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      if (u < n) {
        if (best < 0 || ids[u] < ids[best]) best = u;
      } else {
        stack.push_back(left[u]);
        stack.push_back(right[u]);
      }
    }
    return ids[best];
  };

  auto gather_parts = [&](int v) {
    // Subtree roots hanging below the maximal equal-height region at v.
    std::vector<int> parts;
    std::vector<int> stack{v};
    const double h = height[v];
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (const int c : {left[u], right[u]}) {
        if (c >= n && height[c] == h) {
          stack.push_back(c);
        } else {
          parts.push_back(c);
        }
      }
    }
    std::vector<std::pair<const std::string*, int>> keyed;
    keyed.reserve(parts.size());
    for (const int p : parts) keyed.emplace_back(&min_leaf_id(p), p);
    std::sort(keyed.begin(), keyed.end(),
              [](const auto& a, const auto& b) { return *a.first < *b.first; });
    for (std::size_t i = 0; i < parts.size(); ++i) parts[i] = keyed[i].second;
    return parts;
  };

  cond.push_back({});  // root cluster, birth lambda 0
  std::vector<std::pair<int, int>> walk{{root, 0}};  // (dendro node, condensed id)
  while (!walk.empty()) {
    const auto [v, cid] = walk.back();
    walk.pop_back();
    const double lambda = to_lambda(height[v]);
    const auto parts = gather_parts(v);
    std::vector<int> big;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (node_size[parts[p]] >= params.min_cluster_size) big.push_back(static_cast<int>(p));
    }
    auto drop_part = [&](int part_node) {
      for (const int leaf : collect_leaves(part_node)) {
        fall_cid[leaf] = cid;
        fall_lambda[leaf] = lambda;
        cond[cid].stability += lambda - cond[cid].birth;
      }
    };
    if (big.size() >= 2) {
      cond[cid].death = lambda;
      long kept = 0;
      for (const int p : big) kept += node_size[parts[p]];
      cond[cid].stability += static_cast<double>(kept) * (lambda - cond[cid].birth);
      for (std::size_t p = 0; p < parts.size(); ++p) {
        if (std::find(big.begin(), big.end(), static_cast<int>(p)) == big.end()) {
          drop_part(parts[p]);
        }
      }
      for (const int p : big) {
        const int child = static_cast<int>(cond.size());
        cond.push_back({});
        cond[child].parent = cid;
        cond[child].birth = lambda;
        cond[cid].children.push_back(child);
        walk.emplace_back(parts[p], child);
      }
    } else if (big.size() == 1) {
      for (std::size_t p = 0; p < parts.size(); ++p) {
        if (static_cast<int>(p) != big[0]) drop_part(parts[p]);
      }
      walk.emplace_back(parts[big[0]], cid);
    } else {
      cond[cid].death = lambda;
      for (const int part : parts) drop_part(part);
    }
  }

  // Cluster extraction.
  const int n_cond = static_cast<int>(cond.size());
  std::vector<char> selected(n_cond, 0);
  if (params.selection == ClusterSelection::leaf) {
    for (int c = 0; c < n_cond; ++c) selected[c] = cond[c].children.empty();
  } else {
    // Excess of mass, bottom-up; parents win exact ties.
    std::vector<double> shat(n_cond, 0.0);
    for (int c = n_cond - 1; c >= 0; --c) {
      if (cond[c].children.empty()) {
        shat[c] = cond[c].stability;
        selected[c] = 1;
        continue;
      }
      double child_sum = 0.0;
      for (const int ch : cond[c].children) child_sum += shat[ch];
      if (cond[c].stability >= child_sum) {
        selected[c] = 1;
        shat[c] = cond[c].stability;
      } else {
        shat[c] = child_sum;
      }
    }
    std::vector<char> has_selected_ancestor(n_cond, 0);
    for (int c = 0; c < n_cond; ++c) {
      const int p = cond[c].parent;
      if (p >= 0) {
        has_selected_ancestor[c] =
            static_cast<char>(has_selected_ancestor[p] || selected[p]);
      }
      if (has_selected_ancestor[c]) selected[c] = 0;
    }
  }

  // Label each point with the nearest selected cluster on its fall-out chain.
  std::vector<int> point_cid(n, -1);
  for (int i = 0; i < n; ++i) {
    int c = fall_cid[i];
    while (c >= 0 && !selected[c]) c = cond[c].parent;
    point_cid[i] = c;
  }

  // Renumber selected clusters by their smallest member quote_id.
  std::map<int, std::vector<int>> by_cid;
  for (int i = 0; i < n; ++i) {
    if (point_cid[i] >= 0) by_cid[point_cid[i]].push_back(i);
  }
  std::vector<std::pair<std::string, int>> order;
  for (auto& [c, mem] : by_cid) {
    std::sort(mem.begin(), mem.end(), [&](int a, int b) { return ids[a] < ids[b]; });
    order.emplace_back(ids[mem.front()], c);
  }
  std::sort(order.begin(), order.end());

  ClusterResult res;
  res.labels.assign(n, -1);
  res.probability.assign(n, 0.0);
  res.n_clusters = static_cast<int>(order.size());
  res.members.resize(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int c = order[k].second;
    const auto& mem = by_cid[c];
    double lambda_max = 0.0;
    for (const int i : mem) lambda_max = std::max(lambda_max, fall_lambda[i]);
    for (const int i : mem) {
      res.labels[i] = static_cast<int>(k);
      res.probability[i] = lambda_max > 0.0 ? fall_lambda[i] / lambda_max : 1.0;
    }
    res.members[k] = mem;
  }
  return res;
}

// ---- quote clusters ----------------------------------------------------------

int QuoteCluster::distinct_outlets(const Sentiment* channel) const {
  std::vector<const std::string*> seen;
  int count = 0;
  for (const auto& m : members) {
    if (channel && m.channel != *channel) continue;
    bool found = false;
    for (const auto* s : seen) {
      if (*s == m.outlet_id) {
        found = true;
        break;
      }
    }
    if (!found) {
      seen.push_back(&m.outlet_id);
      ++count;
    }
  }
  return count;
}

std::vector<std::int64_t> QuoteCluster::usage_times(const std::string& outlet_id,
                                                    const Sentiment* channel) const {
  std::vector<std::int64_t> times;
  for (const auto& m : members) {
    if (m.outlet_id != outlet_id) continue;
    if (channel && m.channel != *channel) continue;
    times.push_back(m.time);
  }
  std::sort(times.begin(), times.end());
  return times;
}

QuoteClustering cluster_quotes(const ReducedMatrix& reduced, const Corpus& corpus,
                               const ClusterParams& params) {
  std::map<std::string, const QuoteRecord*> by_id;
  for (const auto& r : corpus.records) by_id[r.quote_id] = &r;
  for (const auto& id : reduced.quote_ids) {
    if (!by_id.count(id)) throw Error("cluster_quotes: quote_id not in corpus: " + id);
  }
  if (reduced.quote_ids.size() != corpus.records.size()) {
    throw Error("cluster_quotes: reduced matrix does not cover the corpus");
  }

  QuoteClustering out;
  out.assignment = hdbscan(reduced.vectors, reduced.quote_ids, params);
  out.clusters.resize(out.assignment.members.size());
  for (std::size_t k = 0; k < out.assignment.members.size(); ++k) {
    QuoteCluster& qc = out.clusters[k];
    qc.cluster_id = static_cast<int>(k);
    for (const int row : out.assignment.members[k]) {
      const QuoteRecord* r = by_id.at(reduced.quote_ids[row]);
      qc.members.push_back(
          {r->quote_id, r->outlet_id, r->published_at, r->sentiment, r->topic});
    }
    std::sort(qc.members.begin(), qc.members.end(),
              [](const QuoteUse& a, const QuoteUse& b) { return a.quote_id < b.quote_id; });
  }
  for (std::size_t i = 0; i < reduced.quote_ids.size(); ++i) {
    if (out.assignment.labels[i] < 0) out.noise.push_back(reduced.quote_ids[i]);
  }
  std::sort(out.noise.begin(), out.noise.end());
  return out;
}

void export_assignments(const QuoteClustering& qc, const std::vector<std::string>& ids,
                        const std::string& path) {
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  std::ostringstream out;
  out << "quote_id,cluster_id,probability\n";
  for (const std::size_t i : order) {
    out << csv_escape(ids[i]) << ',' << qc.assignment.labels[i] << ','
        << fmt_double(qc.assignment.probability[i]) << '\n';
  }
  write_text_file(path, out.str());
}

// ---- evaluation ----------------------------------------------------------------

MatchEvaluation evaluate_matching(const std::map<std::string, int>& predicted,
                                  const std::map<std::string, int>& truth) {
  if (truth.empty()) throw Error("evaluate_matching: empty truth set");
  // Contingency of (predicted cluster, truth group) over the truth subset.
  // Noise points act as singletons: each gets a unique synthetic label.
  std::map<std::pair<int, int>, long long> cell;
  std::map<int, long long> pred_count, truth_count;
  int next_noise = -1;
  for (const auto& [qid, tg] : truth) {
    const auto it = predicted.find(qid);
    if (it == predicted.end()) {
      throw Error("evaluate_matching: quote missing from prediction: " + qid);
    }
    int pl = it->second;
    if (pl < 0) pl = --next_noise;
    cell[{pl, tg}] += 1;
    pred_count[pl] += 1;
    truth_count[tg] += 1;
  }
  auto pairs = [](long long m) { return m * (m - 1) / 2; };
  const long long total = pairs(static_cast<long long>(truth.size()));
  long long tp = 0, pred_pairs = 0, truth_pairs = 0;
  for (const auto& [_, m] : cell) tp += pairs(m);
  for (const auto& [_, m] : pred_count) pred_pairs += pairs(m);
  for (const auto& [_, m] : truth_count) truth_pairs += pairs(m);

  MatchEvaluation ev;
  ev.tp = tp;
  ev.fp = pred_pairs - tp;
  ev.fn = truth_pairs - tp;
  ev.tn = total - pred_pairs - truth_pairs + tp;
  ev.no_positive_predictions = (tp + ev.fp) == 0;
  ev.no_positive_truth = (tp + ev.fn) == 0;
  ev.precision = ev.no_positive_predictions
                     ? 1.0
                     : static_cast<double>(tp) / static_cast<double>(tp + ev.fp);
  ev.recall = ev.no_positive_truth
                  ? 1.0
                  : static_cast<double>(tp) / static_cast<double>(tp + ev.fn);
  ev.accuracy = total > 0
                    ? static_cast<double>(tp + ev.tn) / static_cast<double>(total)
                    : 1.0;
  return ev;
}

std::vector<SweepRow> sweep(const Eigen::MatrixXd& points,
                            const std::vector<std::string>& ids,
                            const std::vector<ClusterParams>& grid,
                            const std::map<std::string, int>& truth) {
  if (grid.empty()) throw Error("sweep: empty parameter grid");
  if (truth.empty()) throw Error("sweep: empty truth set");

  const int n = static_cast<int>(points.rows());
  const Eigen::MatrixXd dist = pairwise_distances(points);  // shared across settings

  std::vector<SweepRow> rows;
  for (const auto& params : grid) {
    SweepRow row;
    row.params = params;
    try {
      const ClusterResult res = hdbscan_with_distances(dist, ids, params);
      std::map<std::string, int> predicted;
      for (int i = 0; i < n; ++i) predicted[ids[i]] = res.labels[i];
      row.eval = evaluate_matching(predicted, truth);
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.ok != b.ok) return a.ok > b.ok;
    return a.eval.recall < b.eval.recall;
  });
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "min_cluster_size,min_samples,selection,tp,fp,fn,tn,precision,recall,"
         "accuracy,no_positive_predictions,status\n";
  for (const auto& r : rows) {
    out << r.params.min_cluster_size << ',' << r.params.min_samples << ','
        << (r.params.selection == ClusterSelection::leaf ? "leaf" : "excess_of_mass")
        << ',';
    if (r.ok) {
      out << r.eval.tp << ',' << r.eval.fp << ',' << r.eval.fn << ',' << r.eval.tn << ','
          << fmt_double(r.eval.precision) << ',' << fmt_double(r.eval.recall) << ','
          << fmt_double(r.eval.accuracy) << ','
          << (r.eval.no_positive_predictions ? 1 : 0) << ",ok\n";
    } else {
      out << ",,,,,,,," << csv_escape(r.error) << '\n';
    }
  }
  return out.str();
}

}  // namespace quoteflow
