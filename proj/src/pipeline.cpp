#include "quoteflow/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "quoteflow/embed.hpp"
#include "quoteflow/netbuild.hpp"
#include "quoteflow/util.hpp"

namespace quoteflow {

namespace fs = std::filesystem;
using nlohmann::json;

Stage parse_stage(const std::string& name) {
  if (name == "simulate") return Stage::simulate;
  if (name == "ingest") return Stage::ingest;
  if (name == "embed") return Stage::embed;
  if (name == "reduce") return Stage::reduce;
  if (name == "cluster") return Stage::cluster;
  if (name == "salience") return Stage::salience;
  if (name == "network") return Stage::network;
  if (name == "fit") return Stage::fit;
  if (name == "impact") return Stage::impact;
  if (name == "report") return Stage::report;
  if (name == "all") return Stage::all;
  throw Error("unknown stage: '" + name + "'");
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::simulate: return "simulate";
    case Stage::ingest: return "ingest";
    case Stage::embed: return "embed";
    case Stage::reduce: return "reduce";
    case Stage::cluster: return "cluster";
    case Stage::salience: return "salience";
    case Stage::network: return "network";
    case Stage::fit: return "fit";
    case Stage::impact: return "impact";
    case Stage::report: return "report";
    case Stage::all: return "all";
  }
  return "?";
}

std::string PipelineConfig::resolve(const std::string& path) const {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(config_dir) / path).lexically_normal().string();
}

std::string PipelineConfig::artifact(const std::string& name) const {
  return (fs::path(resolve(output_dir)) / name).string();
}

// ---- config loading ---------------------------------------------------------

namespace {

// Accumulates schema violations so the user sees all of them at once.
struct Problems {
  std::vector<std::string> list;
  void add(const std::string& p) { list.push_back(p); }
  void raise_if_any() const {
    if (!list.empty()) {
      throw Error("config violations:\n  - " + join(list, "\n  - "));
    }
  }
};

template <typename T>
T get_or(const json& j, const std::string& key, const T& fallback, Problems& problems,
         const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    problems.add(where + "." + key + ": wrong type");
    return fallback;
  }
}

ClusterParams parse_cluster_params(const json& j, Problems& problems,
                                   const std::string& where) {
  ClusterParams p;
  p.min_cluster_size = get_or(j, "min_cluster_size", 5, problems, where);
  p.min_samples = get_or(j, "min_samples", std::min(3, p.min_cluster_size), problems, where);
  const std::string sel =
      get_or<std::string>(j, "selection", "excess_of_mass", problems, where);
  if (sel == "leaf") {
    p.selection = ClusterSelection::leaf;
  } else if (sel == "excess_of_mass") {
    p.selection = ClusterSelection::excess_of_mass;
  } else {
    problems.add(where + ".selection: '" + sel + "' (excess_of_mass|leaf)");
  }
  try {
    p.validate();
  } catch (const std::exception& e) {
    problems.add(where + ": " + e.what());
  }
  return p;
}

}  // namespace

PipelineConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("config parse error in " + path + ": " + e.what());
  }

  Problems problems;
  PipelineConfig cfg;
  cfg.config_dir = fs::path(path).parent_path().string();
  if (cfg.config_dir.empty()) cfg.config_dir = ".";

  const json paths = j.value("paths", json::object());
  cfg.corpus_path = get_or<std::string>(paths, "corpus", "", problems, "paths");
  cfg.outlets_path = get_or<std::string>(paths, "outlets", "", problems, "paths");
  cfg.cache_dir = get_or<std::string>(paths, "cache_dir", "cache", problems, "paths");
  cfg.output_dir = get_or<std::string>(paths, "output_dir", "out", problems, "paths");
  if (cfg.output_dir.empty()) problems.add("paths.output_dir: must not be empty");

  if (j.contains("ingest")) {
    const json& ji = j.at("ingest");
    cfg.ingest.strict = get_or(ji, "strict", false, problems, "ingest");
    if (ji.contains("sentiment_map")) {
      for (const auto& [k, v] : ji.at("sentiment_map").items()) {
        if (!v.is_string()) {
          problems.add("ingest.sentiment_map." + k + ": must be a string");
          continue;
        }
        cfg.ingest.sentiment_map[k] = v.get<std::string>();
      }
    }
  }

  if (j.contains("filter")) {
    const json& jf = j.at("filter");
    cfg.filter.include_topics =
        get_or<std::vector<std::string>>(jf, "include_topics", {}, problems, "filter");
    cfg.filter.exclude_topics =
        get_or<std::vector<std::string>>(jf, "exclude_topics", {}, problems, "filter");
    for (const auto& s :
         get_or<std::vector<std::string>>(jf, "sentiments", {}, problems, "filter")) {
      try {
        cfg.filter.sentiments.push_back(parse_sentiment(s));
      } catch (const std::exception& e) {
        problems.add(std::string("filter.sentiments: ") + e.what());
      }
    }
    for (const char* key : {"date_from", "date_to"}) {
      if (jf.contains(key)) {
        try {
          const auto ts = parse_iso8601(jf.at(key).get<std::string>());
          if (std::string(key) == "date_from") cfg.filter.date_from = ts;
          else cfg.filter.date_to = ts;
        } catch (const std::exception& e) {
          problems.add(std::string("filter.") + key + ": " + e.what());
        }
      }
    }
  }

  if (j.contains("embed")) {
    const json& je = j.at("embed");
    cfg.embed.provider = get_or<std::string>(je, "provider", "builtin", problems, "embed");
    if (cfg.embed.provider != "builtin" && cfg.embed.provider != "command") {
      problems.add("embed.provider: '" + cfg.embed.provider + "' (builtin|command)");
    }
    cfg.embed.dim = get_or(je, "dim", 256, problems, "embed");
    if (cfg.embed.dim < 8) problems.add("embed.dim: must be >= 8");
    cfg.embed.command = get_or<std::string>(je, "command", "", problems, "embed");
    cfg.embed.provider_tag = get_or<std::string>(je, "provider_tag", "", problems, "embed");
    if (cfg.embed.provider == "command" && cfg.embed.command.empty()) {
      problems.add("embed.command: required for provider=command");
    }
    cfg.embed.k = get_or(je, "k", 70, problems, "embed");
    if (cfg.embed.k < 1) problems.add("embed.k: must be >= 1");
  }

  if (j.contains("cluster")) {
    const json& jc = j.at("cluster");
    cfg.cluster = parse_cluster_params(jc, problems, "cluster");
    cfg.truth_file = get_or<std::string>(jc, "truth_file", "", problems, "cluster");
    if (jc.contains("sweep_grid")) {
      for (const auto& entry : jc.at("sweep_grid")) {
        cfg.sweep_grid.push_back(parse_cluster_params(entry, problems, "cluster.sweep_grid"));
      }
    }
  }

  if (j.contains("salience")) {
    const json& js = j.at("salience");
    try {
      cfg.salience.cfg.variant =
          parse_variant(get_or<std::string>(js, "variant", "main_text", problems, "salience"));
      cfg.salience.cfg.g1 =
          parse_gfunc(get_or<std::string>(js, "g1", "sqrt", problems, "salience"));
      cfg.salience.cfg.g2 =
          parse_gfunc(get_or<std::string>(js, "g2", "sqrt", problems, "salience"));
    } catch (const std::exception& e) {
      problems.add(std::string("salience: ") + e.what());
    }
    cfg.salience.channels = get_or<std::vector<std::string>>(
        js, "channels", {"pro_a", "pro_b"}, problems, "salience");
    for (const auto& ch : cfg.salience.channels) {
      if (ch != "all" && ch != "pro_a" && ch != "pro_b" && ch != "neutral") {
        problems.add("salience.channels: '" + ch + "' (pro_a|pro_b|neutral|all)");
      }
    }
    if (cfg.salience.channels.empty()) problems.add("salience.channels: must not be empty");
    cfg.salience.topic_focus =
        get_or<std::string>(js, "topic_focus", "", problems, "salience");
  }

  if (j.contains("network")) {
    const json& jn = j.at("network");
    cfg.network.communities = get_or(jn, "communities", 10, problems, "network");
    if (cfg.network.communities < 1) problems.add("network.communities: must be >= 1");
    cfg.network.restarts = get_or(jn, "restarts", 8, problems, "network");
    if (cfg.network.restarts < 1) problems.add("network.restarts: must be >= 1");
    cfg.network.seed = get_or<std::uint64_t>(jn, "seed", 42, problems, "network");
  }

  if (j.contains("causal")) {
    const json& jc = j.at("causal");
    cfg.causal.n_hops = get_or(jc, "n_hops", 2, problems, "causal");
    cfg.causal.chains = get_or(jc, "chains", 4, problems, "causal");
    cfg.causal.iterations = get_or(jc, "iterations", 5000, problems, "causal");
    cfg.causal.burn_fraction = get_or(jc, "burn_fraction", 0.5, problems, "causal");
    cfg.causal.thin = get_or(jc, "thin", 5, problems, "causal");
    cfg.causal.seed = get_or<std::uint64_t>(jc, "seed", 7, problems, "causal");
    cfg.causal.sample_network = get_or(jc, "sample_network", true, problems, "causal");
    try {
      cfg.causal.validate();
    } catch (const std::exception& e) {
      problems.add(std::string("causal: ") + e.what());
    }
  }

  if (j.contains("report")) {
    const json& jr = j.at("report");
    cfg.report.source_key =
        get_or<std::string>(jr, "source_key", "orientation", problems, "report");
    cfg.report.target_keys = get_or<std::vector<std::string>>(
        jr, "target_keys", {"orientation", "country"}, problems, "report");
    cfg.report.top_quotes = get_or(jr, "top_quotes", 10, problems, "report");
    const std::set<std::string> keys{"orientation", "affiliation", "country",
                                     "country_affiliation", "outlet"};
    if (!keys.count(cfg.report.source_key)) {
      problems.add("report.source_key: '" + cfg.report.source_key + "'");
    }
    for (const auto& k : cfg.report.target_keys) {
      if (!keys.count(k)) problems.add("report.target_keys: '" + k + "'");
    }
  }

  if (j.contains("simulate")) {
    const json& js = j.at("simulate");
    SimConfig sim;
    sim.n_outlets = get_or(js, "n_outlets", 20, problems, "simulate");
    sim.n_quotes = get_or(js, "n_quotes", 400, problems, "simulate");
    sim.seed = get_or<std::uint64_t>(js, "seed", 1, problems, "simulate");
    sim.truth.tau = get_or(js, "tau", 1.0, problems, "simulate");
    sim.truth.gamma =
        get_or<std::vector<double>>(js, "gamma", {0.5, 0.5}, problems, "simulate");
    sim.truth.mu = get_or(js, "mu", 0.1, problems, "simulate");
    sim.pro_a_fraction = get_or(js, "pro_a_fraction", 0.45, problems, "simulate");
    sim.pro_b_fraction = get_or(js, "pro_b_fraction", 0.45, problems, "simulate");
    sim.follow_scale = get_or(js, "follow_scale", 0.25, problems, "simulate");
    sim.extra_use_p = get_or(js, "extra_use_p", 0.35, problems, "simulate");
    sim.max_uses = get_or(js, "max_uses", 5, problems, "simulate");
    sim.state_fraction = get_or(js, "state_fraction", 0.3, problems, "simulate");
    sim.n_topics = get_or(js, "n_topics", 5, problems, "simulate");
    sim.hub_outlet = get_or(js, "hub_outlet", -1, problems, "simulate");
    sim.hub_scale = get_or(js, "hub_scale", 1.0, problems, "simulate");
    if (js.contains("communities")) {
      const json& jb = js.at("communities");
      sim.communities.sizes =
          get_or<std::vector<int>>(jb, "sizes", {}, problems, "simulate.communities");
      sim.communities.within_rate =
          get_or(jb, "within_rate", 4.0, problems, "simulate.communities");
      sim.communities.between_rate =
          get_or(jb, "between_rate", 0.2, problems, "simulate.communities");
    }
    try {
      sim.validate();
    } catch (const std::exception& e) {
      problems.add(std::string("simulate: ") + e.what());
    }
    cfg.simulate = sim;
  }

  if (cfg.corpus_path.empty() && !cfg.simulate) {
    problems.add("paths.corpus: required unless a simulate section is present");
  }
  if (cfg.outlets_path.empty() && !cfg.simulate) {
    problems.add("paths.outlets: required unless a simulate section is present");
  }

  problems.raise_if_any();
  return cfg;
}

// ---- manifest / cache ---------------------------------------------------------

namespace {

constexpr const char* kPipelineVersion = "quoteflow-1";

class Manifest {
 public:
  explicit Manifest(const std::string& dir)
      : path_((fs::path(dir) / "manifest.json").string()) {
    if (fs::exists(path_)) {
      try {
        data_ = json::parse(read_text_file(path_));
      } catch (...) {
        data_ = json::object();
      }
    } else {
      data_ = json::object();
    }
    if (!data_.contains("stages")) data_["stages"] = json::object();
    data_["version"] = kPipelineVersion;
  }

  bool fresh(const std::string& stage, const std::string& key,
             const std::string& out_dir) const {
    const auto& stages = data_.at("stages");
    if (!stages.contains(stage)) return false;
    const auto& entry = stages.at(stage);
    if (entry.value("key", std::string{}) != key) return false;
    const json outputs = entry.value("outputs", json::object());
    for (const auto& [file, hash] : outputs.items()) {
      const auto p = fs::path(out_dir) / file;
      if (!fs::exists(p)) return false;
      if (hash_hex(hash_file(p.string())) != hash.get<std::string>()) return false;
    }
    return true;
  }

  // The stage entry carries everything needed to audit a run: parameter JSON
  // (seeds included), input hashes, output hashes, and the cache key.
  void record(const std::string& stage, const std::string& key, const json& params,
              const std::vector<std::string>& input_files,
              const std::vector<std::string>& outputs, const std::string& out_dir) {
    json entry;
    entry["key"] = key;
    entry["params"] = params;
    json ins = json::object();
    for (const auto& file : input_files) {
      ins[fs::path(file).filename().string()] = hash_hex(hash_file(file));
    }
    entry["inputs"] = ins;
    json outs = json::object();
    for (const auto& file : outputs) {
      outs[file] = hash_hex(hash_file((fs::path(out_dir) / file).string()));
    }
    entry["outputs"] = outs;
    data_["stages"][stage] = entry;
    write_text_file(path_, data_.dump(2) + "\n");
  }

 private:
  std::string path_;
  json data_;
};

std::string stage_for_artifact(const std::string& name) {
  if (name.rfind("sim_", 0) == 0) return "simulate";
  if (name == "corpus.ndjson" || name == "outlets.ndjson") return "ingest";
  if (name == "embeddings.bin") return "embed";
  if (name == "reduced.bin") return "reduce";
  if (name == "clusters.csv") return "cluster";
  if (name == "salience.csv") return "salience";
  if (name == "covariates.csv" || name == "network.dot") return "network";
  if (name.rfind("posterior_", 0) == 0 || name.rfind("diagnostics_", 0) == 0) return "fit";
  if (name == "impact.csv") return "impact";
  return "?";
}

std::string require_artifact(const PipelineConfig& cfg, const std::string& name) {
  const std::string p = cfg.artifact(name);
  if (!fs::exists(p)) {
    throw Error("missing artifact '" + name + "'; run the '" +
                stage_for_artifact(name) + "' stage first");
  }
  return p;
}

std::uint64_t hash_params(const json& j) { return fnv1a64(j.dump()); }

std::string make_key(std::uint64_t params_hash,
                     const std::vector<std::string>& input_files) {
  std::uint64_t h = params_hash;
  for (const auto& f : input_files) h = fnv1a64_combine(h, hash_file(f));
  return hash_hex(h);
}

Corpus load_corpus_artifact(const PipelineConfig& cfg) {
  const std::string records = require_artifact(cfg, "corpus.ndjson");
  const std::string outlets = require_artifact(cfg, "outlets.ndjson");
  IngestOptions opts;
  opts.strict = true;
  return ingest(records, outlets, opts);
}

std::vector<std::string> outlet_universe(const Corpus& corpus) {
  std::vector<std::string> ids;
  for (const auto& o : corpus.outlets) ids.push_back(o.outlet_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<QuoteCluster> load_clusters(const PipelineConfig& cfg, const Corpus& corpus) {
  const std::string path = require_artifact(cfg, "clusters.csv");
  std::map<std::string, const QuoteRecord*> by_id;
  for (const auto& r : corpus.records) by_id[r.quote_id] = &r;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);  // header
  std::map<int, QuoteCluster> acc;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = csv_split(line);
    if (f.size() < 2) throw Error("clusters.csv: bad row: " + line);
    const int label = std::stoi(f[1]);
    if (label < 0) continue;
    const auto it = by_id.find(f[0]);
    if (it == by_id.end()) throw Error("clusters.csv: unknown quote_id " + f[0]);
    const QuoteRecord* r = it->second;
    auto& qc = acc[label];
    qc.cluster_id = label;
    qc.members.push_back({r->quote_id, r->outlet_id, r->published_at, r->sentiment,
                          r->topic});
  }
  std::vector<QuoteCluster> clusters;
  for (auto& [_, qc] : acc) {
    std::sort(qc.members.begin(), qc.members.end(),
              [](const QuoteUse& a, const QuoteUse& b) { return a.quote_id < b.quote_id; });
    clusters.push_back(std::move(qc));
  }
  return clusters;
}

std::vector<QuoteCluster> filter_members_by_topic(const std::vector<QuoteCluster>& in,
                                                  const std::string& topic,
                                                  bool keep_topic) {
  std::vector<QuoteCluster> out;
  for (const auto& qc : in) {
    QuoteCluster copy;
    copy.cluster_id = qc.cluster_id;
    for (const auto& m : qc.members) {
      if ((m.topic == topic) == keep_topic) copy.members.push_back(m);
    }
    if (!copy.members.empty()) out.push_back(std::move(copy));
  }
  return out;
}

std::optional<Sentiment> channel_filter(const std::string& ch) {
  if (ch == "all") return std::nullopt;
  return parse_sentiment(ch);
}

SalienceMatrix pick_channel(std::vector<SalienceMatrix>& matrices,
                            const std::string& channel) {
  for (auto& m : matrices) {
    if (m.channel == channel) return std::move(m);
  }
  throw Error("salience.csv: channel '" + channel + "' not present");
}

NodeCovariates load_covariates(const PipelineConfig& cfg,
                               const std::vector<std::string>& universe) {
  const std::string path = require_artifact(cfg, "covariates.csv");
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  NodeCovariates cov;
  cov.outlets = universe;
  const int n = static_cast<int>(universe.size());
  cov.in_degree = Eigen::VectorXd::Zero(n);
  cov.out_degree = Eigen::VectorXd::Zero(n);
  cov.community = Eigen::VectorXi::Zero(n);
  std::map<std::string, int> index;
  for (int i = 0; i < n; ++i) index[universe[i]] = i;
  int max_comm = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 4) throw Error("covariates.csv: bad row: " + line);
    const auto it = index.find(f[0]);
    if (it == index.end()) throw Error("covariates.csv: unknown outlet " + f[0]);
    cov.in_degree[it->second] = std::stod(f[1]);
    cov.out_degree[it->second] = std::stod(f[2]);
    cov.community[it->second] = std::stoi(f[3]);
    max_comm = std::max(max_comm, cov.community[it->second]);
  }
  cov.n_communities = max_comm + 1;
  return cov;
}

Eigen::MatrixXi outcome_matrix(const SalienceMatrix& kappa) {
  // Outcomes scaled by ten and rounded: one impact unit = 0.1 quote.
  const Eigen::Index n = kappa.kappa.rows();
  Eigen::MatrixXi y(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      y(i, j) = static_cast<int>(std::llround(10.0 * kappa.kappa(i, j)));
    }
  }
  y.diagonal().setZero();
  return y;
}

std::map<std::string, int> load_truth_map(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  std::map<std::string, int> truth;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = csv_split(line);
    if (f.size() < 2) throw Error("truth file: bad row: " + line);
    truth[f[0]] = std::stoi(f[1]);
  }
  return truth;
}

struct ParsedImpacts {
  std::map<std::string, std::vector<ImpactRow>> by_channel;
};

ParsedImpacts load_impacts(const PipelineConfig& cfg,
                           const std::vector<std::string>& universe) {
  const std::string path = require_artifact(cfg, "impact.csv");
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < universe.size(); ++i) {
    index[universe[i]] = static_cast<int>(i);
  }
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  ParsedImpacts out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 12) throw Error("impact.csv: bad row: " + line);
    ImpactRow r;
    r.source = index.at(f[0]);
    r.target = index.at(f[1]);
    r.kappa = std::stod(f[3]);
    r.mean = std::stod(f[4]);
    r.median = std::stod(f[5]);
    r.lo95 = std::stod(f[6]);
    r.hi95 = std::stod(f[7]);
    if (!f[8].empty()) {
      r.has_normalized = true;
      r.normalized_mean = std::stod(f[8]);
      r.normalized_lo = std::stod(f[9]);
      r.normalized_hi = std::stod(f[10]);
      r.out_of_range = f[11] == "1";
    }
    out.by_channel[f[2]].push_back(r);
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// ---- stages -------------------------------------------------------------------

void stage_simulate(const PipelineConfig& cfg, Manifest& manifest, bool force,
                    std::ostream& log) {
  if (!cfg.simulate) throw Error("simulate: no simulate section in config");
  json params;
  params["seed"] = cfg.simulate->seed;
  params["n_outlets"] = cfg.simulate->n_outlets;
  params["n_quotes"] = cfg.simulate->n_quotes;
  params["tau"] = cfg.simulate->truth.tau;
  params["gamma"] = cfg.simulate->truth.gamma;
  params["mu"] = cfg.simulate->truth.mu;
  params["within"] = cfg.simulate->communities.within_rate;
  params["between"] = cfg.simulate->communities.between_rate;
  params["sizes"] = cfg.simulate->communities.sizes;
  params["pro_a"] = cfg.simulate->pro_a_fraction;
  params["pro_b"] = cfg.simulate->pro_b_fraction;
  params["follow_scale"] = cfg.simulate->follow_scale;
  params["extra_use_p"] = cfg.simulate->extra_use_p;
  params["max_uses"] = cfg.simulate->max_uses;
  params["state_fraction"] = cfg.simulate->state_fraction;
  params["n_topics"] = cfg.simulate->n_topics;
  params["hub_outlet"] = cfg.simulate->hub_outlet;
  params["hub_scale"] = cfg.simulate->hub_scale;
  const std::string key = make_key(hash_params(params), {});
  if (!force && manifest.fresh("simulate", key, cfg.resolve(cfg.output_dir))) {
    log << "[simulate] cache hit\n";
    return;
  }
  const SimTruth truth = generate(*cfg.simulate);
  export_corpus(truth.corpus, cfg.artifact("sim_records.ndjson"),
                cfg.artifact("sim_outlets.ndjson"));
  write_text_file(cfg.artifact("sim_truth_edges.csv"), truth_edges_csv(truth));
  write_text_file(cfg.artifact("sim_families.csv"), families_csv(truth));
  manifest.record("simulate", key, params, {},
                  {"sim_records.ndjson", "sim_outlets.ndjson", "sim_truth_edges.csv",
                   "sim_families.csv"},
                  cfg.resolve(cfg.output_dir));
  log << "[simulate] " << truth.corpus.records.size() << " records, "
      << truth.corpus.outlets.size() << " outlets\n";
}

void stage_ingest(const PipelineConfig& cfg, Manifest& manifest, bool force,
                  std::ostream& log) {
  std::string records = cfg.resolve(cfg.corpus_path);
  std::string outlets = cfg.resolve(cfg.outlets_path);
  if (records.empty() && cfg.simulate) {
    records = require_artifact(cfg, "sim_records.ndjson");
    outlets = require_artifact(cfg, "sim_outlets.ndjson");
  }
  json params;
  params["strict"] = cfg.ingest.strict;
  params["sentiment_map"] = cfg.ingest.sentiment_map;
  params["include_topics"] = cfg.filter.include_topics;
  params["exclude_topics"] = cfg.filter.exclude_topics;
  params["n_sentiments"] = cfg.filter.sentiments.size();
  for (const auto s : cfg.filter.sentiments) params["sentiments"].push_back(to_string(s));
  if (cfg.filter.date_from) params["date_from"] = *cfg.filter.date_from;
  if (cfg.filter.date_to) params["date_to"] = *cfg.filter.date_to;
  const std::string key = make_key(hash_params(params), {records, outlets});
  if (!force && manifest.fresh("ingest", key, cfg.resolve(cfg.output_dir))) {
    log << "[ingest] cache hit\n";
    return;
  }
  IngestReport report;
  Corpus corpus = ingest(records, outlets, cfg.ingest, &report);
  const bool filtered = !cfg.filter.include_topics.empty() ||
                        !cfg.filter.exclude_topics.empty() ||
                        !cfg.filter.sentiments.empty() || cfg.filter.date_from ||
                        cfg.filter.date_to;
  if (filtered) corpus = filter(corpus, cfg.filter);
  export_corpus(corpus, cfg.artifact("corpus.ndjson"), cfg.artifact("outlets.ndjson"));
  json rep;
  rep["parsed"] = report.parsed;
  rep["skipped"] = report.skipped;
  rep["records_after_filter"] = corpus.records.size();
  write_text_file(cfg.artifact("ingest_report.json"), rep.dump(2) + "\n");
  for (const auto& w : report.warnings) log << "[ingest] warning: " << w << "\n";
  manifest.record("ingest", key, params, {records, outlets},
                  {"corpus.ndjson", "outlets.ndjson", "ingest_report.json"},
                  cfg.resolve(cfg.output_dir));
  log << "[ingest] " << corpus.records.size() << " records kept, " << report.skipped
      << " skipped\n";
}

void stage_embed(const PipelineConfig& cfg, Manifest& manifest, bool force,
                 std::ostream& log) {
  const std::string corpus_file = require_artifact(cfg, "corpus.ndjson");
  json params;
  params["provider"] = cfg.embed.provider;
  params["dim"] = cfg.embed.dim;
  params["command"] = cfg.embed.command;
  params["tag"] = cfg.embed.provider_tag;
  const std::string key =
      make_key(hash_params(params), {corpus_file, cfg.artifact("outlets.ndjson")});
  if (!force && manifest.fresh("embed", key, cfg.resolve(cfg.output_dir))) {
    log << "[embed] cache hit\n";
    return;
  }
  const Corpus corpus = load_corpus_artifact(cfg);

  HashedNgramProvider builtin(cfg.embed.dim);
  std::unique_ptr<CommandProvider> external;
  EmbeddingProvider* provider = &builtin;
  if (cfg.embed.provider == "command") {
    const std::string tag =
        cfg.embed.provider_tag.empty() ? "command" : cfg.embed.provider_tag;
    external = std::make_unique<CommandProvider>(tag, cfg.embed.command,
                                                 cfg.resolve(cfg.cache_dir));
    provider = external.get();
  }

  const std::string cache_dir = cfg.resolve(cfg.cache_dir);
  fs::create_directories(cache_dir);
  const std::string cache_file =
      (fs::path(cache_dir) /
       ("embed_" + provider->tag() + "_" + hash_hex(hash_file(corpus_file)) + ".bin"))
          .string();
  EmbeddingMatrix matrix;
  if (fs::exists(cache_file)) {
    matrix = load_matrix(cache_file);
    log << "[embed] matrix cache hit: " << cache_file << "\n";
  } else {
    matrix = embed(corpus, *provider);
    save_matrix(cache_file, matrix);
  }
  save_matrix(cfg.artifact("embeddings.bin"), matrix);
  manifest.record("embed", key, params, {corpus_file}, {"embeddings.bin"},
                  cfg.resolve(cfg.output_dir));
  log << "[embed] " << matrix.vectors.rows() << "x" << matrix.vectors.cols() << " ("
      << matrix.provider_tag << ")\n";
}

void stage_reduce(const PipelineConfig& cfg, Manifest& manifest, bool force,
                  std::ostream& log) {
  const std::string emb_file = require_artifact(cfg, "embeddings.bin");
  json params;
  params["k"] = cfg.embed.k;
  const std::string key = make_key(hash_params(params), {emb_file});
  if (!force && manifest.fresh("reduce", key, cfg.resolve(cfg.output_dir))) {
    log << "[reduce] cache hit\n";
    return;
  }
  const EmbeddingMatrix emb = load_matrix(emb_file);
  int k = cfg.embed.k;
  const int limit =
      static_cast<int>(std::min<Eigen::Index>(emb.vectors.rows(), emb.vectors.cols()));
  if (k > limit) {
    log << "[reduce] warning: k=" << k << " clamped to " << limit << "\n";
    k = limit;
  }
  const ReducedMatrix red = reduce(emb, k);
  save_reduced(cfg.artifact("reduced.bin"), red);
  std::ostringstream ev;
  ev << "component,explained_variance\n";
  for (Eigen::Index c = 0; c < red.explained_variance.size(); ++c) {
    ev << c << ',' << fmt_double(red.explained_variance[c]) << '\n';
  }
  write_text_file(cfg.artifact("explained_variance.csv"), ev.str());
  manifest.record("reduce", key, params, {emb_file},
                  {"reduced.bin", "explained_variance.csv"},
                  cfg.resolve(cfg.output_dir));
  log << "[reduce] kept " << k << " components\n";
}

void stage_cluster(const PipelineConfig& cfg, Manifest& manifest, bool force,
                   std::ostream& log) {
  const std::string red_file = require_artifact(cfg, "reduced.bin");
  json params;
  params["min_cluster_size"] = cfg.cluster.min_cluster_size;
  params["min_samples"] = cfg.cluster.min_samples;
  params["selection"] = cfg.cluster.selection == ClusterSelection::leaf ? "leaf" : "eom";
  params["truth_file"] = cfg.truth_file;
  params["grid_size"] = cfg.sweep_grid.size();
  for (const auto& g : cfg.sweep_grid) {
    params["grid"].push_back({g.min_cluster_size, g.min_samples,
                              g.selection == ClusterSelection::leaf ? 1 : 0});
  }
  const std::string key = make_key(hash_params(params),
                                   {red_file, cfg.artifact("corpus.ndjson")});
  if (!force && manifest.fresh("cluster", key, cfg.resolve(cfg.output_dir))) {
    log << "[cluster] cache hit\n";
    return;
  }
  const Corpus corpus = load_corpus_artifact(cfg);
  const ReducedMatrix red = load_reduced(red_file);
  const QuoteClustering qc = cluster_quotes(red, corpus, cfg.cluster);
  export_assignments(qc, red.quote_ids, cfg.artifact("clusters.csv"));
  std::vector<std::string> outputs{"clusters.csv"};

  std::string truth_path = cfg.resolve(cfg.truth_file);
  if (truth_path.empty() && cfg.simulate &&
      fs::exists(cfg.artifact("sim_families.csv"))) {
    truth_path = cfg.artifact("sim_families.csv");
  }
  if (!cfg.sweep_grid.empty()) {
    if (truth_path.empty() || !fs::exists(truth_path)) {
      throw Error("cluster: sweep_grid configured but no truth labels available");
    }
    const auto truth = load_truth_map(truth_path);
    const auto rows = sweep(red.vectors, red.quote_ids, cfg.sweep_grid, truth);
    write_text_file(cfg.artifact("pr_sweep.csv"), sweep_to_csv(rows));
    outputs.push_back("pr_sweep.csv");
  }
  manifest.record("cluster", key, params,
                  {red_file, cfg.artifact("corpus.ndjson")}, outputs,
                  cfg.resolve(cfg.output_dir));
  log << "[cluster] " << qc.clusters.size() << " clusters, " << qc.noise.size()
      << " noise points\n";
}

void stage_salience(const PipelineConfig& cfg, Manifest& manifest, bool force,
                    std::ostream& log) {
  const std::string clusters_file = require_artifact(cfg, "clusters.csv");
  json params;
  params["variant"] = to_string(cfg.salience.cfg.variant);
  params["g1"] = to_string(cfg.salience.cfg.g1);
  params["g2"] = to_string(cfg.salience.cfg.g2);
  params["channels"] = cfg.salience.channels;
  params["topic_focus"] = cfg.salience.topic_focus;
  const std::string key = make_key(hash_params(params),
                                   {clusters_file, cfg.artifact("corpus.ndjson")});
  if (!force && manifest.fresh("salience", key, cfg.resolve(cfg.output_dir))) {
    log << "[salience] cache hit\n";
    return;
  }
  const Corpus corpus = load_corpus_artifact(cfg);
  const auto clusters = load_clusters(cfg, corpus);
  const auto universe = outlet_universe(corpus);

  // Network prior: all channels; in case-study mode the focus topic is held
  // out of the network and supplies the outcomes instead.
  std::vector<QuoteCluster> network_clusters =
      cfg.salience.topic_focus.empty()
          ? clusters
          : filter_members_by_topic(clusters, cfg.salience.topic_focus, false);
  std::vector<QuoteCluster> outcome_clusters =
      cfg.salience.topic_focus.empty()
          ? clusters
          : filter_members_by_topic(clusters, cfg.salience.topic_focus, true);

  std::vector<SalienceMatrix> all;
  SalienceMatrix network =
      build_salience(network_clusters, universe, cfg.salience.cfg, std::nullopt);
  network.channel = "network";
  all.push_back(std::move(network));
  for (const auto& ch : cfg.salience.channels) {
    SalienceMatrix m =
        build_salience(outcome_clusters, universe, cfg.salience.cfg, channel_filter(ch));
    m.channel = ch;
    all.push_back(std::move(m));
  }
  std::vector<const SalienceMatrix*> ptrs;
  for (const auto& m : all) ptrs.push_back(&m);
  write_text_file(cfg.artifact("salience.csv"), salience_to_csv(ptrs));
  manifest.record("salience", key, params,
                  {clusters_file, cfg.artifact("corpus.ndjson")}, {"salience.csv"},
                  cfg.resolve(cfg.output_dir));
  log << "[salience] " << universe.size() << " outlets, " << all.size()
      << " matrices\n";
}

std::vector<SalienceMatrix> load_salience(const PipelineConfig& cfg,
                                          const std::vector<std::string>& universe) {
  const std::string path = require_artifact(cfg, "salience.csv");
  auto matrices = salience_from_csv(read_text_file(path));
  // Re-align every matrix to the full outlet universe.
  std::vector<SalienceMatrix> out;
  for (auto& m : matrices) {
    SalienceMatrix full;
    full.channel = m.channel;
    full.outlets = universe;
    full.kappa = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(universe.size()),
                                       static_cast<Eigen::Index>(universe.size()));
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < universe.size(); ++i) {
      index[universe[i]] = static_cast<int>(i);
    }
    for (Eigen::Index i = 0; i < m.kappa.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.kappa.cols(); ++j) {
        if (m.kappa(i, j) != 0.0) {
          const auto a = index.find(m.outlets[i]);
          const auto b = index.find(m.outlets[j]);
          if (a == index.end() || b == index.end()) {
            throw Error("salience.csv: outlet not in corpus: " +
                        (a == index.end() ? m.outlets[i] : m.outlets[j]));
          }
          full.kappa(a->second, b->second) = m.kappa(i, j);
        }
      }
    }
    out.push_back(std::move(full));
  }
  return out;
}

void stage_network(const PipelineConfig& cfg, Manifest& manifest, bool force,
                   std::ostream& log) {
  const std::string sal_file = require_artifact(cfg, "salience.csv");
  json params;
  params["communities"] = cfg.network.communities;
  params["restarts"] = cfg.network.restarts;
  params["seed"] = cfg.network.seed;
  const std::string key =
      make_key(hash_params(params), {sal_file, cfg.artifact("corpus.ndjson")});
  if (!force && manifest.fresh("network", key, cfg.resolve(cfg.output_dir))) {
    log << "[network] cache hit\n";
    return;
  }
  const Corpus corpus = load_corpus_artifact(cfg);
  const auto universe = outlet_universe(corpus);
  auto matrices = load_salience(cfg, universe);
  const SalienceMatrix network_kappa = pick_channel(matrices, "network");
  const InfluenceNetwork net = build_network(network_kappa);
  int c = cfg.network.communities;
  if (c > static_cast<int>(universe.size())) {
    log << "[network] warning: communities=" << c << " clamped to " << universe.size()
        << "\n";
    c = static_cast<int>(universe.size());
  }
  const NodeCovariates cov =
      detect_communities(net, c, cfg.network.seed, cfg.network.restarts);
  write_text_file(cfg.artifact("covariates.csv"), covariates_to_csv(cov));
  write_text_file(cfg.artifact("network.dot"), export_graph(net));
  manifest.record("network", key, params,
                  {sal_file, cfg.artifact("corpus.ndjson")},
                  {"covariates.csv", "network.dot"}, cfg.resolve(cfg.output_dir));
  log << "[network] " << universe.size() << " nodes, " << c << " communities\n";
}

void stage_fit(const PipelineConfig& cfg, Manifest& manifest, bool force,
               std::ostream& log) {
  const std::string sal_file = require_artifact(cfg, "salience.csv");
  const std::string cov_file = require_artifact(cfg, "covariates.csv");
  json params;
  params["n_hops"] = cfg.causal.n_hops;
  params["chains"] = cfg.causal.chains;
  params["iterations"] = cfg.causal.iterations;
  params["burn_fraction"] = cfg.causal.burn_fraction;
  params["thin"] = cfg.causal.thin;
  params["seed"] = cfg.causal.seed;
  params["sample_network"] = cfg.causal.sample_network;
  params["channels"] = cfg.salience.channels;
  params["outcome_scale"] = 10;  // one impact unit = 0.1 saliency-weighted quote
  const std::string key = make_key(hash_params(params), {sal_file, cov_file});
  if (!force && manifest.fresh("fit", key, cfg.resolve(cfg.output_dir))) {
    log << "[fit] cache hit\n";
    return;
  }
  const Corpus corpus = load_corpus_artifact(cfg);
  const auto universe = outlet_universe(corpus);
  auto matrices = load_salience(cfg, universe);
  const SalienceMatrix network_kappa = pick_channel(matrices, "network");
  const NodeCovariates cov = load_covariates(cfg, universe);
  const Eigen::MatrixXd design = cov.design();

  std::vector<std::string> outputs;
  auto matrices_again = load_salience(cfg, universe);
  for (std::size_t ci = 0; ci < cfg.salience.channels.size(); ++ci) {
    const std::string& ch = cfg.salience.channels[ci];
    const SalienceMatrix kappa_out = pick_channel(matrices_again, ch);
    const Eigen::MatrixXi y = outcome_matrix(kappa_out);
    McmcConfig mcfg = cfg.causal;
    mcfg.seed = cfg.causal.seed + ci;  // one stream per channel
    const FitResult result = fit(y, network_kappa.kappa, design, mcfg);
    for (const auto& w : result.warnings) log << "[fit:" << ch << "] " << w << "\n";
    write_text_file(cfg.artifact("posterior_" + ch + ".csv"), posterior_to_csv(result));
    write_text_file(cfg.artifact("diagnostics_" + ch + ".csv"),
                    diagnostics_to_csv(result));
    outputs.push_back("posterior_" + ch + ".csv");
    outputs.push_back("diagnostics_" + ch + ".csv");
    log << "[fit:" << ch << "] " << result.merged().size() << " draws, converged="
        << (result.converged() ? "yes" : "no") << "\n";
  }
  manifest.record("fit", key, params, {sal_file, cov_file}, outputs,
                  cfg.resolve(cfg.output_dir));
}

void stage_impact(const PipelineConfig& cfg, Manifest& manifest, bool force,
                  std::ostream& log) {
  const std::string sal_file = require_artifact(cfg, "salience.csv");
  const std::string cov_file = require_artifact(cfg, "covariates.csv");
  std::vector<std::string> inputs{sal_file, cov_file};
  for (const auto& ch : cfg.salience.channels) {
    inputs.push_back(require_artifact(cfg, "posterior_" + ch + ".csv"));
  }
  json params;
  params["seed"] = cfg.causal.seed;
  params["channels"] = cfg.salience.channels;
  const std::string key = make_key(hash_params(params), inputs);
  if (!force && manifest.fresh("impact", key, cfg.resolve(cfg.output_dir))) {
    log << "[impact] cache hit\n";
    return;
  }
  const Corpus corpus = load_corpus_artifact(cfg);
  const auto universe = outlet_universe(corpus);
  const NodeCovariates cov = load_covariates(cfg, universe);
  const Eigen::MatrixXd design = cov.design();
  const int n = static_cast<int>(universe.size());

  std::string csv;
  for (std::size_t ci = 0; ci < cfg.salience.channels.size(); ++ci) {
    const std::string& ch = cfg.salience.channels[ci];
    auto matrices = load_salience(cfg, universe);
    const SalienceMatrix kappa_out = pick_channel(matrices, ch);
    const Eigen::MatrixXi y = outcome_matrix(kappa_out);

    FitResult shell;
    shell.config = cfg.causal;
    shell.n_outlets = n;
    shell.x = standardize_columns(design);
    shell.draws = posterior_from_csv(
        read_text_file(cfg.artifact("posterior_" + ch + ".csv")), n,
        static_cast<int>(design.cols()), cfg.causal.n_hops);

    std::vector<ImpactRow> rows;
    for (int source = 0; source < n; ++source) {
      const auto part = estimate_impact(shell, y, kappa_out.kappa, source,
                                        cfg.causal.seed ^ (ci * 1000003 + source));
      rows.insert(rows.end(), part.begin(), part.end());
    }
    std::string chunk = impacts_to_csv(rows, universe, ch);
    if (!csv.empty()) chunk.erase(0, chunk.find('\n') + 1);  // drop repeated header
    csv += chunk;
    long out_of_range = 0;
    for (const auto& r : rows) out_of_range += r.out_of_range ? 1 : 0;
    log << "[impact:" << ch << "] " << rows.size() << " pairs, " << out_of_range
        << " normalized value(s) outside [0,1] beyond the interval\n";
  }
  write_text_file(cfg.artifact("impact.csv"), csv);
  manifest.record("impact", key, params, inputs, {"impact.csv"},
                  cfg.resolve(cfg.output_dir));
}

void stage_report(const PipelineConfig& cfg, Manifest& manifest, bool force,
                  std::ostream& log) {
  const std::string impact_file = require_artifact(cfg, "impact.csv");
  json params;
  params["source_key"] = cfg.report.source_key;
  params["target_keys"] = cfg.report.target_keys;
  params["top_quotes"] = cfg.report.top_quotes;
  const std::string key = make_key(
      hash_params(params),
      {impact_file, cfg.artifact("salience.csv"), cfg.artifact("corpus.ndjson")});
  if (!force && manifest.fresh("report", key, cfg.resolve(cfg.output_dir))) {
    log << "[report] cache hit\n";
    return;
  }
  const Corpus corpus = load_corpus_artifact(cfg);
  const auto universe = outlet_universe(corpus);
  const int n = static_cast<int>(universe.size());
  const ParsedImpacts impacts = load_impacts(cfg, universe);

  auto need = [&](const std::string& ch) -> const std::vector<ImpactRow>& {
    const auto it = impacts.by_channel.find(ch);
    if (it == impacts.by_channel.end()) {
      throw Error("report: channel '" + ch + "' not estimated");
    }
    return it->second;
  };
  const auto& rows_a = need("pro_a");
  const auto& rows_b = need("pro_b");
  const ImpactTables tables = slant_and_totals(rows_a, rows_b, universe);

  std::vector<std::string> outputs;
  auto emit = [&](const std::string& name, const std::string& content) {
    write_text_file(cfg.artifact(name), content);
    outputs.push_back(name);
  };

  {
    std::ostringstream out;
    out << "outlet,total_impact,impact_slant\n";
    for (int i = 0; i < n; ++i) {
      out << csv_escape(universe[i]) << ',' << fmt_double(tables.outlet_total[i]) << ','
          << fmt_double(tables.outlet_slant[i]) << '\n';
    }
    emit("report_outlet_summary.csv", out.str());
  }
  auto emit_matrix = [&](const std::string& name, const Eigen::MatrixXd& m,
                         const std::string& column) {
    std::ostringstream out;
    out << "source,target," << column << '\n';
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        out << csv_escape(universe[i]) << ',' << csv_escape(universe[j]) << ','
            << fmt_double(m(i, j)) << '\n';
      }
    }
    emit(name, out.str());
  };
  emit_matrix("report_pairwise_slant.csv", tables.slant, "slant");
  emit_matrix("report_pairwise_total.csv", tables.total, "total");
  emit_matrix("report_differential.csv", tables.differential, "differential");

  {
    // Quote volume vs impact, plus the two summary correlations.
    std::map<std::string, long> quotes, slant_count_a, slant_count_b;
    for (const auto& r : corpus.records) {
      quotes[r.outlet_id] += 1;
      if (r.sentiment == Sentiment::pro_a) slant_count_a[r.outlet_id] += 1;
      if (r.sentiment == Sentiment::pro_b) slant_count_b[r.outlet_id] += 1;
    }
    std::ostringstream out;
    out << "outlet,total_quotes,quote_slant,total_impact,impact_slant\n";
    std::vector<double> vq, vt, vqs, vis;
    for (int i = 0; i < n; ++i) {
      const double q = static_cast<double>(quotes[universe[i]]);
      const double qs =
          static_cast<double>(slant_count_a[universe[i]] - slant_count_b[universe[i]]);
      out << csv_escape(universe[i]) << ',' << q << ',' << qs << ','
          << fmt_double(tables.outlet_total[i]) << ','
          << fmt_double(tables.outlet_slant[i]) << '\n';
      vq.push_back(q);
      vt.push_back(tables.outlet_total[i]);
      vqs.push_back(qs);
      vis.push_back(tables.outlet_slant[i]);
    }
    emit("report_quotes_vs_impact.csv", out.str());
    std::ostringstream corr;
    corr << "pair,pearson_r\n";
    corr << "total_quotes_vs_total_impact," << fmt_double(pearson(vq, vt)) << '\n';
    corr << "quote_slant_vs_impact_slant," << fmt_double(pearson(vqs, vis)) << '\n';
    emit("report_quotes_impact_correlation.csv", corr.str());
  }

  // Combined-channel normalized impact for grouping: (zeta_a + zeta_b) over
  // (10 * (kappa_a + kappa_b)).
  std::vector<ImpactRow> combined;
  {
    std::map<std::pair<int, int>, ImpactRow> acc;
    for (const auto& r : rows_a) acc[{r.source, r.target}] = r;
    for (const auto& r : rows_b) {
      auto& c = acc[{r.source, r.target}];
      c.source = r.source;
      c.target = r.target;
      c.mean += r.mean;
      c.kappa += r.kappa;
    }
    for (auto& [_, r] : acc) {
      r.has_normalized = r.kappa > 0.0;
      if (r.has_normalized) r.normalized_mean = r.mean / (10.0 * r.kappa);
      combined.push_back(r);
    }
  }
  for (const auto& target_key : cfg.report.target_keys) {
    const auto groups =
        group_report(combined, corpus.outlets, cfg.report.source_key, target_key);
    emit("report_group_" + target_key + ".csv", groups_to_csv(groups));
  }

  {
    // Top followed quote clusters per source outlet, ranked by their
    // contribution to the outlet's normalized impact.
    const auto clusters = load_clusters(cfg, corpus);
    std::map<std::pair<int, int>, double> norm;
    for (const auto& r : combined) {
      if (r.has_normalized) norm[{r.source, r.target}] = r.normalized_mean;
    }
    std::map<std::string, int> index;
    for (int i = 0; i < n; ++i) index[universe[i]] = i;
    std::map<std::string, const QuoteRecord*> by_id;
    for (const auto& r : corpus.records) by_id[r.quote_id] = &r;

    std::ostringstream out;
    out << "source,rank,cluster_id,contribution,sample_text\n";
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<double, int>> ranked;
      for (const auto& qc : clusters) {
        double contribution = 0.0;
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const auto it = norm.find({i, j});
          if (it == norm.end()) continue;
          contribution +=
              per_quote_salience(qc, universe[i], universe[j], cfg.salience.cfg) *
              it->second;
        }
        if (contribution > 0.0) ranked.emplace_back(contribution, qc.cluster_id);
      }
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::size_t r = 0;
           r < std::min<std::size_t>(ranked.size(), cfg.report.top_quotes); ++r) {
        const auto* qc = &clusters[0];
        for (const auto& c : clusters) {
          if (c.cluster_id == ranked[r].second) qc = &c;
        }
        out << csv_escape(universe[i]) << ',' << (r + 1) << ',' << ranked[r].second
            << ',' << fmt_double(ranked[r].first) << ','
            << csv_escape(by_id.at(qc->members.front().quote_id)->text) << '\n';
      }
    }
    emit("report_top_quotes.csv", out.str());
  }

  {
    auto matrices = load_salience(cfg, universe);
    const SalienceMatrix network_kappa = pick_channel(matrices, "network");
    const InfluenceNetwork net = build_network(network_kappa);
    std::map<std::pair<int, int>, EdgeAnnotation> ann;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i != j && tables.total(i, j) != 0.0) {
          ann[{i, j}] = {tables.total(i, j), tables.slant(i, j)};
        }
      }
    }
    emit("impact_network.dot", export_graph(net, &ann));
  }

  manifest.record("report", key, params,
                  {impact_file, cfg.artifact("salience.csv"),
                   cfg.artifact("corpus.ndjson")},
                  outputs, cfg.resolve(cfg.output_dir));
  log << "[report] " << outputs.size() << " artifacts\n";
}

}  // namespace

void run_stage(Stage stage, const PipelineConfig& cfg, bool force, std::ostream& log) {
  fs::create_directories(cfg.resolve(cfg.output_dir));
  Manifest manifest(cfg.resolve(cfg.output_dir));
  switch (stage) {
    case Stage::simulate: stage_simulate(cfg, manifest, force, log); return;
    case Stage::ingest: stage_ingest(cfg, manifest, force, log); return;
    case Stage::embed: stage_embed(cfg, manifest, force, log); return;
    case Stage::reduce: stage_reduce(cfg, manifest, force, log); return;
    case Stage::cluster: stage_cluster(cfg, manifest, force, log); return;
    case Stage::salience: stage_salience(cfg, manifest, force, log); return;
    case Stage::network: stage_network(cfg, manifest, force, log); return;
    case Stage::fit: stage_fit(cfg, manifest, force, log); return;
    case Stage::impact: stage_impact(cfg, manifest, force, log); return;
    case Stage::report: stage_report(cfg, manifest, force, log); return;
    case Stage::all: {
      if (cfg.simulate) stage_simulate(cfg, manifest, force, log);
      stage_ingest(cfg, manifest, force, log);
      stage_embed(cfg, manifest, force, log);
      stage_reduce(cfg, manifest, force, log);
      stage_cluster(cfg, manifest, force, log);
      stage_salience(cfg, manifest, force, log);
      stage_network(cfg, manifest, force, log);
      stage_fit(cfg, manifest, force, log);
      stage_impact(cfg, manifest, force, log);
      stage_report(cfg, manifest, force, log);
      return;
    }
  }
}

}  // namespace quoteflow
