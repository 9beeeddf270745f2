#pragma once

#include <optional>
#include <string>
#include <vector>

#include "quoteflow/causal.hpp"
#include "quoteflow/cluster.hpp"
#include "quoteflow/corpus.hpp"
#include "quoteflow/salience.hpp"
#include "quoteflow/simgen.hpp"

namespace quoteflow {

enum class Stage {
  simulate,
  ingest,
  embed,
  reduce,
  cluster,
  salience,
  network,
  fit,
  impact,
  report,
  all,
};

Stage parse_stage(const std::string& name);
std::string to_string(Stage s);

struct PipelineConfig {
  std::string config_dir;  // paths resolve relative to the config file

  std::string corpus_path, outlets_path;
  std::string cache_dir = "cache";
  std::string output_dir = "out";

  IngestOptions ingest;
  FilterPredicate filter;

  struct Embed {
    std::string provider = "builtin";  // builtin | command
    int dim = 256;
    std::string command;  // for provider=command
    std::string provider_tag;
    int k = 70;
  } embed;

  ClusterParams cluster;
  std::string truth_file;  // optional quote_id,family CSV for PR evaluation
  std::vector<ClusterParams> sweep_grid;

  struct Salience {
    SalienceConfig cfg;
    std::vector<std::string> channels{"pro_a", "pro_b"};
    std::string topic_focus;  // case-study mode: outcomes from this topic,
                              // network from everything else
  } salience;

  struct Network {
    int communities = 10;
    int restarts = 8;
    std::uint64_t seed = 42;
  } network;

  McmcConfig causal;

  struct Report {
    std::string source_key = "orientation";
    std::vector<std::string> target_keys{"orientation", "country"};
    int top_quotes = 10;
  } report;

  std::optional<SimConfig> simulate;

  std::string resolve(const std::string& path) const;
  std::string artifact(const std::string& name) const;  // under output_dir
};

// Parses and validates; every schema violation is listed in one Error.
PipelineConfig load_config(const std::string& path);

// Runs one stage (or `all`). Idempotent: a stage whose inputs and parameters
// hash to the manifest entry is skipped unless force is set. Artifacts land
// in output_dir; logs go to the `log` stream (stderr in the CLI).
void run_stage(Stage stage, const PipelineConfig& cfg, bool force, std::ostream& log);

}  // namespace quoteflow
