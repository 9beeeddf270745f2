#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "quoteflow/pipeline.hpp"
#include "quoteflow/util.hpp"

// quoteflow <stage> --config <path> [--force]
// exit 0 = success, 1 = user error, 2 = internal error
int main(int argc, char** argv) {
  CLI::App app{"quoteflow: quote matching, influence networks, causal impact"};
  app.require_subcommand(1);

  const std::vector<std::string> stages = {"ingest",  "embed",  "reduce", "cluster",
                                           "salience", "network", "fit",   "impact",
                                           "report",  "simulate", "all"};
  std::string config_path;
  bool force = false;
  for (const auto& name : stages) {
    auto* sub = app.add_subcommand(name, "run the " + name + " stage");
    sub->add_option("--config", config_path, "pipeline config JSON")->required();
    sub->add_flag("--force", force, "ignore cached stage results");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const auto* sub = app.get_subcommands().front();
    const quoteflow::PipelineConfig cfg = quoteflow::load_config(config_path);
    quoteflow::run_stage(quoteflow::parse_stage(sub->get_name()), cfg, force, std::cerr);
    return 0;
  } catch (const quoteflow::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
