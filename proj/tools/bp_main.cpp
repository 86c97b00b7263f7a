#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vocalbp/error.hpp"
#include "vocalbp/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string workdir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "pipeline config (JSON); omitted keys take defaults");
  cmd->add_option("--seed", c.seed, "global seed, overrides the config");
  cmd->add_option("--workdir", c.workdir, "artifact directory; falls back to the config, then BP_WORKDIR");
}

vbp::PipelineConfig resolve(const Common& c) {
  auto cfg = c.config.empty() ? vbp::config_from_json(nlohmann::json::object()) : vbp::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.workdir.empty()) {
    cfg.workdir = c.workdir;
  } else if (cfg.workdir.empty()) {
    if (const char* env = std::getenv("BP_WORKDIR"); env && *env) cfg.workdir = env;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bp: blood pressure estimation from sustained-vowel recordings"};
  app.require_subcommand(1);
  Common common;
  std::string wav, features;

  const char* stages[] = {"synth", "extract", "select", "train", "eval", "predict", "report"};
  const char* help[] = {"synthesize a cohort manifest and WAV fixtures",
                        "voiced segments -> per-recording feature table",
                        "cross-validated ReliefF feature selection",
                        "tokenize selected features and train the encoder",
                        "score the held-out split (metrics.json, confusion.json)",
                        "predict SBP/DBP for a WAV file or a feature table",
                        "correlation matrix and SVG plots"};
  for (int i = 0; i < 7; ++i) {
    auto* cmd = app.add_subcommand(stages[i], help[i]);
    add_common(cmd, common);
    if (std::string(stages[i]) == "predict") {
      cmd->add_option("--wav", wav, "recording to score");
      cmd->add_option("--features", features, "feature CSV (id column + feature columns) to score");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : vbp::kExitConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  vbp::PipelineConfig cfg;
  try {
    cfg = resolve(common);
  } catch (const vbp::Error& e) {
    std::cerr << "bp " << name << ": " << e.what() << "\n";
    return vbp::exit_code_for(e.code());
  }

  if (name == "synth") return vbp::cmd_synth(cfg, std::cerr);
  if (name == "extract") return vbp::cmd_extract(cfg, std::cerr);
  if (name == "select") return vbp::cmd_select(cfg, std::cerr);
  if (name == "train") return vbp::cmd_train(cfg, std::cerr);
  if (name == "eval") return vbp::cmd_eval(cfg, std::cerr);
  if (name == "report") return vbp::cmd_report(cfg, std::cerr);
  vbp::PredictInput in;
  if (!wav.empty()) in.wav = wav;
  if (!features.empty()) in.features_csv = features;
  return vbp::cmd_predict(cfg, in, std::cout, std::cerr);
}
