#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "../support/test_support.hpp"
#include "vocalbp/audio_io.hpp"
#include "vocalbp/dataset.hpp"
#include "vocalbp/model.hpp"
#include "vocalbp/pipeline.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const json kSmall = json::parse(R"({
  "synth": {"n_female": 12, "n_male": 12},
  "relieff": {"folds": 3, "k_grid": [3, 5]},
  "encoder": {"hidden_dim": 16, "n_layers": 1, "n_heads": 2, "ff_dim": 32, "max_len": 256},
  "tokenizer": {"max_len": 256},
  "training": {"epochs": 3, "batch_size": 8}
})");

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run bp(const std::string& args, const fs::path& scratch, const std::string& env = "") {
  const auto out = scratch / "stdout.txt";
  const auto err = scratch / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + quote(VOCALBP_BP_EXE) + " " + args + " >" +
                          quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testing::read_text(out);
  r.err = testing::read_text(err);
  return r;
}

fs::path write_config(const testing::TempDir& dir, const json& j, const std::string& name = "config.json") {
  const auto p = dir / name;
  testing::write_text(p, j.dump(2));
  return p;
}

std::string args(const std::string& stage, const fs::path& config, const fs::path& workdir) {
  return stage + " --config " + quote(config.string()) + " --workdir " + quote(workdir.string());
}

/// Runs synth through eval and returns the exit code of the first failing stage, or 0.
int run_all(const fs::path& config, const fs::path& workdir, const fs::path& scratch) {
  for (const char* stage : {"synth", "extract", "select", "train", "eval"}) {
    const auto r = bp(args(stage, config, workdir), scratch);
    if (r.code != 0) {
      MESSAGE(stage << " failed: " << r.err);
      return r.code;
    }
  }
  return 0;
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("synth default cohort has 95 rows and reruns are byte-identical") {
  testing::TempDir dir("pipe_synth");
  const auto cfg = write_config(dir, json::object());
  REQUIRE(bp(args("synth", cfg, dir / "a") + " --seed 5", dir.path()).code == 0);
  REQUIRE(bp(args("synth", cfg, dir / "b") + " --seed 5", dir.path()).code == 0);
  const auto manifest = testing::read_text(dir / "a/manifest.csv");
  CHECK(line_count(manifest) == 96);
  CHECK(manifest == testing::read_text(dir / "b/manifest.csv"));
  CHECK(testing::read_text(dir / "a/wav/F001.wav") == testing::read_text(dir / "b/wav/F001.wav"));
  CHECK(testing::read_text(dir / "a/wav/M050.wav") == testing::read_text(dir / "b/wav/M050.wav"));
  REQUIRE(bp(args("synth", cfg, dir / "c") + " --seed 6", dir.path()).code == 0);
  CHECK(manifest != testing::read_text(dir / "c/manifest.csv"));
}

/// Two full runs with one config, shared by every check below.
struct Trained {
  testing::TempDir dir{"pipe_full"};
  fs::path cfg;
  fs::path a;
  fs::path b;
  int code = -1;
  Trained() : cfg(write_config(dir, kSmall)), a(dir / "a"), b(dir / "b") {
    code = run_all(cfg, a, dir.path());
    if (code == 0) code = run_all(cfg, b, dir.path());
  }
};

const Trained& trained() {
  static const Trained t;
  return t;
}

TEST_CASE("full pipeline is deterministic across workdirs") {
  const auto& t = trained();
  REQUIRE(t.code == 0);
  const auto& a = t.a;
  const auto& b = t.b;
  for (const char* f : {"features.csv", "weights.csv", "selection.json", "model.bin", "loss_curve.csv", "metrics.json",
                        "confusion.json", "predictions.csv", "split.json", "sequences.csv", "vocab.json",
                        "preprocess.json"}) {
    CAPTURE(f);
    CHECK(testing::read_text(a / f) == testing::read_text(b / f));
  }
  auto meta_a = json::parse(testing::read_text(a / "features.json"));
  auto meta_b = json::parse(testing::read_text(b / "features.json"));
  meta_a.erase("manifest");
  meta_b.erase("manifest");
  CHECK(meta_a == meta_b);
  CHECK(line_count(testing::read_text(a / "features.csv")) == 25);
  CHECK(line_count(testing::read_text(a / "loss_curve.csv")) == 4);

  const auto metrics = json::parse(testing::read_text(a / "metrics.json"));
  CHECK(metrics.at("eval_split") == "test");
  const auto params = vbp::load_params(a / "model.bin");
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(vbp::params_checksum(params)));
  CHECK(metrics.at("model_checksum").get<std::string>() == hex);
}

TEST_CASE("stages on a trained workdir") {
  const auto& t = trained();
  REQUIRE(t.code == 0);
  testing::TempDir dir("pipe_stages");
  const auto& cfg = t.cfg;
  const auto& a = t.a;

  SUBCASE("rerunning extract leaves features.csv unchanged") {
    const auto before = testing::read_text(a / "features.csv");
    REQUIRE(bp(args("extract", cfg, a), dir.path()).code == 0);
    CHECK(testing::read_text(a / "features.csv") == before);
  }

  SUBCASE("report writes a unit diagonal") {
    REQUIRE(bp(args("report", cfg, a), dir.path()).code == 0);
    std::istringstream in(testing::read_text(a / "correlation.csv"));
    std::string line;
    std::getline(in, line);
    std::size_t row = 0;
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      REQUIRE(cells.size() > row + 1);
      CHECK(std::stod(cells[row + 1]) == doctest::Approx(1.0).epsilon(1e-12));
      ++row;
    }
    CHECK(row >= 3);
    CHECK(fs::exists(a / "correlation.svg"));
    CHECK(fs::exists(a / "loss_curve.svg"));
  }

  SUBCASE("predict from a feature file prints consistent JSON") {
    const auto r = bp(args("predict", cfg, a) + " --features " + quote((a / "features.csv").string()), dir.path());
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    const auto& preds = j.at("predictions");
    REQUIRE(preds.size() == 24);
    CHECK(preds[0].at("id") == "F001");
    for (const auto& p : preds) {
      const double sbp = p.at("sbp"), dbp = p.at("dbp");
      CHECK(std::isfinite(sbp));
      CHECK(std::isfinite(dbp));
      CHECK((p.at("class") == "hypertensive") == vbp::exceeds_thresholds(sbp, dbp));
    }
  }

  SUBCASE("predict from a wav") {
    const auto r = bp(args("predict", cfg, a) + " --wav " + quote((a / "wav/M003.wav").string()), dir.path());
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    CHECK(j.at("predictions").size() == 1);
    CHECK(j.at("predictions")[0].at("id") == "M003.wav");
  }

  SUBCASE("silent wav is degenerate input") {
    vbp::AudioClip silent;
    silent.sample_rate = 48000;
    silent.samples.assign(48000 * 2, 0.0);
    vbp::write_wav(dir / "silent.wav", silent);
    const auto r = bp(args("predict", cfg, a) + " --wav " + quote((dir / "silent.wav").string()), dir.path());
    CHECK(r.code == vbp::kExitDegenerate);
    CHECK(r.err.find("no voiced audio") != std::string::npos);
  }

  SUBCASE("feature file missing a selected column is a schema mismatch") {
    testing::write_text(dir / "narrow.csv", "id,nothing\nX,1.0\n");
    const auto r = bp(args("predict", cfg, a) + " --features " + quote((dir / "narrow.csv").string()), dir.path());
    CHECK(r.code == vbp::kExitConfig);
  }

  SUBCASE("predict needs exactly one input") {
    CHECK(bp(args("predict", cfg, a), dir.path()).code == vbp::kExitConfig);
  }
}

TEST_CASE("corrupt wav drops its row with exit 1") {
  testing::TempDir dir("pipe_corrupt");
  const auto cfg = write_config(dir, kSmall);
  const auto w = dir / "w";
  REQUIRE(bp(args("synth", cfg, w), dir.path()).code == 0);
  testing::write_text(w / "wav/F002.wav", "RIFF garbage");
  const auto r = bp(args("extract", cfg, w), dir.path());
  CHECK(r.code == vbp::kExitPartial);
  CHECK(r.err.find("F002") != std::string::npos);
  const auto features = testing::read_text(w / "features.csv");
  CHECK(line_count(features) == 24);
  CHECK(features.find("F002,") == std::string::npos);
  const auto meta = json::parse(testing::read_text(w / "features.json"));
  REQUIRE(meta.at("failures").size() == 1);
  CHECK(meta.at("failures")[0].at("id") == "F002");
}

TEST_CASE("exit codes for insufficient data, divergence and I/O") {
  testing::TempDir dir("pipe_codes");
  SUBCASE("too few examples per class for the folds") {
    auto j = kSmall;
    j["synth"] = {{"n_female", 3}, {"n_male", 3}};
    j["relieff"]["folds"] = 5;
    const auto cfg = write_config(dir, j);
    const auto w = dir / "w";
    REQUIRE(bp(args("synth", cfg, w), dir.path()).code == 0);
    REQUIRE(bp(args("extract", cfg, w), dir.path()).code == 0);
    CHECK(bp(args("select", cfg, w), dir.path()).code == vbp::kExitInsufficient);
  }
  SUBCASE("divergent learning rate") {
    auto j = kSmall;
    j["training"]["learning_rate"] = 10.0;
    j["training"]["epochs"] = 20;
    const auto cfg = write_config(dir, j);
    const auto w = dir / "w";
    for (const char* s : {"synth", "extract", "select"}) REQUIRE(bp(args(s, cfg, w), dir.path()).code == 0);
    const auto r = bp(args("train", cfg, w), dir.path());
    CHECK(r.code == vbp::kExitDiverged);
    CHECK_FALSE(fs::exists(w / "model.bin"));
  }
  SUBCASE("unwritable workdir") {
    const auto cfg = write_config(dir, kSmall);
    testing::write_text(dir / "blocker", "x");
    const auto r = bp(args("synth", cfg, dir / "blocker" / "w"), dir.path());
    CHECK(r.code == vbp::kExitIo);
    CHECK_FALSE(r.err.empty());
  }
  SUBCASE("missing artifacts") {
    const auto cfg = write_config(dir, kSmall);
    CHECK(bp(args("train", cfg, dir / "empty"), dir.path()).code == vbp::kExitIo);
    CHECK(bp(args("report", cfg, dir / "empty"), dir.path()).code == vbp::kExitIo);
  }
}

TEST_CASE("configuration errors and workdir precedence") {
  testing::TempDir dir("pipe_config");
  SUBCASE("unknown key") {
    const auto cfg = write_config(dir, json{{"training", {{"epoch", 3}}}});
    const auto r = bp(args("synth", cfg, dir / "w"), dir.path());
    CHECK(r.code == vbp::kExitConfig);
    CHECK(r.err.find("training.epoch") != std::string::npos);
  }
  SUBCASE("wrong type and invalid value") {
    CHECK(bp(args("synth", write_config(dir, json{{"seed", "x"}}), dir / "w"), dir.path()).code == vbp::kExitConfig);
    CHECK(bp(args("synth", write_config(dir, json{{"relieff", {{"folds", 1}}}}), dir / "w"), dir.path()).code ==
          vbp::kExitConfig);
  }
  SUBCASE("unparseable file and bad command line") {
    testing::write_text(dir / "broken.json", "{ not json");
    CHECK(bp(args("synth", dir / "broken.json", dir / "w"), dir.path()).code == vbp::kExitConfig);
    CHECK(bp("synth --bogus", dir.path()).code == vbp::kExitConfig);
    CHECK(bp("frobnicate", dir.path()).code == vbp::kExitConfig);
  }
  SUBCASE("BP_WORKDIR fallback") {
    auto j = kSmall;
    j["synth"] = {{"n_female", 2}, {"n_male", 2}};
    const auto cfg = write_config(dir, j);
    const auto env_dir = dir / "from_env";
    const auto r = bp("synth --config " + quote(cfg.string()), dir.path(), "BP_WORKDIR=" + quote(env_dir.string()));
    CHECK(r.code == 0);
    CHECK(fs::exists(env_dir / "manifest.csv"));
  }
  SUBCASE("config workdir beats BP_WORKDIR, flag beats both") {
    auto j = kSmall;
    j["synth"] = {{"n_female", 2}, {"n_male", 2}};
    j["workdir"] = (dir / "from_config").string();
    const auto cfg = write_config(dir, j);
    REQUIRE(bp("synth --config " + quote(cfg.string()), dir.path(), "BP_WORKDIR=" + quote((dir / "env").string())).code == 0);
    CHECK(fs::exists(dir / "from_config/manifest.csv"));
    CHECK_FALSE(fs::exists(dir / "env"));
    REQUIRE(bp(args("synth", cfg, dir / "from_flag"), dir.path()).code == 0);
    CHECK(fs::exists(dir / "from_flag/manifest.csv"));
  }
  SUBCASE("no workdir at all") {
    const auto cfg = write_config(dir, kSmall);
    CHECK(bp("synth --config " + quote(cfg.string()), dir.path(), "BP_WORKDIR=").code == vbp::kExitConfig);
  }
}

TEST_CASE("config JSON round trip with defaults") {
  const auto c = vbp::config_from_json(json::object());
  const auto j = vbp::to_json(c);
  const auto back = vbp::config_from_json(j);
  CHECK(vbp::to_json(back) == j);
  CHECK(c.synth.n_female + c.synth.n_male == 95);
  CHECK(vbp::stage_seed(c, vbp::Stage::Train) != vbp::stage_seed(c, vbp::Stage::Init));
}
