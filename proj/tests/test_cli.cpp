#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <string>

#include "relapse/config.hpp"
#include "relapse/pipeline.hpp"

// Exit-code contract of the binary: 0 ok, 2 config, 3 stage order, 4 data.

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("relapse_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(RELAPSE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("cli exit codes follow the contract") {
  TempDir tmp;
  const std::string out = " --out " + tmp.path.string();

  SECTION("successful stage returns 0") {
    CHECK(run_cli("synth --n-train 4 --n-val 3 --n-test 3" + out) == 0);
  }
  SECTION("config errors return 2") {
    CHECK(run_cli("synth --alpha 1.5" + out) == 2);
    CHECK(run_cli("synth --config /nonexistent.json" + out) == 2);
    CHECK(run_cli("synth --posenc diagonal" + out) == 2);
    CHECK(run_cli("bogus-subcommand") == 2);
  }
  SECTION("stage-order violations return 3 and name the artifact") {
    CHECK(run_cli("train" + out) == 3);            // no dataset yet
    REQUIRE(run_cli("synth --n-train 4 --n-val 3 --n-test 3" + out) == 0);
    CHECK(run_cli("score --seeds 1" + out) == 3);  // no checkpoints
    CHECK(run_cli("fuse --seeds 1" + out) == 3);   // no day scores
    CHECK(run_cli("eval --seeds 1" + out) == 3);
    CHECK(run_cli("report" + out) == 3);
    CHECK(run_cli("ablate tau --seeds 1" + out) == 3);
  }
  SECTION("malformed data returns 4") {
    REQUIRE(run_cli("synth --n-train 4 --n-val 3 --n-test 3" + out) == 0);
    std::ofstream corrupt(tmp.path / "data" / "slots.csv",
                          std::ios::app | std::ios::binary);
    corrupt << "p1,not-a-number,0,0,0,0,0,0,0,0,0,1\n";
    corrupt.close();
    CHECK(run_cli("train --seeds 1 --epochs 1 --d-model 8 --ffn-dim 8 "
                  "--n-layers 1" +
                  out) == 4);
  }
}

TEST_CASE("RELAPSE_OUT overrides the output root") {
  TempDir tmp;
  relapse::ExperimentConfig cfg;
  cfg.output_dir = "somewhere-else";
  ::setenv("RELAPSE_OUT", tmp.path.c_str(), 1);
  relapse::Paths paths(cfg);
  ::unsetenv("RELAPSE_OUT");
  CHECK(paths.root == tmp.path);
  relapse::Paths plain(cfg);
  CHECK(plain.root == fs::path("somewhere-else"));
}

TEST_CASE("config profiles drive the synthetic cohort") {
  relapse::ExperimentConfig cfg;
  relapse::PatientProfile custom;
  custom.id = "zz1";
  custom.base_hr = 99.0;
  custom.heavy_tailed = true;
  cfg.profiles = {custom};
  cfg.n_patients = 1;
  cfg.n_train = 4;
  cfg.n_val = 6;
  cfg.n_test = 6;
  auto cohort = relapse::build_synthetic_cohort(cfg);
  REQUIRE(cohort.size() == 1);
  CHECK(cohort[0].patient_id == "zz1");
  double hr = 0.0;
  std::int64_t n = 0;
  for (const auto& d : cohort[0].train)
    for (const auto& s : d.slots) {
      hr += s.hr_mean;
      ++n;
    }
  CHECK(hr / n > 90.0);  // the custom base rate shows through

  SECTION("profile list round-trips through the config JSON") {
    auto j = relapse::to_json(cfg);
    auto back = relapse::config_from_json(j);
    REQUIRE(back.profiles.size() == 1);
    CHECK(back.profiles[0].id == "zz1");
    CHECK(back.profiles[0].base_hr == 99.0);
    CHECK(back.profiles[0].heavy_tailed);
    CHECK(relapse::to_json(back) == j);
  }
  SECTION("profile count must match n_patients") {
    cfg.n_patients = 3;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("unknown profile fields are named") {
    auto j = relapse::to_json(cfg);
    j["profiles"][0]["bpm"] = 80;
    try {
      relapse::config_from_json(j);
      FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("bpm") != std::string::npos);
    }
  }
}
