#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "heed/cli.hpp"
#include "heed/core.hpp"
#include "support.hpp"

using heed::cli::dispatch;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

std::string str(const fs::path& p) { return p.string(); }

const std::vector<std::string> kTinyModel = {"--d-model", "16", "--layers", "1", "--heads", "2",
                                             "--ff-dim", "32", "--experts", "1", "--epochs", "1",
                                             "--max-len", "64", "--log-level", "warn"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("cli usage and exit codes") {
  CHECK(dispatch({"--help"}) == 0);
  CHECK(dispatch({"train", "--help"}) == 0);
  CHECK(dispatch({}) == 1);
  CHECK(dispatch({"frobnicate"}) == 1);
  CHECK(dispatch({"validate", "--data"}) == 1);
  CHECK(dispatch({"generate", "--no-such-flag"}) == 1);
}

TEST_CASE("cli generate, validate and config precedence") {
  const fs::path dir = heed::testing::temp_dir("cli_gen");
  const fs::path data = dir / "data";
  REQUIRE(dispatch({"generate", "--pages", "10", "--length-mean", "100", "--out", str(data),
                    "--log-level", "warn"}) == 0);
  CHECK(fs::exists(data / "train.jsonl"));
  const auto manifest = read_json(data / "run_manifest.json");
  CHECK(manifest["subcommand"] == "generate");
  CHECK(manifest["status"] == "ok");
  CHECK(manifest["seed"] == 42);
  CHECK(manifest["outputs"].size() == 4);

  CHECK(dispatch({"validate", "--data", str(data / "train.jsonl"), "--out", str(dir / "v")}) == 0);
  CHECK(fs::exists(dir / "v" / "run_manifest.json"));

  // An invalid record is a runtime failure with a manifest saying so.
  write_file(dir / "bad.jsonl", "{\"page_id\": 1}\n");
  CHECK(dispatch({"validate", "--data", str(dir / "bad.jsonl"), "--out", str(dir / "vb")}) == 2);
  CHECK(read_json(dir / "vb" / "run_manifest.json")["status"] == "failed");

  // flags > file > defaults
  write_file(dir / "gen.json", R"({"seed": 7, "pages": 5, "length_mean": 100, "log_level": "warn"})");
  REQUIRE(dispatch({"generate", "--config", str(dir / "gen.json"), "--out", str(dir / "a")}) == 0);
  auto corpus = read_json(dir / "a" / "manifest.json");
  CHECK(corpus["n_pages"] == 5);
  CHECK(corpus["seed"] == 7);
  REQUIRE(dispatch({"generate", "--config", str(dir / "gen.json"), "--pages", "3", "--out", str(dir / "b")}) == 0);
  corpus = read_json(dir / "b" / "manifest.json");
  CHECK(corpus["n_pages"] == 3);
  CHECK(corpus["seed"] == 7);

  // Sections address one subcommand; unknown keys are usage errors.
  write_file(dir / "sec.json", R"({"generate": {"pages": 4, "length_mean": 100}, "log_level": "warn"})");
  REQUIRE(dispatch({"generate", "--config", str(dir / "sec.json"), "--out", str(dir / "c")}) == 0);
  CHECK(read_json(dir / "c" / "manifest.json")["n_pages"] == 4);
  write_file(dir / "typo.json", R"({"pagez": 4})");
  CHECK(dispatch({"generate", "--config", str(dir / "typo.json"), "--out", str(dir / "d")}) == 1);
  write_file(dir / "broken.json", "{");
  CHECK(dispatch({"generate", "--config", str(dir / "broken.json"), "--out", str(dir / "d")}) == 1);

  // Same config and seed give the same outputs.
  REQUIRE(dispatch({"generate", "--config", str(dir / "gen.json"), "--pages", "3", "--out", str(dir / "b2")}) == 0);
  CHECK(read_json(dir / "b2" / "manifest.json") == read_json(dir / "b" / "manifest.json"));
  CHECK(read_json(dir / "b2" / "run_manifest.json")["config_hash"] ==
        read_json(dir / "b" / "run_manifest.json")["config_hash"]);
}

TEST_CASE("cli train, eval and analysis subcommands") {
  const fs::path dir = heed::testing::temp_dir("cli_train");
  const fs::path data = dir / "data";
  REQUIRE(dispatch({"generate", "--pages", "10", "--length-mean", "80", "--out", str(data),
                    "--log-level", "warn"}) == 0);
  const fs::path run = dir / "run";
  REQUIRE(dispatch(with({"train", "--data", str(data), "--out", str(run)}, kTinyModel)) == 0);
  CHECK(fs::exists(run / "model" / "weights.bin"));
  CHECK(fs::exists(run / "metrics.csv"));
  const auto rm = read_json(run / "run_manifest.json");
  CHECK(rm["config"]["d-model"] == "16");
  CHECK(rm["config"]["lr"] == "0.0003");

  const fs::path report = dir / "eval" / "report.json";
  REQUIRE(dispatch({"eval", "--model", str(run / "model"), "--data", str(data / "test.jsonl"), "--out",
                    str(report), "--log-level", "warn"}) == 0);
  CHECK(read_json(report).contains("micro"));
  CHECK(fs::exists(dir / "eval" / "report.csv"));
  CHECK(fs::exists(dir / "eval" / "report.json.run_manifest.json"));

  REQUIRE(dispatch({"analyze-router", "--model", str(run / "model"), "--data", str(data / "dev.jsonl"),
                    "--out", str(dir / "router"), "--log-level", "warn"}) == 0);
  CHECK(read_json(dir / "router" / "router.json").size() == 3);
  CHECK(fs::exists(dir / "router" / "router_price.csv"));

  REQUIRE(dispatch({"export-reprs", "--model", str(run / "model"), "--data", str(data / "test.jsonl"),
                    "--task", "name", "--out", str(dir / "reprs"), "--log-level", "warn"}) == 0);
  CHECK(fs::exists(dir / "reprs" / "pca.csv"));

  CHECK(dispatch(with({"ablate", "--axis", "colour", "--name", "x", "--data", str(data), "--out",
                       str(dir / "abl")},
                      kTinyModel)) == 1);
  REQUIRE(dispatch(with({"ablate", "--axis", "modality", "--name", "v", "--data", str(data), "--out",
                         str(dir / "abl")},
                        kTinyModel)) == 0);
  const auto abl = read_json(dir / "abl" / "ablation.json");
  CHECK(abl["variant_params"] < abl["baseline_params"]);
}

TEST_CASE("cli llm-baseline with mock clients") {
  const fs::path dir = heed::testing::temp_dir("cli_llm");
  REQUIRE(dispatch({"generate", "--pages", "10", "--length-mean", "200", "--out", str(dir / "data"),
                    "--log-level", "warn"}) == 0);
  const std::string test = str(dir / "data" / "test.jsonl");
  REQUIRE(dispatch({"llm-baseline", "--data", test, "--task", "price", "--hypertext", "--mock", "--out",
                    str(dir / "oracle"), "--log-level", "warn"}) == 0);
  const auto rep = read_json(dir / "oracle" / "report.json");
  CHECK(rep["micro"]["F1"] == 100.0);
  CHECK(fs::exists(dir / "oracle" / "transcript.jsonl"));

  REQUIRE(dispatch({"llm-baseline", "--data", test, "--mock=empty", "--out", str(dir / "empty"),
                    "--log-level", "warn"}) == 0);
  CHECK(read_json(dir / "empty" / "report.json")["micro"]["R"] == 0.0);
  CHECK(dispatch({"llm-baseline", "--data", test, "--mock=maybe", "--out", str(dir / "x")}) == 1);
}
