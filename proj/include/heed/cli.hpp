#pragma once

// The `heed` command line: one entry point for every pipeline stage.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace heed::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kFailure = 2 };

// Written as run_manifest.json next to a run's outputs, once per run.
struct RunManifest {
  std::string subcommand;
  std::string config_hash;  // FNV-1a of the resolved options
  std::uint64_t seed = 0;
  std::string version;
  std::string started;  // UTC, ISO 8601
  std::string finished;
  std::string status;  // "ok" or "failed"
  std::string error;
  nlohmann::ordered_json config;  // resolved option values
  std::vector<std::string> outputs;

  nlohmann::ordered_json to_json() const;
};

std::string artifact_version();

// args excludes the program name. Returns an ExitCode.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, const char* const* argv);

}  // namespace heed::cli
