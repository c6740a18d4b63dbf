#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "ffn/training.hpp"
#include "json.hpp"

namespace ffn {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,   // unexpected error
  kExitUsage = 2,     // bad flags or configuration
  kExitData = 3,      // unreadable or inconsistent data / checkpoints
  kExitTraining = 4,  // non-finite loss
};

/// Written to <out>/manifest.json before any training starts and never
/// rewritten; wall-clock timings go to <out>/timings.json.
struct RunManifest {
  std::string command;
  std::string method;
  std::uint64_t seed = 0;
  std::string code_version;
  std::string started_utc;
  std::string output_dir;
  std::string dataset_digest;
  nlohmann::json config;
};

nlohmann::json to_json(const RunManifest& m);
void write_manifest(const RunManifest& m, const std::filesystem::path& dir);

/// Version string baked in at build time (project version and git revision).
std::string code_version();

/// Output directory when --out is not given: $FFN_OUTPUT_ROOT (or "runs")
/// joined with "<method>_seed<seed>".
std::filesystem::path default_output_dir(const std::string& method, std::uint64_t seed);

/// Parses "4,8,16" into counts; throws std::invalid_argument on junk.
std::vector<int> parse_frame_list(const std::string& text);

/// Applies "key=value" overrides to a config; values are parsed as JSON
/// first and fall back to plain strings.
TrainConfig apply_overrides(TrainConfig config, const std::vector<std::string>& assignments);

/// Entry point of the `ffn` tool. Output goes to `out`, errors to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ffn
