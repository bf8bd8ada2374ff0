#pragma once

// Subcommand bodies, kept out of main() so tests and the acceptance suite
// can drive them directly. Each returns a process exit code.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "samed/checks.hpp"
#include "samed/config.hpp"

namespace samed::cli {

inline constexpr int kOk = 0;
inline constexpr int kViolation = 1;
inline constexpr int kUsage = 2;

struct GradcheckArgs {
  std::size_t trials = 50;
  std::uint64_t seed = 0;
  GradTrialConfig shape;
  GradCheckOptions check;
  std::optional<std::filesystem::path> report;
};

struct MemcheckArgs {
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  std::size_t start = 0;  // first trial index, for replaying one failure
  std::optional<std::filesystem::path> report;
};

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out);
int cmd_memcheck(const MemcheckArgs& args, std::ostream& out);

/// Writes report_seed<N>.json per seed and aggregate.json into cfg.output_dir.
int cmd_simulate(const RunConfig& cfg, std::ostream& out);

/// Writes ablate.csv into cfg.output_dir.
int cmd_ablate(const RunConfig& cfg, std::ostream& out);

/// Streams one episode (first seed) and saves the final memory base.
int cmd_mem_export(const RunConfig& cfg, const std::filesystem::path& file, std::ostream& out);

/// Loads a memory file, prints its stats, checks that re-serializing reproduces
/// the file bytes, and optionally writes a copy.
int cmd_mem_import(const std::filesystem::path& file, const std::optional<std::filesystem::path>& copy,
                   std::ostream& out);

}  // namespace samed::cli
