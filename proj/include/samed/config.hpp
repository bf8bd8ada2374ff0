#pragma once

// Run configuration: a flat "dotted.key = value" text file plus overrides.
// Every key lives in one table that drives parsing, validation and the echo
// embedded in reports.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "samed/episode.hpp"

namespace samed {

struct AblateAxes {
  std::vector<std::size_t> capacities{0, 16, 640};
  std::vector<RetrievalMode> retrievals{RetrievalMode::random, RetrievalMode::confidence_similarity};
  std::vector<bool> adapter{true, false};
  std::vector<bool> confidence_term{true, false};
};

struct RunConfig {
  EpisodeConfig episode;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
  std::string output_dir = "out";
  std::size_t jobs = 1;
  AblateAxes ablate;

  void validate() const;
};

/// Bad file, bad key or bad value. The message carries file:line and key where known.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

/// Sets one key from its text form; throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Text form of a key's current value (round-trips through set_config_value).
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// Parses the file on top of `base` (defaults if omitted). Lines are
/// `key = value`; '#' starts a comment; a key may appear once per file.
RunConfig parse_config(std::istream& in, const std::string& source_name, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace samed
