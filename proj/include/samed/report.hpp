#pragma once

// JSON and CSV renderings of episode results. Key order is fixed so that
// identical runs produce byte-identical files.

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "samed/config.hpp"
#include "samed/episode.hpp"

namespace samed {

using Json = nlohmann::ordered_json;

/// Every config key that can affect results, with its text value, sorted by key.
Json config_echo(const RunConfig& cfg);

Json to_json(const MemoryStats& s);
Json to_json(const EpisodeReport& r, const RunConfig& run);

/// Cross-seed summary: per-seed means, overall mean/std, per-task means. Reports are taken in seed-list order.
Json aggregate_json(const std::vector<EpisodeReport>& reports, const RunConfig& run);

struct AblationCell {
  std::size_t capacity = 0;
  RetrievalMode retrieval = RetrievalMode::confidence_similarity;
  bool adapter = true;
  bool confidence_term = true;
  std::vector<double> dsc;         // one per seed
  std::vector<double> forgetting;  // one per seed
};

inline constexpr const char* kAblationHeader =
    "capacity,retrieval,adapter,confidence_term,seeds,mean_dsc,std_dsc,mean_forgetting,std_forgetting";

/// Header line then one row per cell, cells sorted by (capacity, retrieval, adapter, confidence_term).
void write_ablation_csv(std::ostream& out, std::vector<AblationCell> cells);

}  // namespace samed
