#include "samed/report.hpp"

#include <algorithm>
#include <charconv>
#include <ostream>
#include <tuple>

namespace samed {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  auto [p, ec] = std::to_chars(buf, buf + 16, v, 16);
  return std::string(16 - static_cast<std::size_t>(p - buf), '0') + std::string(buf, p);
}

std::string outcome_name(ReplaceOutcome::Kind k) {
  switch (k) {
    case ReplaceOutcome::Kind::appended: return "appended";
    case ReplaceOutcome::Kind::replaced: return "replaced";
    case ReplaceOutcome::Kind::rejected: return "rejected";
  }
  return "?";
}

template <class T>
Json opt(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

std::string fixed(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
  return std::string(buf, p);
}

}  // namespace

Json config_echo(const RunConfig& cfg) {
  Json j = Json::object();
  for (const auto& k : config_keys()) {
    // Scheduling and output location do not affect results.
    if (k.name == "run.jobs" || k.name == "output.dir") continue;
    j[k.name] = get_config_value(cfg, k.name);
  }
  return j;
}

Json to_json(const MemoryStats& s) {
  return Json{{"count", s.count},
              {"capacity", s.capacity},
              {"min_confidence", opt(s.min_confidence)},
              {"max_confidence", opt(s.max_confidence)},
              {"mean_confidence", opt(s.mean_confidence)},
              {"mean_pairwise_similarity", opt(s.mean_pairwise_similarity)}};
}

Json to_json(const EpisodeReport& r, const RunConfig& run) {
  RunConfig echo = run;
  echo.episode = r.config;
  echo.seeds = {r.seed};
  Json j;
  j["seed"] = r.seed;
  j["config"] = config_echo(echo);
  j["mean_dsc"] = r.mean_dsc;
  j["mean_forgetting"] = r.mean_forgetting;
  Json tasks = Json::array();
  for (const auto& t : r.tasks) {
    tasks.push_back({{"task_id", t.task_id},
                     {"modality", t.modality_tag},
                     {"train_frames", t.train_frames},
                     {"corrupted_frames", t.corrupted_frames},
                     {"train_dsc", t.train_dsc},
                     {"immediate_dsc_mean", t.immediate_dsc},
                     {"immediate_dsc_std", t.immediate_dsc_std},
                     {"final_dsc_mean", t.final_dsc},
                     {"final_dsc_std", t.final_dsc_std},
                     {"forgetting", t.forgetting}});
  }
  j["tasks"] = tasks;
  Json snaps = Json::array();
  for (const auto& s : r.snapshots) {
    snaps.push_back({{"after_task", s.after_task},
                     {"stats", to_json(s.stats)},
                     {"appended", s.appended},
                     {"replaced", s.replaced},
                     {"rejected", s.rejected}});
  }
  j["memory_snapshots"] = snaps;
  Json frames = Json::array();
  for (const auto& f : r.frames) {
    frames.push_back({{"ordinal", f.ordinal},
                      {"phase", to_string(f.phase)},
                      {"task", f.task},
                      {"volume", f.volume},
                      {"slice", f.slice},
                      {"corrupted", f.corrupted},
                      {"dice", f.dice},
                      {"iou", f.iou},
                      {"confidence", f.confidence},
                      {"mask_digest", hex64(f.mask_digest)},
                      {"retrieved", f.retrieved},
                      {"update", f.update ? Json(outcome_name(*f.update)) : Json(nullptr)}});
  }
  j["frames"] = frames;
  if (r.config.log_retrievals) {
    Json logs = Json::array();
    for (const auto& l : r.retrievals) {
      logs.push_back({{"ordinal", l.ordinal},
                      {"indices", l.indices},
                      {"scores", l.scores},
                      {"similarities", l.similarities},
                      {"confidences", l.confidences}});
    }
    j["retrievals"] = logs;
  }
  return j;
}

Json aggregate_json(const std::vector<EpisodeReport>& reports, const RunConfig& run) {
  Json j;
  j["config"] = config_echo(run);
  j["seeds"] = run.seeds;
  std::vector<double> dsc, forgetting;
  Json episodes = Json::array();
  for (const auto& r : reports) {
    dsc.push_back(r.mean_dsc);
    forgetting.push_back(r.mean_forgetting);
    episodes.push_back({{"seed", r.seed}, {"mean_dsc", r.mean_dsc}, {"mean_forgetting", r.mean_forgetting}});
  }
  j["episodes"] = episodes;
  j["mean_dsc"] = mean(dsc);
  j["std_dsc"] = stddev(dsc);
  j["mean_forgetting"] = mean(forgetting);
  j["std_forgetting"] = stddev(forgetting);
  Json tasks = Json::array();
  const std::size_t n = reports.empty() ? 0 : reports.front().tasks.size();
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<double> imm, fin, fg;
    for (const auto& r : reports) {
      imm.push_back(r.tasks[t].immediate_dsc);
      fin.push_back(r.tasks[t].final_dsc);
      fg.push_back(r.tasks[t].forgetting);
    }
    tasks.push_back({{"task_id", t},
                     {"immediate_dsc_mean", mean(imm)},
                     {"final_dsc_mean", mean(fin)},
                     {"final_dsc_std", stddev(fin)},
                     {"forgetting_mean", mean(fg)}});
  }
  j["tasks"] = tasks;
  return j;
}

void write_ablation_csv(std::ostream& out, std::vector<AblationCell> cells) {
  auto key = [](const AblationCell& c) {
    return std::make_tuple(c.capacity, to_string(c.retrieval), c.adapter, c.confidence_term);
  };
  std::sort(cells.begin(), cells.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  out << kAblationHeader << '\n';
  for (const auto& c : cells) {
    out << c.capacity << ',' << to_string(c.retrieval) << ',' << (c.adapter ? "on" : "off") << ','
        << (c.confidence_term ? "on" : "off") << ',' << c.dsc.size() << ',' << fixed(mean(c.dsc)) << ','
        << fixed(stddev(c.dsc)) << ',' << fixed(mean(c.forgetting)) << ',' << fixed(stddev(c.forgetting)) << '\n';
  }
}

}  // namespace samed
