#include "commands.hpp"

#include <atomic>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "samed/random.hpp"
#include "samed/report.hpp"

namespace samed::cli {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write '" + path.string() + "'");
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results are stored by
// index, so the outcome does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

std::vector<EpisodeReport> run_seeds(const EpisodeConfig& ep, const std::vector<std::uint64_t>& seeds,
                                     std::size_t jobs) {
  std::vector<EpisodeReport> out(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) { out[i] = run_episode(ep, seeds[i]); });
  return out;
}

}  // namespace

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out) {
  if (args.trials == 0) {
    out << "gradcheck: --trials must be >= 1\n";
    return kUsage;
  }
  Json trials = Json::array();
  double worst = 0.0;
  std::size_t failures = 0;
  for (std::size_t t = 0; t < args.trials; ++t) {
    const std::uint64_t seed = mix_seed(args.seed, t);
    const GradCheckReport r = grad_trial(seed, args.shape, args.check);
    worst = std::max(worst, r.max_rel_err);
    Json params = Json::array();
    for (const auto& p : r.params) {
      params.push_back({{"name", p.name},
                        {"count", p.count},
                        {"max_rel_err", p.max_rel_err},
                        {"max_abs_err", p.max_abs_err},
                        {"passed", p.passed}});
      if (!p.passed) {
        out << "trial " << t << " (seed " << seed << "): " << p.name << " max_rel_err " << p.max_rel_err << " > "
            << args.check.tol << '\n';
      }
    }
    failures += !r.passed;
    trials.push_back({{"trial", t}, {"seed", seed}, {"max_rel_err", r.max_rel_err}, {"passed", r.passed},
                      {"params", params}});
  }
  out << "gradcheck: " << args.trials << " trials, max_rel_err " << std::scientific << std::setprecision(3) << worst
      << std::defaultfloat << ", tol " << args.check.tol << ", " << failures << " failed\n";
  if (args.report) {
    Json j;
    j["seed"] = args.seed;
    j["trials"] = args.trials;
    j["h"] = args.check.h;
    j["tol"] = args.check.tol;
    j["extended_precision"] = args.check.extended_precision;
    j["mutate"] = args.check.mutate ? Json(*args.check.mutate) : Json(nullptr);
    j["shape"] = {{"batch", args.shape.batch},       {"height", args.shape.height},
                  {"width", args.shape.width},       {"channels", args.shape.channels},
                  {"bottleneck", args.shape.bottleneck}, {"heads", args.shape.heads},
                  {"activation", std::string(to_string(args.shape.activation))}};
    j["max_rel_err"] = worst;
    j["failures"] = failures;
    j["results"] = trials;
    write_text(*args.report, j.dump(2) + "\n");
  }
  return failures ? kViolation : kOk;
}

int cmd_memcheck(const MemcheckArgs& args, std::ostream& out) {
  if (args.trials == 0) {
    out << "memcheck: --trials must be >= 1\n";
    return kUsage;
  }
  out << "memcheck: seed " << args.seed << ", trials " << args.start << ".." << args.start + args.trials - 1 << '\n';
  struct Suite {
    const char* name;
    Counterexample (*trial)(std::uint64_t);
    std::size_t failures = 0;
  };
  Suite suites[] = {{"retrieval_oracle", retrieval_oracle_trial},
                    {"replacement_monotonicity", [](std::uint64_t s) { return replacement_trial(s); }},
                    {"capacity_zero", capacity_zero_trial}};
  Json report = Json::object();
  report["seed"] = args.seed;
  report["start"] = args.start;
  report["trials"] = args.trials;
  Json counterexamples = Json::array();
  for (std::size_t si = 0; si < std::size(suites); ++si) {
    Suite& s = suites[si];
    for (std::size_t t = args.start; t < args.start + args.trials; ++t) {
      if (auto c = s.trial(mix_seed(mix_seed(args.seed, si), t))) {
        if (s.failures++ < 5) {
          out << s.name << " trial " << t << ": " << *c << "\n  replay: memcheck --seed " << args.seed
              << " --start " << t << " --trials 1\n";
        }
        counterexamples.push_back({{"suite", s.name}, {"trial", t}, {"detail", *c}});
      }
    }
    out << s.name << ": " << args.trials << " trials, " << s.failures << " violations\n";
    report[s.name] = s.failures;
  }
  report["counterexamples"] = counterexamples;
  if (args.report) write_text(*args.report, report.dump(2) + "\n");
  for (const auto& s : suites)
    if (s.failures) return kViolation;
  return kOk;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto reports = run_seeds(cfg.episode, cfg.seeds, cfg.jobs);
  const std::filesystem::path dir = cfg.output_dir;
  for (const auto& r : reports) {
    write_text(dir / ("report_seed" + std::to_string(r.seed) + ".json"), to_json(r, cfg).dump(2) + "\n");
    out << "seed " << r.seed << ": mean_dsc " << std::fixed << std::setprecision(4) << r.mean_dsc
        << " forgetting " << r.mean_forgetting << std::defaultfloat << '\n';
  }
  const Json agg = aggregate_json(reports, cfg);
  write_text(dir / "aggregate.json", agg.dump(2) + "\n");
  out << "aggregate: mean_dsc " << std::fixed << std::setprecision(4) << agg["mean_dsc"].get<double>() << " +- "
      << agg["std_dsc"].get<double>() << std::defaultfloat << " over " << reports.size() << " seeds -> "
      << (dir / "aggregate.json").string() << '\n';
  return kOk;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  std::vector<AblationCell> cells;
  for (std::size_t cap : cfg.ablate.capacities)
    for (RetrievalMode mode : cfg.ablate.retrievals)
      for (bool adapter : cfg.ablate.adapter)
        for (bool conf : cfg.ablate.confidence_term) cells.push_back({cap, mode, adapter, conf, {}, {}});

  // One job per (cell, seed); every episode is independent.
  const std::size_t ns = cfg.seeds.size();
  std::vector<EpisodeReport> results(cells.size() * ns);
  parallel_for(results.size(), cfg.jobs, [&](std::size_t i) {
    const AblationCell& c = cells[i / ns];
    EpisodeConfig ep = cfg.episode;
    ep.memory.capacity = c.capacity;
    ep.memory.retrieval = c.retrieval;
    ep.memory.confidence_term = c.confidence_term;
    ep.use_adapter = c.adapter;
    ep.record_frames = false;
    ep.log_retrievals = false;
    results[i] = run_episode(ep, cfg.seeds[i % ns]);
  });
  for (std::size_t i = 0; i < results.size(); ++i) {
    cells[i / ns].dsc.push_back(results[i].mean_dsc);
    cells[i / ns].forgetting.push_back(results[i].mean_forgetting);
  }
  std::ostringstream csv;
  write_ablation_csv(csv, cells);
  const auto path = std::filesystem::path(cfg.output_dir) / "ablate.csv";
  write_text(path, csv.str());
  out << "ablate: " << cells.size() << " cells x " << ns << " seeds -> " << path.string() << '\n';
  return kOk;
}

int cmd_mem_export(const RunConfig& cfg, const std::filesystem::path& file, std::ostream& out) {
  cfg.validate();
  MemoryBase memory;
  const EpisodeReport r = run_episode(cfg.episode, cfg.seeds.front(), &memory);
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  memory.save(file);
  out << "mem-export: seed " << r.seed << ", " << memory.size() << "/" << memory.capacity() << " entries -> "
      << file.string() << '\n';
  out << to_json(memory.stats()).dump() << '\n';
  return kOk;
}

int cmd_mem_import(const std::filesystem::path& file, const std::optional<std::filesystem::path>& copy,
                   std::ostream& out) {
  const MemoryBase memory = MemoryBase::load(file);
  const auto& fs = memory.feature_shape();
  out << "mem-import: " << file.string() << ": " << memory.size() << "/" << memory.capacity() << " entries, C,H,W "
      << fs.channels << "," << fs.height << "," << fs.width << '\n';
  out << to_json(memory.stats()).dump() << '\n';

  std::ifstream in(file, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ostringstream again;
  memory.write(again);
  if (again.str() != bytes) {
    out << "mem-import: re-serialized bytes differ from the file\n";
    return kViolation;
  }
  if (copy) {
    memory.save(*copy);
    out << "mem-import: copy -> " << copy->string() << '\n';
  }
  return kOk;
}

}  // namespace samed::cli
