// samed: gradient checks, memory property suites, episode simulation and
// ablation sweeps. Exit codes: 0 ok, 1 property violation, 2 usage/config error.

#include <iostream>
#include <map>
#include <random>

#include "CLI11.hpp"
#include "commands.hpp"

using namespace samed;

namespace {

// Registers --config plus one --<dotted.key> flag per config key. The values
// are applied after parsing, on top of the file.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> overrides;

  void add_to(CLI::App& app) {
    app.add_option("-c,--config", config_path, "config file (dotted key = value lines)")->check(CLI::ExistingFile);
    for (const auto& k : config_keys()) app.add_option("--" + k.name, overrides[k.name], k.help);
    app.add_option("--retrieval", overrides["memory.retrieval"], "alias for --memory.retrieval");
    app.add_option("--out", overrides["output.dir"], "alias for --output.dir");
    app.add_option("--seeds", overrides["run.seeds"], "alias for --run.seeds");
  }

  RunConfig resolve(const CLI::App& app) const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& [key, value] : overrides) {
      const bool given = app.count("--" + key) > 0 || (key == "memory.retrieval" && app.count("--retrieval") > 0) ||
                         (key == "output.dir" && app.count("--out") > 0) ||
                         (key == "run.seeds" && app.count("--seeds") > 0);
      if (!given) continue;
      try {
        set_config_value(cfg, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("--") + e.what());
      }
    }
    cfg.validate();
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-gated memory and temporal adapter simulator"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // gradcheck
  cli::GradcheckArgs grad;
  std::string grad_activation = "gelu";
  std::string grad_mutate;
  std::string grad_report;
  bool grad_double_fd = false;
  auto* g = app.add_subcommand("gradcheck", "block_backward against central finite differences");
  g->add_option("--trials", grad.trials, "random instances")->capture_default_str();
  g->add_option("--seed", grad.seed, "base seed")->capture_default_str();
  g->add_option("--fd-step", grad.check.h, "finite-difference step")->capture_default_str();
  g->add_option("--tol", grad.check.tol, "max relative error")->capture_default_str();
  g->add_option("--batch", grad.shape.batch, "B (frames)")->capture_default_str();
  g->add_option("--height", grad.shape.height)->capture_default_str();
  g->add_option("--width", grad.shape.width)->capture_default_str();
  g->add_option("--channels", grad.shape.channels)->capture_default_str();
  g->add_option("--bottleneck", grad.shape.bottleneck, "adapter width r")->capture_default_str();
  g->add_option("--heads", grad.shape.heads)->capture_default_str();
  g->add_option("--activation", grad_activation, "gelu|sigmoid")->capture_default_str();
  g->add_option("--weight-scale", grad.shape.weight_scale)->capture_default_str();
  g->add_flag("--perturb-norms", grad.shape.perturb_norms, "random layer-norm affine and MLP biases");
  g->add_flag("--double-fd", grad_double_fd, "difference the double forward pass instead of long double");
  g->add_option("--mutate", grad_mutate, "scale one analytic gradient by 1.1 (e.g. w_up) to see a failure");
  g->add_option("--report", grad_report, "JSON report path");

  // memcheck
  cli::MemcheckArgs mem;
  std::string mem_report;
  auto* m = app.add_subcommand("memcheck", "memory base oracle, monotonicity and capacity-0 suites");
  m->add_option("--trials", mem.trials, "trials per suite")->capture_default_str();
  m->add_option("--seed", mem.seed, "base seed (random if omitted, always printed)");
  m->add_option("--start", mem.start, "first trial index")->capture_default_str();
  m->add_option("--report", mem_report, "JSON report path");

  ConfigFlags sim_flags, abl_flags, exp_flags;
  auto* s = app.add_subcommand("simulate", "run episodes and write JSON reports");
  sim_flags.add_to(*s);
  auto* a = app.add_subcommand("ablate", "sweep capacity x retrieval x adapter x confidence term, write CSV");
  abl_flags.add_to(*a);

  std::string export_file = "memory.smb2";
  auto* e = app.add_subcommand("mem-export", "stream one episode and save its memory base");
  exp_flags.add_to(*e);
  e->add_option("--file", export_file, "memory file to write")->capture_default_str();

  std::string import_file, import_copy;
  auto* i = app.add_subcommand("mem-import", "load a memory file, print stats, verify the round trip");
  i->add_option("file", import_file, "memory file")->required();
  i->add_option("--copy", import_copy, "write the loaded base here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return cli::kUsage;
  }

  try {
    if (*g) {
      grad.shape.activation = activation_from_string(grad_activation);
      grad.check.extended_precision = !grad_double_fd;
      if (!grad_mutate.empty()) grad.check.mutate = grad_mutate;
      if (!grad_report.empty()) grad.report = grad_report;
      return cli::cmd_gradcheck(grad, std::cout);
    }
    if (*m) {
      if (m->count("--seed") == 0) mem.seed = std::random_device{}();
      if (!mem_report.empty()) mem.report = mem_report;
      return cli::cmd_memcheck(mem, std::cout);
    }
    if (*s) return cli::cmd_simulate(sim_flags.resolve(*s), std::cout);
    if (*a) return cli::cmd_ablate(abl_flags.resolve(*a), std::cout);
    if (*e) return cli::cmd_mem_export(exp_flags.resolve(*e), export_file, std::cout);
    if (*i) {
      return cli::cmd_mem_import(import_file,
                                 import_copy.empty() ? std::nullopt : std::optional<std::filesystem::path>(import_copy),
                                 std::cout);
    }
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return cli::kUsage;
  } catch (const MemoryFileError& ex) {
    std::cerr << "memory file error: " << ex.what() << '\n';
    return cli::kUsage;
  } catch (const ShapeError& ex) {
    std::cerr << "shape error: " << ex.what() << '\n';
    return cli::kUsage;
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return cli::kUsage;
  } catch (const std::exception& ex) {
    std::cerr << "fatal: " << ex.what() << '\n';
    return cli::kUsage;
  }
  return cli::kUsage;
}
