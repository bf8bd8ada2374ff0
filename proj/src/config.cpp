#include "samed/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace samed {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty list element in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) throw ConfigError("'" + s + "' is not a valid number");
  return v;
}

// Unsigned parses reject a leading '-', which from_chars would otherwise wrap.
template <class T>
T parse_unsigned(const std::string& s) {
  if (!s.empty() && s[0] == '-') throw ConfigError("'" + s + "' must be non-negative");
  return parse_number<T>(s);
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError("'" + s + "' is not a boolean (true/false/on/off/1/0)");
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <class T, class F>
std::string join(const std::vector<T>& v, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(s)) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_unsigned<std::uint64_t>(item));
      continue;
    }
    const auto lo = parse_unsigned<std::uint64_t>(trim(item.substr(0, dots)));
    const auto hi = parse_unsigned<std::uint64_t>(trim(item.substr(dots + 2)));
    if (hi < lo) throw ConfigError("seed range '" + item + "' is inverted");
    if (hi - lo >= 100000) throw ConfigError("seed range '" + item + "' is too long");
    for (auto x = lo; x <= hi; ++x) out.push_back(x);
  }
  return out;
}

struct Entry {
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Access>
Entry size_entry(std::string help, Access acc) {
  return {std::move(help), [acc](RunConfig& c, const std::string& v) { acc(c) = parse_unsigned<std::size_t>(v); },
          [acc](const RunConfig& c) { return std::to_string(acc(c)); }};
}

template <class Access>
Entry u64_entry(std::string help, Access acc) {
  return {std::move(help), [acc](RunConfig& c, const std::string& v) { acc(c) = parse_unsigned<std::uint64_t>(v); },
          [acc](const RunConfig& c) { return std::to_string(acc(c)); }};
}

template <class Access>
Entry double_entry(std::string help, Access acc) {
  return {std::move(help), [acc](RunConfig& c, const std::string& v) { acc(c) = parse_number<double>(v); },
          [acc](const RunConfig& c) { return format_double(acc(c)); }};
}

template <class Access>
Entry bool_entry(std::string help, Access acc) {
  return {std::move(help), [acc](RunConfig& c, const std::string& v) { acc(c) = parse_bool(v); },
          [acc](const RunConfig& c) { return std::string(acc(c) ? "true" : "false"); }};
}

#define ACC(expr) [](auto& c) -> auto& { return c.expr; }

const std::map<std::string, Entry>& table() {
  static const std::map<std::string, Entry> t = [] {
    std::map<std::string, Entry> m;
    m["run.seeds"] = {"episode seeds: comma list, ranges as a..b",
                      [](RunConfig& c, const std::string& v) { c.seeds = parse_seeds(v); },
                      [](const RunConfig& c) {
                        return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); });
                      }};
    m["run.jobs"] = size_entry("worker threads for independent episodes", ACC(jobs));
    m["output.dir"] = {"directory for reports",
                       [](RunConfig& c, const std::string& v) {
                         if (v.empty()) throw ConfigError("output.dir must not be empty");
                         c.output_dir = v;
                       },
                       [](const RunConfig& c) { return c.output_dir; }};

    m["geometry.height"] = size_entry("frame height in pixels", ACC(episode.geometry.height));
    m["geometry.width"] = size_entry("frame width in pixels", ACC(episode.geometry.width));
    m["geometry.channels"] = size_entry("image feature channels", ACC(episode.geometry.channels));
    m["geometry.slices"] = size_entry("frames per volume", ACC(episode.geometry.slices));
    m["geometry.world_seed"] = u64_entry("seed of the shared appearance", ACC(episode.geometry.world_seed));
    m["geometry.shared_weight"] = double_entry("weight of shared appearance", ACC(episode.geometry.shared_weight));
    m["geometry.task_weight"] = double_entry("weight of task appearance", ACC(episode.geometry.task_weight));
    m["geometry.texture_amplitude"] = double_entry("background texture amplitude",
                                                   ACC(episode.geometry.texture_amplitude));

    m["model.channels"] = size_entry("embedding channels", ACC(episode.model.channels));
    m["model.patch"] = size_entry("pixels per token edge", ACC(episode.model.patch));
    m["model.adapter_blocks"] = size_entry("temporal adapter blocks", ACC(episode.model.adapter_blocks));
    m["model.block_heads"] = size_entry("attention heads per block", ACC(episode.model.block_heads));
    m["model.adapter_activation"] = {"adapter activation: gelu|sigmoid",
                                     [](RunConfig& c, const std::string& v) {
                                       try {
                                         c.episode.model.adapter_activation = activation_from_string(v);
                                       } catch (const Error& e) {
                                         throw ConfigError(e.what());
                                       }
                                     },
                                     [](const RunConfig& c) { return std::string(to_string(c.episode.model.adapter_activation)); }};
    m["model.block_scale"] = double_entry("stddev of block weights", ACC(episode.model.block_scale));
    m["model.pe_scale"] = double_entry("positional encoding amplitude", ACC(episode.model.pe_scale));
    m["model.seed"] = u64_entry("seed of the fixed model weights", ACC(episode.model.seed));
    m["model.attention_temperature"] = double_entry("memory attention query/key scale",
                                                    ACC(episode.model.attention_temperature));
    m["model.value_gain"] = double_entry("memory attention output gain", ACC(episode.model.value_gain));
    m["model.mask_feature_gain"] = double_entry("label amplitude in mask features",
                                                ACC(episode.model.mask_feature_gain));
    m["model.feature_readout_gain"] = double_entry("decoder gain on image features",
                                                   ACC(episode.model.feature_readout_gain));
    m["model.memory_readout_gain"] = double_entry("decoder gain on the memory label channel",
                                                  ACC(episode.model.memory_readout_gain));
    m["model.box_margin"] = size_entry("box prompt margin in pixels", ACC(episode.model.box_margin));
    m["model.confidence_eps"] = double_entry("IoU clamp before the logit", ACC(episode.model.confidence_eps));

    m["memory.capacity"] = size_entry("memory base capacity", ACC(episode.memory.capacity));
    m["memory.k"] = size_entry("entries retrieved per frame", ACC(episode.memory.k));
    m["memory.retrieval"] = {"none|random|confidence_similarity",
                             [](RunConfig& c, const std::string& v) {
                               try {
                                 c.episode.memory.retrieval = retrieval_mode_from_string(v);
                               } catch (const Error& e) {
                                 throw ConfigError(e.what());
                               }
                             },
                             [](const RunConfig& c) { return to_string(c.episode.memory.retrieval); }};
    m["memory.confidence_term"] = bool_entry("add sigmoid(confidence) to the retrieval score",
                                             ACC(episode.memory.confidence_term));

    m["stream.num_tasks"] = size_entry("tasks per episode", ACC(episode.stream.num_tasks));
    m["stream.train_volumes"] = size_entry("streamed volumes per task", ACC(episode.stream.train_volumes));
    m["stream.eval_volumes"] = size_entry("held-out volumes per task", ACC(episode.stream.eval_volumes));
    m["noise.label_corrupt_prob"] = double_entry("per-frame label corruption probability",
                                                 ACC(episode.stream.noise.label_corrupt_prob));
    m["noise.feature_noise_sigma"] = double_entry("Gaussian feature noise",
                                                  ACC(episode.stream.noise.feature_noise_sigma));
    m["noise.confidence_miscalibration"] = double_entry("confidence noise on corrupted frames",
                                                        ACC(episode.stream.noise.confidence_miscalibration));

    m["adapter.enabled"] = bool_entry("run the temporal adapter blocks", ACC(episode.use_adapter));
    m["report.frames"] = bool_entry("per-frame records in episode reports", ACC(episode.record_frames));
    m["report.retrievals"] = bool_entry("retrieval logs in episode reports", ACC(episode.log_retrievals));

    m["ablate.capacities"] = {"memory capacities to sweep",
                              [](RunConfig& c, const std::string& v) {
                                c.ablate.capacities.clear();
                                for (const auto& x : split_list(v))
                                  c.ablate.capacities.push_back(parse_unsigned<std::size_t>(x));
                              },
                              [](const RunConfig& c) {
                                return join(c.ablate.capacities, [](std::size_t x) { return std::to_string(x); });
                              }};
    m["ablate.retrievals"] = {"retrieval modes to sweep",
                              [](RunConfig& c, const std::string& v) {
                                c.ablate.retrievals.clear();
                                for (const auto& x : split_list(v)) {
                                  try {
                                    c.ablate.retrievals.push_back(retrieval_mode_from_string(x));
                                  } catch (const Error& e) {
                                    throw ConfigError(e.what());
                                  }
                                }
                              },
                              [](const RunConfig& c) {
                                return join(c.ablate.retrievals, [](RetrievalMode r) { return to_string(r); });
                              }};
    auto bool_list = [](std::vector<bool> AblateAxes::*field, std::string help) {
      return Entry{std::move(help),
                   [field](RunConfig& c, const std::string& v) {
                     auto& out = c.ablate.*field;
                     out.clear();
                     for (const auto& x : split_list(v)) out.push_back(parse_bool(x));
                   },
                   [field](const RunConfig& c) {
                     return join(c.ablate.*field, [](bool b) { return std::string(b ? "on" : "off"); });
                   }};
    };
    m["ablate.adapter"] = bool_list(&AblateAxes::adapter, "adapter settings to sweep");
    m["ablate.confidence_term"] = bool_list(&AblateAxes::confidence_term, "confidence term settings to sweep");
    return m;
  }();
  return t;
}

#undef ACC

const Entry& lookup(const std::string& key) {
  const auto& t = table();
  const auto it = t.find(key);
  if (it == t.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

}  // namespace

void RunConfig::validate() const {
  try {
    episode.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
  if (jobs == 0) throw ConfigError("run.jobs must be >= 1");
  if (ablate.capacities.empty() || ablate.retrievals.empty() || ablate.adapter.empty() ||
      ablate.confidence_term.empty()) {
    throw ConfigError("ablate axes must not be empty");
  }
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& [name, e] : table()) out.push_back({name, e.help});
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Entry& e = lookup(key);
  try {
    e.set(cfg, value);
  } catch (const ConfigError& err) {
    throw ConfigError("key '" + key + "': " + err.what());
  }
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return lookup(key).get(cfg); }

RunConfig parse_config(std::istream& in, const std::string& source_name, RunConfig base) {
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source_name + ":" + std::to_string(lineno) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (const auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(where + "key '" + key + "' already set on line " + std::to_string(it->second));
    }
    seen[key] = lineno;
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  return parse_config(in, path.string(), std::move(base));
}

}  // namespace samed
