#include "acvi/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "acvi/errors.hpp"

namespace acvi {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v +
                    "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" +
                      v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v +
                      "'");
  }
}

std::string format_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

struct KeyBinding {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

const std::map<std::string, KeyBinding>& bindings() {
  static const std::map<std::string, KeyBinding> table = [] {
    std::map<std::string, KeyBinding> m;
    auto str = [&m](const char* key, std::string TrainConfig::* field) {
      m[key] = {[field](TrainConfig& c, const std::string& v) { c.*field = v; },
                [field](const TrainConfig& c) { return c.*field; }};
    };
    auto boolean = [&m](const char* key, bool TrainConfig::* field) {
      m[key] = {[key, field](TrainConfig& c, const std::string& v) {
                  c.*field = parse_bool(key, v);
                },
                [field](const TrainConfig& c) {
                  return c.*field ? "true" : "false";
                }};
    };
    auto size = [&m](const char* key, std::size_t TrainConfig::* field) {
      m[key] = {[key, field](TrainConfig& c, const std::string& v) {
                  c.*field = parse_size(key, v);
                },
                [field](const TrainConfig& c) {
                  return std::to_string(c.*field);
                }};
    };
    auto real = [&m](const char* key, double TrainConfig::* field) {
      m[key] = {[key, field](TrainConfig& c, const std::string& v) {
                  c.*field = parse_double(key, v);
                },
                [field](const TrainConfig& c) {
                  return format_double(c.*field);
                }};
    };
    str("model", &TrainConfig::model);
    boolean("pointer", &TrainConfig::pointer);
    boolean("coverage", &TrainConfig::coverage);
    size("hidden_dim", &TrainConfig::hidden_dim);
    size("embed_dim", &TrainConfig::embed_dim);
    size("attention_dim", &TrainConfig::attention_dim);
    size("output_hidden_dim", &TrainConfig::output_hidden_dim);
    size("vocab_size", &TrainConfig::vocab_size);
    size("mc_samples", &TrainConfig::mc_samples);
    str("variance_head", &TrainConfig::variance_head);
    str("kl_estimator", &TrainConfig::kl_estimator);
    real("gumbel_fraction", &TrainConfig::gumbel_fraction);
    real("gumbel_temperature", &TrainConfig::gumbel_temperature);
    real("kl_weight", &TrainConfig::kl_weight);
    size("kl_warmup_steps", &TrainConfig::kl_warmup_steps);
    real("coverage_lambda", &TrainConfig::coverage_lambda);
    real("dropout", &TrainConfig::dropout);
    real("learning_rate", &TrainConfig::learning_rate);
    real("adam_beta1", &TrainConfig::adam_beta1);
    real("adam_beta2", &TrainConfig::adam_beta2);
    real("adam_epsilon", &TrainConfig::adam_epsilon);
    real("grad_clip_norm", &TrainConfig::grad_clip_norm);
    size("batch_size", &TrainConfig::batch_size);
    str("phase_preset", &TrainConfig::phase_preset);
    str("phases", &TrainConfig::phases);
    size("coverage_finetune_steps", &TrainConfig::coverage_finetune_steps);
    m["seed"] = {[](TrainConfig& c, const std::string& v) {
                   c.seed = static_cast<std::uint64_t>(
                       parse_size("seed", v));
                 },
                 [](const TrainConfig& c) { return std::to_string(c.seed); }};
    str("task", &TrainConfig::task);
    str("data_path", &TrainConfig::data_path);
    str("eval_path", &TrainConfig::eval_path);
    str("feature_path", &TrainConfig::feature_path);
    str("target_path", &TrainConfig::target_path);
    size("synth_examples", &TrainConfig::synth_examples);
    size("synth_vocab", &TrainConfig::synth_vocab);
    size("synth_min_len", &TrainConfig::synth_min_len);
    size("synth_max_len", &TrainConfig::synth_max_len);
    boolean("lowercase", &TrainConfig::lowercase);
    size("beam_width", &TrainConfig::beam_width);
    boolean("length_normalize", &TrainConfig::length_normalize);
    boolean("decode_sample", &TrainConfig::decode_sample);
    size("eval_max_len", &TrainConfig::eval_max_len);
    boolean("finite_checks", &TrainConfig::finite_checks);
    return m;
  }();
  return table;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

void TrainConfig::validate() const {
  if (model != "sa" && model != "acvi")
    throw ConfigError("config: model must be 'sa' or 'acvi', got '" + model +
                      "'");
  if (variance_head != "relu" && variance_head != "softplus")
    throw ConfigError("config: variance_head must be 'relu' or 'softplus'");
  if (kl_estimator != "bound" && kl_estimator != "mc")
    throw ConfigError("config: kl_estimator must be 'bound' or 'mc'");
  if (gumbel_fraction < 0.0 || gumbel_fraction > 1.0)
    throw ConfigError("config: gumbel_fraction must lie in [0, 1]");
  if (gumbel_temperature <= 0.0)
    throw ConfigError("config: gumbel_temperature must be positive");
  if (kl_weight < 0.0)
    throw ConfigError("config: kl_weight must be nonnegative");
  if (coverage_lambda < 0.0)
    throw ConfigError("config: coverage_lambda must be nonnegative");
  if (hidden_dim == 0 || embed_dim == 0 || attention_dim == 0 ||
      batch_size == 0 || vocab_size == 0 || mc_samples == 0 || beam_width == 0)
    throw ConfigError("config: sizes must be positive");
  if (learning_rate <= 0.0)
    throw ConfigError("config: learning_rate must be positive");
  if (task != "copy" && task != "reverse" && task != "pointer" &&
      task != "file" && task != "features")
    throw ConfigError("config: unknown task '" + task + "'");
  resolve_phases(*this);  // throws on malformed phase specs
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream stream(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key");
    out[key] = value;
  }
  return out;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_config(const ConfigMap& entries, TrainConfig& cfg) {
  for (const auto& [key, value] : entries) {
    auto it = bindings().find(key);
    if (it == bindings().end()) {
      const std::string near = nearest_config_key(key);
      throw ConfigError("config: unknown key '" + key + "'; did you mean '" +
                        near + "'?");
    }
    it->second.set(cfg, value);
  }
}

ConfigMap config_to_map(const TrainConfig& cfg) {
  ConfigMap out;
  for (const auto& [key, binding] : bindings()) out[key] = binding.get(cfg);
  return out;
}

std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [key, value] : config_to_map(cfg))
    out += key + "=" + value + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [key, binding] : bindings()) out.push_back(key);
    return out;
  }();
  return keys;
}

std::string nearest_config_key(const std::string& unknown) {
  std::string best;
  std::size_t best_dist = static_cast<std::size_t>(-1);
  for (const auto& key : config_keys()) {
    const std::size_t d = edit_distance(unknown, key);
    if (d < best_dist) {
      best_dist = d;
      best = key;
    }
  }
  return best;
}

std::vector<Phase> resolve_phases(const TrainConfig& cfg) {
  std::vector<Phase> out;
  if (!cfg.phases.empty()) {
    std::istringstream stream(cfg.phases);
    std::string item;
    while (std::getline(stream, item, ',')) {
      Phase p;
      if (std::sscanf(item.c_str(), "%zu:%zu:%zu", &p.steps, &p.max_encode,
                      &p.max_decode) != 3 ||
          p.steps == 0 || p.max_encode == 0 || p.max_decode == 0)
        throw ConfigError("config: bad phase entry '" + item +
                          "', expected steps:max_encode:max_decode");
      out.push_back(p);
    }
    if (out.empty()) throw ConfigError("config: phases parsed to nothing");
  } else if (cfg.phase_preset == "desk") {
    out = {{1400, 10, 10}, {900, 20, 20}, {1400, 40, 20},
           {800, 60, 20},  {500, 80, 30}};
  } else if (cfg.phase_preset == "paper") {
    out = {{71000, 10, 10},  {45000, 50, 50}, {68000, 100, 50},
           {39000, 200, 50}, {27000, 400, 100}};
  } else {
    throw ConfigError("config: unknown phase_preset '" + cfg.phase_preset +
                      "'");
  }
  if (cfg.coverage) {
    Phase fine = out.back();
    fine.steps = cfg.coverage_finetune_steps
                     ? cfg.coverage_finetune_steps
                     : (cfg.phase_preset == "paper" && cfg.phases.empty()
                            ? 3000
                            : 60);
    fine.coverage = true;
    out.push_back(fine);
  }
  return out;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for hashing: " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!in) break;
  }
  return h;
}

}  // namespace acvi
