#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace acvi {

// One curriculum phase: how many optimizer steps to run with the given
// truncation caps on encoder and decoder lengths.
struct Phase {
  std::size_t steps = 0;
  std::size_t max_encode = 0;
  std::size_t max_decode = 0;
  bool coverage = false;  // set on the appended fine-tune phase
};

// Flat run configuration; every field maps 1:1 onto a config-file key.
struct TrainConfig {
  // model
  std::string model = "sa";  // sa | acvi
  bool pointer = false;
  bool coverage = false;
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t attention_dim = 64;
  std::size_t output_hidden_dim = 0;  // 0 = hidden_dim
  std::size_t vocab_size = 10000;     // cap, reserved entries included
  std::size_t mc_samples = 1;
  std::string variance_head = "relu";  // relu | softplus
  std::string kl_estimator = "bound";  // bound | mc
  double gumbel_fraction = 0.10;
  double gumbel_temperature = 0.5;
  double kl_weight = 1.0;
  std::size_t kl_warmup_steps = 0;
  double coverage_lambda = 1.0;
  double dropout = 0.0;
  // optimization
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip_norm = 2.0;
  std::size_t batch_size = 16;
  std::string phase_preset = "desk";  // desk | paper
  std::string phases;                 // "steps:enc:dec,..." overrides preset
  std::size_t coverage_finetune_steps = 0;  // 0 = preset value
  std::uint64_t seed = 1;
  // data
  std::string task = "copy";  // copy | reverse | pointer | file | features
  std::string data_path;
  std::string eval_path;
  std::string feature_path;
  std::string target_path;
  std::size_t synth_examples = 2000;
  std::size_t synth_vocab = 20;
  std::size_t synth_min_len = 3;
  std::size_t synth_max_len = 10;
  bool lowercase = false;
  // decoding / evaluation
  std::size_t beam_width = 5;
  bool length_normalize = false;
  bool decode_sample = false;
  std::size_t eval_max_len = 0;  // 0 = last phase decode cap + 2
  bool finite_checks = true;

  void validate() const;
};

using ConfigMap = std::map<std::string, std::string>;

// `key = value` lines, UTF-8, '#' starts a comment. Returns the raw pairs.
ConfigMap parse_config_text(const std::string& text);
ConfigMap parse_config_file(const std::string& path);

// Applies entries onto a config. Unknown keys raise ConfigError naming the
// key and the nearest valid one.
void apply_config(const ConfigMap& entries, TrainConfig& cfg);

// Canonical (sorted, round-trippable) serialization of every key.
ConfigMap config_to_map(const TrainConfig& cfg);
std::string config_to_text(const TrainConfig& cfg);

const std::vector<std::string>& config_keys();
std::string nearest_config_key(const std::string& unknown);

// Resolved curriculum: preset or explicit phases, plus the coverage fine-tune
// phase appended when coverage is on.
std::vector<Phase> resolve_phases(const TrainConfig& cfg);

// FNV-1a over a file's bytes; used for run manifests.
std::uint64_t fnv1a64_file(const std::string& path);

}  // namespace acvi
