#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "acvi/config.hpp"
#include "acvi/data.hpp"
#include "acvi/metrics.hpp"
#include "acvi/model.hpp"
#include "acvi/params.hpp"

namespace acvi {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename S>
struct AdamState {
  ParamStore<S> m;
  ParamStore<S> v;
  std::uint64_t step = 0;  // number of updates applied
};

template <typename S>
AdamState<S> make_adam_state(const ParamStore<S>& params);

// Standard Adam with bias correction. Gradient map must cover every
// parameter; iteration over the (ordered) store fixes the update order.
template <typename S>
void adam_step(ParamStore<S>& params,
               const std::map<std::string, Array<S>>& grads,
               AdamState<S>& state, const AdamConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  std::uint32_t version = 1;
  ConfigMap config;  // canonical TrainConfig block plus global_step
  ParamStore<float> params;
  ParamStore<float> moments;  // Adam m/v under "<name>.m" / "<name>.v"

  std::uint64_t global_step() const;
};

void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

// Vocabulary sidecar (the binary format stores only tensors and config).
void save_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::string& path);

// ---------------------------------------------------------------------------
// Training

struct TraceRow {
  std::uint64_t step = 0;   // 0-based
  std::size_t phase = 0;
  std::string mode;         // sa | heuristic | gumbel
  double loss = 0.0;        // per-token
  double cross_entropy = 0.0;
  double kl = 0.0;
  double coverage = 0.0;
  double accuracy = 0.0;    // teacher-forced on the training batch
};

std::string format_trace_row(const TraceRow& row);

class Trainer {
 public:
  // Return false from the callback to stop after the current step.
  using StepCallback = std::function<bool(const TraceRow&)>;

  Trainer(const TrainConfig& cfg, Dataset dataset,
          const Checkpoint* resume_from = nullptr,
          const Vocabulary* vocab_override = nullptr);

  void run(const StepCallback& on_step = {});
  void run_steps(std::uint64_t count, const StepCallback& on_step = {});

  const std::vector<TraceRow>& trace() const { return trace_; }
  Checkpoint checkpoint() const;
  ParamStore<float>& params() { return params_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Seq2SeqModel<float>& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const Dataset& dataset() const { return dataset_; }

  std::uint64_t current_step() const { return step_; }
  std::uint64_t total_steps() const { return total_steps_; }
  std::uint64_t gumbel_boundary() const { return gumbel_boundary_; }

  // Deterministic teacher-forced token accuracy with mean-mode contexts over
  // the first `max_examples` of the dataset.
  double mean_mode_accuracy(std::size_t max_examples);

 private:
  TraceRow train_one_step();
  const Phase& phase_at(std::uint64_t step, std::size_t* index) const;
  SequencePair batch_example(std::uint64_t step, std::size_t slot,
                             const Phase& phase) const;

  TrainConfig cfg_;
  Dataset dataset_;
  Vocabulary vocab_;
  ModelConfig model_cfg_;
  Seq2SeqModel<float> model_;
  ParamStore<float> params_;
  AdamState<float> adam_;
  NoiseSource noise_;
  std::vector<Phase> phases_;
  std::uint64_t total_steps_ = 0;
  std::uint64_t gumbel_boundary_ = 0;
  std::uint64_t step_ = 0;
  std::vector<TraceRow> trace_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double token_accuracy = 0.0;
  double mean_log_likelihood = 0.0;
  CorpusScores scores;
  std::size_t examples = 0;
};

std::string format_eval_report(const EvalReport& report);

// Beam-decodes every example (mean-mode context unless cfg.decode_sample) and
// scores it; also measures teacher-forced accuracy and log-likelihood.
EvalReport evaluate_model(const TrainConfig& cfg, ParamStore<float>& params,
                          const Vocabulary& vocab, const Dataset& data,
                          std::size_t beam_width, std::size_t max_len);

// Rebuilds the model configuration a TrainConfig implies for a vocabulary.
ModelConfig model_config_from(const TrainConfig& cfg, std::size_t vocab_size,
                              std::size_t feature_dim);

// Renders decoded extended ids as text (EOS and specials stripped).
Tokens render_tokens(const std::vector<int>& ext_ids, const Vocabulary& vocab,
                     const Tokens& oov_tokens);

}  // namespace acvi
