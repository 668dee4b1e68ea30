#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "acvi/attention.hpp"
#include "acvi/data.hpp"
#include "acvi/lstm.hpp"
#include "acvi/mixture_context.hpp"
#include "acvi/params.hpp"
#include "acvi/pointer_gen.hpp"
#include "acvi/vocab.hpp"

namespace acvi {

enum class ModelKind { kSoftAttention, kLatentContext };

struct ModelConfig {
  ModelKind kind = ModelKind::kSoftAttention;
  bool pointer = false;
  bool coverage = false;
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t attention_dim = 64;
  std::size_t output_hidden_dim = 0;  // 0 = hidden_dim
  std::size_t vocab_size = 0;         // actual |V|, reserved entries included
  std::size_t mc_samples = 1;
  VarianceActivation variance_act = VarianceActivation::kRelu;
  double gumbel_temperature = 0.5;
  double coverage_lambda = 1.0;
  double dropout = 0.0;
  bool kl_mc_estimator = false;
  bool feature_input = false;
  std::size_t feature_dim = 0;
  double prob_floor = 1e-12;

  std::size_t output_hidden() const {
    return output_hidden_dim ? output_hidden_dim : hidden_dim;
  }
  void validate() const;
};

// Per-call forward options; the training schedule lives in the trainer.
struct ForwardOptions {
  ContextMode mode = ContextMode::kMean;
  double kl_weight = 1.0;
  bool coverage_active = false;
  bool dropout_active = false;
  NoiseAddress addr{};  // step = global step, slot = batch slot
};

template <typename S>
struct StepLoss {
  double cross_entropy = 0.0;
  double kl = 0.0;
  double coverage = 0.0;
  double log_likelihood = 0.0;  // MC average of log P(target)
  bool correct = false;         // argmax of the scored distribution == target
};

template <typename S>
struct LossBreakdown {
  Tensor<S> total;  // scalar graph node: sum over steps
  std::vector<StepLoss<S>> steps;
  std::size_t tokens = 0;
  std::size_t correct = 0;
};

template <typename S>
class Seq2SeqModel {
 public:
  explicit Seq2SeqModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  const ModelConfig& config() const { return cfg_; }

  // Creates and initializes every parameter this configuration trains.
  void register_params(ParamStore<S>& store, const NoiseSource& noise) const;

  struct Encoded {
    EncoderOutput<S> enc;
    Tensor<S> enc_proj;   // [N x d_a]
    Tensor<S> log_vars;   // latent-context kind only
    LSTMState<S> state0;
    std::vector<int> source_ext_ids;
    std::size_t n_oov = 0;
  };

  Encoded encode(Tape<S>& tape, const BoundParams<S>& p,
                 const SequencePair& pair, const ForwardOptions& opts,
                 const NoiseSource& noise) const;
  Encoded encode_features(Tape<S>& tape, const BoundParams<S>& p,
                          const Array<S>& features, const ForwardOptions& opts,
                          const NoiseSource& noise) const;

  // Teacher-forced loss for one example. Target tokens are taken from the
  // pair (EOS appended internally).
  LossBreakdown<S> teacher_forced_loss(Tape<S>& tape, const BoundParams<S>& p,
                                       const SequencePair& pair,
                                       const ForwardOptions& opts,
                                       const NoiseSource& noise) const;
  // Feature-sequence variant; targets are base vocabulary ids (no pointer).
  LossBreakdown<S> teacher_forced_loss_features(
      Tape<S>& tape, const BoundParams<S>& p, const Array<S>& features,
      const std::vector<int>& target_ids, const ForwardOptions& opts,
      const NoiseSource& noise) const;

  // One decoding step over the extended vocabulary. `prev_base_id` is the
  // base-vocabulary id of the previous output token (extended ids map to UNK).
  struct StepResult {
    Tensor<S> dist;  // [V + n_oov]
    LSTMState<S> state;
    AttentionWeights<S> attn;
    Tensor<S> coverage_next;  // defined iff coverage was passed
  };
  StepResult decode_step(Tape<S>& tape, const BoundParams<S>& p,
                         const Encoded& enc, const LSTMState<S>& state,
                         std::optional<Tensor<S>> coverage, int prev_base_id,
                         std::size_t t, const ForwardOptions& opts,
                         const NoiseSource& noise) const;

 private:
  struct SampledContexts {
    std::vector<Tensor<S>> contexts;  // K entries
    Tensor<S> kl;                     // defined for latent kind
  };
  SampledContexts contexts_for_step(Tape<S>& tape, const Encoded& enc,
                                    const AttentionWeights<S>& attn,
                                    std::size_t t, std::size_t k_samples,
                                    const ForwardOptions& opts,
                                    const NoiseSource& noise) const;
  LossBreakdown<S> loss_from_encoded(Tape<S>& tape, const BoundParams<S>& p,
                                     const Encoded& enc,
                                     const std::vector<int>& dec_in,
                                     const std::vector<int>& targets,
                                     const ForwardOptions& opts,
                                     const NoiseSource& noise) const;
  Tensor<S> maybe_dropout(Tape<S>& tape, Tensor<S> x,
                          const ForwardOptions& opts, const NoiseSource& noise,
                          std::uint64_t site) const;

  ModelConfig cfg_;
};

// Decoding facade: owns a no-grad tape with parameters and encodings bound
// once; each step appends a handful of nodes.
template <typename S>
class DecodeSession {
 public:
  using Scalar = S;

  DecodeSession(const Seq2SeqModel<S>& model, ParamStore<S>& store,
                const SequencePair& pair, bool sample_context = false,
                std::uint64_t noise_seed = 0, std::uint64_t example_key = 0);
  DecodeSession(const Seq2SeqModel<S>& model, ParamStore<S>& store,
                const Array<S>& features, bool sample_context = false,
                std::uint64_t noise_seed = 0, std::uint64_t example_key = 0);

  std::size_t extended_size() const;
  std::size_t n_oov() const { return encoded_.n_oov; }
  bool coverage_enabled() const { return model_.config().coverage; }
  const ModelConfig& config() const { return model_.config(); }

  LSTMState<S> initial_state() const { return encoded_.state0; }
  Tensor<S> initial_coverage();

  struct Step {
    const Array<S>* dist;  // borrowed from the session tape
    LSTMState<S> state;
    Tensor<S> coverage;
  };
  Step step(const LSTMState<S>& state, std::optional<Tensor<S>> coverage,
            int prev_base_id, std::size_t t);

 private:
  void init(ParamStore<S>& store, const SequencePair* pair,
            const Array<S>* features);
  const Seq2SeqModel<S>& model_;
  Tape<S> tape_;
  BoundParams<S> params_;
  typename Seq2SeqModel<S>::Encoded encoded_;
  ForwardOptions opts_;
  NoiseSource noise_;
};

}  // namespace acvi
