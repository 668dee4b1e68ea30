#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "acvi/attention.hpp"
#include "acvi/lstm.hpp"
#include "acvi/params.hpp"
#include "acvi/rng.hpp"
#include "acvi/tape.hpp"

namespace acvi {

// Context-vector sampling strategy.
//   kMean      deterministic mixture mean; coincides with soft attention
//   kHeuristic attention-weighted average of per-component Gaussian samples
//   kGumbel    relaxed categorical assignment over the component samples
//   kHard      exact categorical draw (evaluation only, no gradient contract)
enum class ContextMode { kMean, kHeuristic, kGumbel, kHard };

enum class VarianceActivation { kRelu, kSoftplus };

template <typename S>
struct VarianceHeadVars {
  Tensor<S> weight;  // [2d x 2d]
  Tensor<S> bias;    // [2d]
};

// Per-component log-variances from the encodings. With the ReLU activation
// the output is entrywise >= 0, i.e. every component variance is >= 1; the
// softplus variant (log sigma^2 = softplus(Wh + b) - log 2) is the
// unconstrained ablation, zero at a zero pre-activation.
template <typename S>
Tensor<S> variance_head(Tensor<S> encodings, const VarianceHeadVars<S>& p,
                        VarianceActivation act = VarianceActivation::kRelu);

// Finite-mixture posterior over the step's context vector: component means
// are the encodings, mixing weights are the attention distribution.
template <typename S>
struct MixturePosterior {
  Tensor<S> means;     // [N x 2d]
  Tensor<S> log_vars;  // [N x 2d]
  Tensor<S> weights;   // [N]
  Mask mask;
};

template <typename S>
MixturePosterior<S> build_posterior(const EncoderOutput<S>& enc,
                                    const AttentionWeights<S>& attn,
                                    Tensor<S> log_vars);

// Convenience form computing the variance head internally. Model code caches
// the head output per example instead, since it does not depend on the step.
template <typename S>
MixturePosterior<S> build_posterior(const EncoderOutput<S>& enc,
                                    const AttentionWeights<S>& attn,
                                    const VarianceHeadVars<S>& var_params,
                                    VarianceActivation act =
                                        VarianceActivation::kRelu) {
  return build_posterior(enc, attn, variance_head(enc.encodings, var_params, act));
}

// mean + exp(log_var / 2) * epsilon, elementwise; shapes must agree.
template <typename S>
Tensor<S> gaussian_reparam_sample(Tensor<S> mean, Tensor<S> log_var,
                                  Tensor<S> epsilon);

// softmax((log max(w, 1e-20) + g) / temperature) restricted to the mask.
template <typename S>
Tensor<S> gumbel_softmax_sample(Tensor<S> weights, double temperature,
                                Tensor<S> gumbels, const Mask& mask);

// Where a draw lives in the noise stream: training step, batch slot, and the
// Monte Carlo sample index. Component and coordinate are appended internally.
struct NoiseAddress {
  std::uint64_t step = 0;
  std::uint64_t slot = 0;
  std::uint64_t sample = 0;
};

template <typename S>
struct ContextSample {
  Tensor<S> value;       // [2d]
  ContextMode mode;
  Tensor<S> assignment;  // on the simplex for kGumbel, one-hot for kHard
};

template <typename S>
ContextSample<S> sample_context(Tape<S>& tape, const MixturePosterior<S>& post,
                                ContextMode mode, const NoiseSource& noise,
                                const NoiseAddress& addr, double temperature);

// KL[posterior || N(0, I)] by the mixture convexity upper bound:
// sum_i w_i * KL[N(h_i, diag sigma_i^2) || N(0, I)].
template <typename S>
Tensor<S> kl_term(const MixturePosterior<S>& post);

// Single-sample Monte Carlo estimate log q(c) - log p(c) at a reparameterized
// mixture draw; diagnostic alternative behind the kl_estimator config switch.
template <typename S>
Tensor<S> kl_term_mc(Tape<S>& tape, const MixturePosterior<S>& post,
                     const NoiseSource& noise, const NoiseAddress& addr);

// Per-step training objective contribution: -log_likelihood + w * kl.
template <typename S>
Tensor<S> elbo_step_loss(Tensor<S> log_likelihood, Tensor<S> kl,
                         double kl_weight);

template <typename S>
void register_variance_head(ParamStore<S>& store, const std::string& prefix,
                            std::size_t hidden_dim, const NoiseSource& noise);

template <typename S>
VarianceHeadVars<S> bind_variance_head(const BoundParams<S>& p,
                                       const std::string& prefix) {
  return {p[prefix + ".weight"], p[prefix + ".bias"]};
}

}  // namespace acvi
