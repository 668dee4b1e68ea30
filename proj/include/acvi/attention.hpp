#pragma once

#include <optional>
#include <string>

#include "acvi/lstm.hpp"
#include "acvi/params.hpp"
#include "acvi/tape.hpp"

namespace acvi {

// Additive attention over source encodings, with the coverage variant that
// adds a learned multiple of the coverage vector inside the tanh.
template <typename S>
struct AttentionVars {
  Tensor<S> enc_w;       // [d_a x 2d]
  Tensor<S> state_w;     // [d_a x d]
  Tensor<S> bias;        // [d_a]
  Tensor<S> score_v;     // [d_a]
  Tensor<S> coverage_w;  // [d_a]
};

template <typename S>
struct AttentionWeights {
  Tensor<S> scores;   // [N], -1e9 sentinel at masked positions
  Tensor<S> weights;  // [N], exact zeros at masked positions
  Mask mask;
};

// The per-example projection of all encodings, computed once per sequence.
template <typename S>
Tensor<S> attention_projection(Tensor<S> encodings, const AttentionVars<S>& p) {
  return matmul_nt(encodings, p.enc_w);  // [N x d_a]
}

// Scores from a precomputed projection. `coverage`, when present, is the
// running sum of past attention distributions ([N]).
template <typename S>
Tensor<S> attention_scores_projected(Tensor<S> enc_proj, Tensor<S> state_hidden,
                                     const AttentionVars<S>& p,
                                     const Mask& mask,
                                     std::optional<Tensor<S>> coverage);

// Convenience form matching the module contract: projects internally.
template <typename S>
Tensor<S> attention_scores(const EncoderOutput<S>& enc,
                           const LSTMState<S>& state,
                           const AttentionVars<S>& p,
                           std::optional<Tensor<S>> coverage = std::nullopt) {
  return attention_scores_projected(attention_projection(enc.encodings, p),
                                    state.hidden, p, enc.mask, coverage);
}

template <typename S>
AttentionWeights<S> attention_weights(Tensor<S> scores, const Mask& mask) {
  return {scores, masked_softmax(scores, mask), mask};
}

// Deterministic soft-attention context: the attention-weighted average of the
// encodings.
template <typename S>
Tensor<S> sa_context(const AttentionWeights<S>& w, const EncoderOutput<S>& enc) {
  return rows_weighted_sum(enc.encodings, w.weights);
}

template <typename S>
Tensor<S> init_coverage(Tape<S>& tape, std::size_t n) {
  return tape.constant(Array<S>({n}));
}

template <typename S>
Tensor<S> update_coverage(Tensor<S> coverage, const AttentionWeights<S>& a) {
  return add(coverage, a.weights);
}

// lambda * sum_i min(a_i, k_i) for the current step.
template <typename S>
Tensor<S> coverage_loss(const AttentionWeights<S>& a, Tensor<S> coverage,
                        double lambda);

template <typename S>
void register_attention(ParamStore<S>& store, const std::string& prefix,
                        std::size_t attn_dim, std::size_t hidden_dim,
                        const NoiseSource& noise);

template <typename S>
AttentionVars<S> bind_attention(const BoundParams<S>& p,
                                const std::string& prefix) {
  return {p[prefix + ".enc_w"], p[prefix + ".state_w"], p[prefix + ".bias"],
          p[prefix + ".score_v"], p[prefix + ".coverage_w"]};
}

}  // namespace acvi
