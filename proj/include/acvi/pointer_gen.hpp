#pragma once

#include <string>
#include <vector>

#include "acvi/attention.hpp"
#include "acvi/params.hpp"
#include "acvi/tape.hpp"

namespace acvi {

// Two-layer vocabulary projection over [state; context].
template <typename S>
struct OutputVars {
  Tensor<S> hidden_w;  // [p x 3d]
  Tensor<S> hidden_b;  // [p]
  Tensor<S> vocab_w;   // [|V| x p]
  Tensor<S> vocab_b;   // [|V|]
};

// Copy gate: sigmoid of a linear function of context, state and the decoder
// input embedding.
template <typename S>
struct PointerVars {
  Tensor<S> ctx_w;    // [2d]
  Tensor<S> state_w;  // [d]
  Tensor<S> input_w;  // [e]
  Tensor<S> bias;     // [1]
};

template <typename S>
Tensor<S> vocab_distribution(Tensor<S> state_hidden, Tensor<S> context,
                             const OutputVars<S>& p);

// Scalar in (0, 1): the probability of generating from the vocabulary rather
// than copying a source token.
template <typename S>
Tensor<S> generation_prob(Tensor<S> context, Tensor<S> state_hidden,
                          Tensor<S> input_embedding, const PointerVars<S>& p);

// Mixes generation and copy mass over the extended vocabulary
// (fixed vocabulary plus this example's source-side OOV slots). Repeated
// source tokens aggregate their attention mass onto one entry.
template <typename S>
Tensor<S> final_distribution(Tensor<S> p_vocab, Tensor<S> p_gen,
                             const AttentionWeights<S>& attn,
                             const std::vector<int>& source_extended_ids,
                             std::size_t n_oov);

template <typename S>
void register_output(ParamStore<S>& store, const std::string& prefix,
                     std::size_t hidden_dim, std::size_t output_hidden_dim,
                     std::size_t vocab_size, const NoiseSource& noise);

template <typename S>
OutputVars<S> bind_output(const BoundParams<S>& p, const std::string& prefix) {
  return {p[prefix + ".hidden_w"], p[prefix + ".hidden_b"],
          p[prefix + ".vocab_w"], p[prefix + ".vocab_b"]};
}

template <typename S>
void register_pointer(ParamStore<S>& store, const std::string& prefix,
                      std::size_t hidden_dim, std::size_t embed_dim,
                      const NoiseSource& noise);

template <typename S>
PointerVars<S> bind_pointer(const BoundParams<S>& p, const std::string& prefix) {
  return {p[prefix + ".ctx_w"], p[prefix + ".state_w"], p[prefix + ".input_w"],
          p[prefix + ".bias"]};
}

}  // namespace acvi
