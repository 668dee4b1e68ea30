#pragma once

#include <string>

#include "acvi/params.hpp"
#include "acvi/tape.hpp"

namespace acvi {

template <typename S>
struct LSTMState {
  Tensor<S> hidden;
  Tensor<S> cell;
};

template <typename S>
struct LstmCellVars {
  Tensor<S> input_w;  // [4d x in]
  Tensor<S> recur_w;  // [4d x d]
  Tensor<S> bias;     // [4d], gate blocks ordered [input, forget, cand, output]
};

// Per-token source encodings h_i = [forward_i; backward_i].
template <typename S>
struct EncoderOutput {
  Tensor<S> encodings;  // [N x 2d]
  Mask mask;            // 1 = real token
  LSTMState<S> fwd_final;
  LSTMState<S> bwd_final;
};

template <typename S>
LSTMState<S> lstm_zero_state(Tape<S>& tape, std::size_t hidden_dim) {
  return {tape.constant(Array<S>({hidden_dim})),
          tape.constant(Array<S>({hidden_dim}))};
}

template <typename S>
LSTMState<S> lstm_step(Tensor<S> x, const LSTMState<S>& state,
                       const LstmCellVars<S>& p);

// Decoder recurrence consumes only the previous-token embedding; the context
// vector enters downstream through the output layer and the copy gate.
template <typename S>
LSTMState<S> decoder_step(Tensor<S> y_prev_embedding, const LSTMState<S>& state,
                          const LstmCellVars<S>& p) {
  return lstm_step(y_prev_embedding, state, p);
}

template <typename S>
EncoderOutput<S> encode_bilstm(Tape<S>& tape, Tensor<S> embeddings,
                               const Mask& mask, const LstmCellVars<S>& fwd,
                               const LstmCellVars<S>& bwd,
                               std::size_t hidden_dim);

// Learned linear bridge from the final bidirectional states to the decoder's
// initial state.
template <typename S>
struct BridgeVars {
  Tensor<S> hidden_w;  // [d x 2d]
  Tensor<S> hidden_b;  // [d]
  Tensor<S> cell_w;    // [d x 2d]
  Tensor<S> cell_b;    // [d]
};

template <typename S>
LSTMState<S> decoder_init_state(const EncoderOutput<S>& enc,
                                const BridgeVars<S>& bridge);

// Parameter registration under `prefix` (".input_w", ".recur_w", ".bias").
// Weights uniform in [-0.08, 0.08], biases zero except forget gate at +1.
template <typename S>
void register_lstm(ParamStore<S>& store, const std::string& prefix,
                   std::size_t in_dim, std::size_t hidden_dim,
                   const NoiseSource& noise);

template <typename S>
LstmCellVars<S> bind_lstm(const BoundParams<S>& p, const std::string& prefix) {
  return {p[prefix + ".input_w"], p[prefix + ".recur_w"], p[prefix + ".bias"]};
}

template <typename S>
void register_bridge(ParamStore<S>& store, const std::string& prefix,
                     std::size_t hidden_dim, const NoiseSource& noise);

template <typename S>
BridgeVars<S> bind_bridge(const BoundParams<S>& p, const std::string& prefix) {
  return {p[prefix + ".hidden_w"], p[prefix + ".hidden_b"],
          p[prefix + ".cell_w"], p[prefix + ".cell_b"]};
}

}  // namespace acvi
