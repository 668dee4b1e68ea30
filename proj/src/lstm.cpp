#include "acvi/lstm.hpp"

#include "acvi/errors.hpp"

namespace acvi {

template <typename S>
LSTMState<S> lstm_step(Tensor<S> x, const LSTMState<S>& state,
                       const LstmCellVars<S>& p) {
  const std::size_t d = state.hidden.size();
  if (p.recur_w.shape() != Shape{4 * d, d} || p.bias.shape() != Shape{4 * d} ||
      p.input_w.shape()[0] != 4 * d || p.input_w.shape()[1] != x.size())
    throw ShapeError("lstm_step: parameter shapes inconsistent with input " +
                     shape_str(x.shape()) + " and state " +
                     shape_str(state.hidden.shape()));
  Tensor<S> z =
      add(add(matvec(p.input_w, x), matvec(p.recur_w, state.hidden)), p.bias);
  Tensor<S> in_gate = sigmoid(slice(z, 0, d));
  Tensor<S> forget_gate = sigmoid(slice(z, d, d));
  Tensor<S> candidate = tanh(slice(z, 2 * d, d));
  Tensor<S> out_gate = sigmoid(slice(z, 3 * d, d));
  Tensor<S> cell =
      add(mul(forget_gate, state.cell), mul(in_gate, candidate));
  Tensor<S> hidden = mul(out_gate, tanh(cell));
  return {hidden, cell};
}

template <typename S>
EncoderOutput<S> encode_bilstm(Tape<S>& tape, Tensor<S> embeddings,
                               const Mask& mask, const LstmCellVars<S>& fwd,
                               const LstmCellVars<S>& bwd,
                               std::size_t hidden_dim) {
  const std::size_t n = embeddings.value().rows();
  if (n == 0) throw ShapeError("encode_bilstm: empty sequence");
  if (mask.size() != n)
    throw ShapeError("encode_bilstm: mask size " + std::to_string(mask.size()) +
                     " vs " + std::to_string(n) + " tokens");
  bool any = false;
  for (auto m : mask) any = any || m;
  if (!any) throw MaskError("encode_bilstm: all positions masked");

  // Padded positions pass the state through untouched, so padding never leaks
  // into real positions (the backward pass starts inside the padding) and the
  // final states belong to the last real token.
  std::vector<LSTMState<S>> fwd_states(n), bwd_states(n);
  LSTMState<S> s = lstm_zero_state(tape, hidden_dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) s = lstm_step(row(embeddings, i), s, fwd);
    fwd_states[i] = s;
  }
  LSTMState<S> fwd_final = s;
  s = lstm_zero_state(tape, hidden_dim);
  for (std::size_t i = n; i-- > 0;) {
    if (mask[i]) s = lstm_step(row(embeddings, i), s, bwd);
    bwd_states[i] = s;
  }
  LSTMState<S> bwd_final = s;

  std::vector<Tensor<S>> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    rows.push_back(
        concat(std::vector<Tensor<S>>{fwd_states[i].hidden, bwd_states[i].hidden}));
  return {stack_rows(rows), mask, fwd_final, bwd_final};
}

template <typename S>
LSTMState<S> decoder_init_state(const EncoderOutput<S>& enc,
                                const BridgeVars<S>& bridge) {
  Tensor<S> h = concat(
      std::vector<Tensor<S>>{enc.fwd_final.hidden, enc.bwd_final.hidden});
  Tensor<S> c =
      concat(std::vector<Tensor<S>>{enc.fwd_final.cell, enc.bwd_final.cell});
  return {add(matvec(bridge.hidden_w, h), bridge.hidden_b),
          add(matvec(bridge.cell_w, c), bridge.cell_b)};
}

template <typename S>
void register_lstm(ParamStore<S>& store, const std::string& prefix,
                   std::size_t in_dim, std::size_t hidden_dim,
                   const NoiseSource& noise) {
  auto& input_w = store.create(prefix + ".input_w", {4 * hidden_dim, in_dim});
  auto& recur_w = store.create(prefix + ".recur_w", {4 * hidden_dim, hidden_dim});
  auto& bias = store.create(prefix + ".bias", {4 * hidden_dim});
  init_uniform(input_w, prefix + ".input_w", noise, 0.08);
  init_uniform(recur_w, prefix + ".recur_w", noise, 0.08);
  for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) bias[j] = S(1);
}

template <typename S>
void register_bridge(ParamStore<S>& store, const std::string& prefix,
                     std::size_t hidden_dim, const NoiseSource& noise) {
  auto& hw = store.create(prefix + ".hidden_w", {hidden_dim, 2 * hidden_dim});
  auto& cw = store.create(prefix + ".cell_w", {hidden_dim, 2 * hidden_dim});
  store.create(prefix + ".hidden_b", {hidden_dim});
  store.create(prefix + ".cell_b", {hidden_dim});
  init_uniform(hw, prefix + ".hidden_w", noise, 0.08);
  init_uniform(cw, prefix + ".cell_w", noise, 0.08);
}

#define ACVI_INSTANTIATE_LSTM(S)                                              \
  template LSTMState<S> lstm_step(Tensor<S>, const LSTMState<S>&,            \
                                  const LstmCellVars<S>&);                   \
  template EncoderOutput<S> encode_bilstm(Tape<S>&, Tensor<S>, const Mask&,  \
                                          const LstmCellVars<S>&,            \
                                          const LstmCellVars<S>&,            \
                                          std::size_t);                      \
  template LSTMState<S> decoder_init_state(const EncoderOutput<S>&,          \
                                           const BridgeVars<S>&);            \
  template void register_lstm(ParamStore<S>&, const std::string&,            \
                              std::size_t, std::size_t, const NoiseSource&); \
  template void register_bridge(ParamStore<S>&, const std::string&,          \
                                std::size_t, const NoiseSource&);

ACVI_INSTANTIATE_LSTM(float)
ACVI_INSTANTIATE_LSTM(double)

#undef ACVI_INSTANTIATE_LSTM

}  // namespace acvi
