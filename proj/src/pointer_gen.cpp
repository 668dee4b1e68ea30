#include "acvi/pointer_gen.hpp"

#include "acvi/errors.hpp"

namespace acvi {

template <typename S>
Tensor<S> vocab_distribution(Tensor<S> state_hidden, Tensor<S> context,
                             const OutputVars<S>& p) {
  Tensor<S> joint = concat(std::vector<Tensor<S>>{state_hidden, context});
  Tensor<S> hidden = tanh(add(matvec(p.hidden_w, joint), p.hidden_b));
  Tensor<S> logits = add(matvec(p.vocab_w, hidden), p.vocab_b);
  return masked_softmax(logits, Mask(logits.size(), 1));
}

template <typename S>
Tensor<S> generation_prob(Tensor<S> context, Tensor<S> state_hidden,
                          Tensor<S> input_embedding, const PointerVars<S>& p) {
  Tensor<S> pre = add(add(dot(p.ctx_w, context), dot(p.state_w, state_hidden)),
                      add(dot(p.input_w, input_embedding), p.bias));
  return sigmoid(pre);
}

template <typename S>
Tensor<S> final_distribution(Tensor<S> p_vocab, Tensor<S> p_gen,
                             const AttentionWeights<S>& attn,
                             const std::vector<int>& source_extended_ids,
                             std::size_t n_oov) {
  if (source_extended_ids.size() != attn.weights.size())
    throw ShapeError("final_distribution: " +
                     std::to_string(source_extended_ids.size()) +
                     " extended ids vs attention " +
                     shape_str(attn.weights.shape()));
  const std::size_t total = p_vocab.size() + n_oov;
  Tensor<S> copy_gate = add_scalar(neg(p_gen), S(1));  // 1 - p_gen
  Tensor<S> gen_part = pad_to(scale(p_vocab, p_gen), total, 0);
  Tensor<S> copy_part =
      scatter_add(source_extended_ids, scale(attn.weights, copy_gate), total);
  return add(gen_part, copy_part);
}

template <typename S>
void register_output(ParamStore<S>& store, const std::string& prefix,
                     std::size_t hidden_dim, std::size_t output_hidden_dim,
                     std::size_t vocab_size, const NoiseSource& noise) {
  auto& hw = store.create(prefix + ".hidden_w",
                          {output_hidden_dim, 3 * hidden_dim});
  store.create(prefix + ".hidden_b", {output_hidden_dim});
  auto& vw = store.create(prefix + ".vocab_w", {vocab_size, output_hidden_dim});
  store.create(prefix + ".vocab_b", {vocab_size});
  init_uniform(hw, prefix + ".hidden_w", noise, 0.08);
  init_uniform(vw, prefix + ".vocab_w", noise, 0.08);
}

template <typename S>
void register_pointer(ParamStore<S>& store, const std::string& prefix,
                      std::size_t hidden_dim, std::size_t embed_dim,
                      const NoiseSource& noise) {
  auto& cw = store.create(prefix + ".ctx_w", {2 * hidden_dim});
  auto& sw = store.create(prefix + ".state_w", {hidden_dim});
  auto& iw = store.create(prefix + ".input_w", {embed_dim});
  store.create(prefix + ".bias", {1});
  init_uniform(cw, prefix + ".ctx_w", noise, 0.08);
  init_uniform(sw, prefix + ".state_w", noise, 0.08);
  init_uniform(iw, prefix + ".input_w", noise, 0.08);
}

#define ACVI_INSTANTIATE_PTR(S)                                              \
  template Tensor<S> vocab_distribution(Tensor<S>, Tensor<S>,               \
                                        const OutputVars<S>&);              \
  template Tensor<S> generation_prob(Tensor<S>, Tensor<S>, Tensor<S>,       \
                                     const PointerVars<S>&);                \
  template Tensor<S> final_distribution(Tensor<S>, Tensor<S>,               \
                                        const AttentionWeights<S>&,         \
                                        const std::vector<int>&,            \
                                        std::size_t);                       \
  template void register_output(ParamStore<S>&, const std::string&,         \
                                std::size_t, std::size_t, std::size_t,      \
                                const NoiseSource&);                        \
  template void register_pointer(ParamStore<S>&, const std::string&,        \
                                 std::size_t, std::size_t,                  \
                                 const NoiseSource&);

ACVI_INSTANTIATE_PTR(float)
ACVI_INSTANTIATE_PTR(double)

#undef ACVI_INSTANTIATE_PTR

}  // namespace acvi
