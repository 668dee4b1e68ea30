#include "acvi/attention.hpp"

#include "acvi/errors.hpp"

namespace acvi {

template <typename S>
Tensor<S> attention_scores_projected(Tensor<S> enc_proj, Tensor<S> state_hidden,
                                     const AttentionVars<S>& p,
                                     const Mask& mask,
                                     std::optional<Tensor<S>> coverage) {
  const std::size_t n = enc_proj.value().rows();
  Tensor<S> shift = add(matvec(p.state_w, state_hidden), p.bias);  // [d_a]
  Tensor<S> pre = add_rowvec(enc_proj, shift);                     // [N x d_a]
  if (coverage) {
    if (coverage->size() != n)
      throw ShapeError("attention_scores: coverage size " +
                       shape_str(coverage->shape()) + " vs " +
                       std::to_string(n) + " positions");
    pre = add(pre, outer(*coverage, p.coverage_w));
  }
  Tensor<S> scores = matvec(tanh(pre), p.score_v);  // [N]
  return mask_sentinel(scores, mask);
}

template <typename S>
Tensor<S> coverage_loss(const AttentionWeights<S>& a, Tensor<S> coverage,
                        double lambda) {
  if (lambda < 0)
    throw ConfigError("coverage_loss: lambda must be nonnegative, got " +
                      std::to_string(lambda));
  return mul_scalar(sum(emin(a.weights, coverage)), static_cast<S>(lambda));
}

template <typename S>
void register_attention(ParamStore<S>& store, const std::string& prefix,
                        std::size_t attn_dim, std::size_t hidden_dim,
                        const NoiseSource& noise) {
  auto& enc_w = store.create(prefix + ".enc_w", {attn_dim, 2 * hidden_dim});
  auto& state_w = store.create(prefix + ".state_w", {attn_dim, hidden_dim});
  store.create(prefix + ".bias", {attn_dim});
  auto& score_v = store.create(prefix + ".score_v", {attn_dim});
  // Coverage weight starts (and stays, until the fine-tune phase) at zero so
  // the covered and uncovered score paths coincide bitwise.
  store.create(prefix + ".coverage_w", {attn_dim});
  init_uniform(enc_w, prefix + ".enc_w", noise, 0.08);
  init_uniform(state_w, prefix + ".state_w", noise, 0.08);
  init_uniform(score_v, prefix + ".score_v", noise, 0.08);
}

#define ACVI_INSTANTIATE_ATTENTION(S)                                        \
  template Tensor<S> attention_scores_projected(                            \
      Tensor<S>, Tensor<S>, const AttentionVars<S>&, const Mask&,           \
      std::optional<Tensor<S>>);                                            \
  template Tensor<S> coverage_loss(const AttentionWeights<S>&, Tensor<S>,   \
                                   double);                                 \
  template void register_attention(ParamStore<S>&, const std::string&,      \
                                   std::size_t, std::size_t,                \
                                   const NoiseSource&);

ACVI_INSTANTIATE_ATTENTION(float)
ACVI_INSTANTIATE_ATTENTION(double)

#undef ACVI_INSTANTIATE_ATTENTION

}  // namespace acvi
