#include "acvi/mixture_context.hpp"

#include <cmath>

#include "acvi/errors.hpp"

namespace acvi {

namespace {
constexpr double kLogTwoPi = 1.8378770664093453;
constexpr double kWeightFloor = 1e-20;
}  // namespace

template <typename S>
Tensor<S> variance_head(Tensor<S> encodings, const VarianceHeadVars<S>& p,
                        VarianceActivation act) {
  Tensor<S> pre = add_rowvec(matmul_nt(encodings, p.weight), p.bias);
  if (act == VarianceActivation::kRelu) return relu(pre);
  // softplus shifted so a zero pre-activation still gives unit variance
  return add_scalar(softplus(pre), static_cast<S>(-std::log(2.0)));
}

template <typename S>
MixturePosterior<S> build_posterior(const EncoderOutput<S>& enc,
                                    const AttentionWeights<S>& attn,
                                    Tensor<S> log_vars) {
  if (enc.encodings.shape() != log_vars.shape())
    throw ShapeError("build_posterior: encodings " +
                     shape_str(enc.encodings.shape()) + " vs log_vars " +
                     shape_str(log_vars.shape()));
  if (attn.weights.size() != enc.encodings.value().rows())
    throw ShapeError("build_posterior: " + shape_str(attn.weights.shape()) +
                     " weights for " +
                     std::to_string(enc.encodings.value().rows()) +
                     " components");
  return {enc.encodings, log_vars, attn.weights, enc.mask};
}

template <typename S>
Tensor<S> gaussian_reparam_sample(Tensor<S> mean, Tensor<S> log_var,
                                  Tensor<S> epsilon) {
  Tensor<S> sigma = exp(mul_scalar(log_var, S(0.5)));
  return add(mean, mul(sigma, epsilon));
}

template <typename S>
Tensor<S> gumbel_softmax_sample(Tensor<S> weights, double temperature,
                                Tensor<S> gumbels, const Mask& mask) {
  if (temperature <= 0)
    throw ConfigError("gumbel_softmax_sample: temperature must be positive, got " +
                      std::to_string(temperature));
  Tensor<S> logits =
      add(log(clamp_min(weights, static_cast<S>(kWeightFloor))), gumbels);
  return masked_softmax(mul_scalar(logits, static_cast<S>(1.0 / temperature)),
                        mask);
}

namespace {

// Per-component Gaussian samples, one reparameterized draw per (component,
// coordinate), addressed by (step, slot, sample index).
template <typename S>
Tensor<S> component_samples(Tape<S>& tape, const MixturePosterior<S>& post,
                            const NoiseSource& noise,
                            const NoiseAddress& addr) {
  const std::size_t n = post.means.value().rows();
  const std::size_t d = post.means.value().cols();
  Array<S> eps({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      eps.at(i, j) = static_cast<S>(noise.gaussian(
          Stream::kGaussian, addr.step, addr.slot, (addr.sample * n + i) * d + j));
  return gaussian_reparam_sample(post.means, post.log_vars,
                                 tape.constant(std::move(eps)));
}

}  // namespace

template <typename S>
ContextSample<S> sample_context(Tape<S>& tape, const MixturePosterior<S>& post,
                                ContextMode mode, const NoiseSource& noise,
                                const NoiseAddress& addr, double temperature) {
  switch (mode) {
    case ContextMode::kMean:
      return {rows_weighted_sum(post.means, post.weights), mode, Tensor<S>()};
    case ContextMode::kHeuristic: {
      Tensor<S> samples = component_samples(tape, post, noise, addr);
      return {rows_weighted_sum(samples, post.weights), mode, Tensor<S>()};
    }
    case ContextMode::kGumbel: {
      const std::size_t n = post.weights.size();
      Array<S> g({n});
      for (std::size_t i = 0; i < n; ++i)
        g[i] = static_cast<S>(noise.gumbel(Stream::kGumbel, addr.step,
                                           addr.slot, addr.sample * n + i));
      Tensor<S> z = gumbel_softmax_sample(post.weights, temperature,
                                          tape.constant(std::move(g)), post.mask);
      Tensor<S> samples = component_samples(tape, post, noise, addr);
      return {rows_weighted_sum(samples, z), mode, z};
    }
    case ContextMode::kHard: {
      // Exact categorical draw by inverse CDF over the unmasked weights.
      const Array<S>& w = post.weights.value();
      const double u =
          noise.uniform(Stream::kCategorical, addr.step, addr.slot, addr.sample);
      std::size_t pick_idx = 0;
      bool found = false;
      double cum = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (!post.mask[i]) continue;
        cum += static_cast<double>(w[i]);
        pick_idx = i;
        if (u <= cum) {
          found = true;
          break;
        }
      }
      if (!found) {
        // u landed in the rounding sliver past the last unmasked weight.
        for (std::size_t i = w.size(); i-- > 0;)
          if (post.mask[i]) {
            pick_idx = i;
            break;
          }
      }
      Tensor<S> samples = component_samples(tape, post, noise, addr);
      Array<S> onehot({w.size()});
      onehot[pick_idx] = S(1);
      return {row(samples, pick_idx), mode, tape.constant(std::move(onehot))};
    }
  }
  throw ConfigError("sample_context: unknown mode");
}

template <typename S>
Tensor<S> kl_term(const MixturePosterior<S>& post) {
  // KL[N(h, diag s^2) || N(0, I)] = 0.5 * sum_j (s_j^2 + h_j^2 - 1 - log s_j^2)
  Tensor<S> per_coord =
      sub(add(exp(post.log_vars), mul(post.means, post.means)),
          add_scalar(post.log_vars, S(1)));
  Tensor<S> per_component = mul_scalar(row_sum(per_coord), S(0.5));
  return dot(post.weights, per_component);
}

template <typename S>
Tensor<S> kl_term_mc(Tape<S>& tape, const MixturePosterior<S>& post,
                     const NoiseSource& noise, const NoiseAddress& addr) {
  ContextSample<S> draw = sample_context(tape, post, ContextMode::kHard, noise,
                                         addr, /*temperature=*/1.0);
  Tensor<S> c = draw.value;
  const std::size_t dim = c.size();
  // log q(c): logsumexp_i [ log w_i + log N(c | h_i, diag exp(log_vars_i)) ]
  Tensor<S> diff = add_rowvec(neg(post.means), c);  // c - h_i per row
  Tensor<S> quad = row_sum(mul(mul(diff, diff), exp(neg(post.log_vars))));
  Tensor<S> comp_ll = mul_scalar(
      add(add_scalar(row_sum(post.log_vars), S(dim * kLogTwoPi)), quad),
      S(-0.5));
  Tensor<S> logits =
      add(log(clamp_min(post.weights, static_cast<S>(kWeightFloor))), comp_ll);
  Tensor<S> log_q = masked_logsumexp(logits, post.mask);
  Tensor<S> log_p = mul_scalar(
      add_scalar(dot(c, c), S(dim * kLogTwoPi)), S(-0.5));
  return sub(log_q, log_p);
}

template <typename S>
Tensor<S> elbo_step_loss(Tensor<S> log_likelihood, Tensor<S> kl,
                         double kl_weight) {
  if (kl_weight < 0)
    throw ConfigError("elbo_step_loss: kl_weight must be nonnegative, got " +
                      std::to_string(kl_weight));
  return add(neg(log_likelihood), mul_scalar(kl, static_cast<S>(kl_weight)));
}

template <typename S>
void register_variance_head(ParamStore<S>& store, const std::string& prefix,
                            std::size_t hidden_dim, const NoiseSource& noise) {
  auto& w = store.create(prefix + ".weight", {2 * hidden_dim, 2 * hidden_dim});
  store.create(prefix + ".bias", {2 * hidden_dim});
  init_uniform(w, prefix + ".weight", noise, 0.08);
}

#define ACVI_INSTANTIATE_MIX(S)                                               \
  template Tensor<S> variance_head(Tensor<S>, const VarianceHeadVars<S>&,    \
                                   VarianceActivation);                      \
  template MixturePosterior<S> build_posterior(                              \
      const EncoderOutput<S>&, const AttentionWeights<S>&, Tensor<S>);       \
  template Tensor<S> gaussian_reparam_sample(Tensor<S>, Tensor<S>,           \
                                             Tensor<S>);                     \
  template Tensor<S> gumbel_softmax_sample(Tensor<S>, double, Tensor<S>,     \
                                           const Mask&);                     \
  template ContextSample<S> sample_context(                                  \
      Tape<S>&, const MixturePosterior<S>&, ContextMode,                     \
      const NoiseSource&, const NoiseAddress&, double);                      \
  template Tensor<S> kl_term(const MixturePosterior<S>&);                    \
  template Tensor<S> kl_term_mc(Tape<S>&, const MixturePosterior<S>&,        \
                                const NoiseSource&, const NoiseAddress&);    \
  template Tensor<S> elbo_step_loss(Tensor<S>, Tensor<S>, double);           \
  template void register_variance_head(ParamStore<S>&, const std::string&,   \
                                       std::size_t, const NoiseSource&);

ACVI_INSTANTIATE_MIX(float)
ACVI_INSTANTIATE_MIX(double)

#undef ACVI_INSTANTIATE_MIX

}  // namespace acvi
