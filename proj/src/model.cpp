#include "acvi/model.hpp"

#include <algorithm>
#include <cmath>

#include "acvi/errors.hpp"

namespace acvi {

void ModelConfig::validate() const {
  if (hidden_dim == 0 || embed_dim == 0 || attention_dim == 0)
    throw ConfigError("model: hidden_dim, embed_dim and attention_dim must be positive");
  if (vocab_size < Vocabulary::kReservedCount + 1)
    throw ConfigError("model: vocab_size must exceed the reserved entries, got " +
                      std::to_string(vocab_size));
  if (mc_samples == 0) throw ConfigError("model: mc_samples must be >= 1");
  if (pointer && feature_input)
    throw ConfigError("model: the pointer head needs source tokens; disable it "
                      "for feature inputs");
  if (feature_input && feature_dim == 0)
    throw ConfigError("model: feature_dim must be positive for feature inputs");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("model: dropout must lie in [0, 1)");
  if (gumbel_temperature <= 0.0)
    throw ConfigError("model: gumbel_temperature must be positive");
  if (coverage_lambda < 0.0)
    throw ConfigError("model: coverage_lambda must be nonnegative");
}

template <typename S>
void Seq2SeqModel<S>::register_params(ParamStore<S>& store,
                                      const NoiseSource& noise) const {
  // The decoder always consumes token embeddings; feature inputs only swap
  // the encoder side for a learned projection.
  auto& table = store.create("embed.table", {cfg_.vocab_size, cfg_.embed_dim});
  init_uniform(table, "embed.table", noise, 0.1);
  if (cfg_.feature_input) {
    auto& w = store.create("feat.proj_w", {cfg_.embed_dim, cfg_.feature_dim});
    store.create("feat.proj_b", {cfg_.embed_dim});
    init_uniform(w, "feat.proj_w", noise, 0.08);
  }
  register_lstm(store, "enc.fwd", cfg_.embed_dim, cfg_.hidden_dim, noise);
  register_lstm(store, "enc.bwd", cfg_.embed_dim, cfg_.hidden_dim, noise);
  register_lstm(store, "dec", cfg_.embed_dim, cfg_.hidden_dim, noise);
  register_bridge(store, "bridge", cfg_.hidden_dim, noise);
  register_attention(store, "attn", cfg_.attention_dim, cfg_.hidden_dim, noise);
  register_output(store, "out", cfg_.hidden_dim, cfg_.output_hidden(),
                  cfg_.vocab_size, noise);
  if (cfg_.kind == ModelKind::kLatentContext)
    register_variance_head(store, "var", cfg_.hidden_dim, noise);
  if (cfg_.pointer)
    register_pointer(store, "ptr", cfg_.hidden_dim, cfg_.embed_dim, noise);
}

template <typename S>
Tensor<S> Seq2SeqModel<S>::maybe_dropout(Tape<S>& tape, Tensor<S> x,
                                         const ForwardOptions& opts,
                                         const NoiseSource& noise,
                                         std::uint64_t site) const {
  if (!opts.dropout_active || cfg_.dropout <= 0.0) return x;
  const double keep = 1.0 - cfg_.dropout;
  Array<S> mask(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = noise.uniform(Stream::kDropout, opts.addr.step,
                                   opts.addr.slot, (site << 32) | i);
    mask[i] = u < keep ? static_cast<S>(1.0 / keep) : S(0);
  }
  return mul(x, tape.constant(std::move(mask)));
}

template <typename S>
typename Seq2SeqModel<S>::Encoded Seq2SeqModel<S>::encode(
    Tape<S>& tape, const BoundParams<S>& p, const SequencePair& pair,
    const ForwardOptions& opts, const NoiseSource& noise) const {
  if (pair.source_ids.empty()) throw ShapeError("encode: empty source");
  Tensor<S> embeddings = gather_rows(p["embed.table"], pair.source_ids);
  embeddings = maybe_dropout(tape, embeddings, opts, noise, 0);
  Mask mask(pair.source_ids.size(), 1);
  Encoded out;
  out.enc = encode_bilstm(tape, embeddings, mask, bind_lstm(p, "enc.fwd"),
                          bind_lstm(p, "enc.bwd"), cfg_.hidden_dim);
  out.enc_proj = attention_projection(out.enc.encodings, bind_attention(p, "attn"));
  if (cfg_.kind == ModelKind::kLatentContext)
    out.log_vars = variance_head(out.enc.encodings, bind_variance_head(p, "var"),
                                 cfg_.variance_act);
  out.state0 = decoder_init_state(out.enc, bind_bridge(p, "bridge"));
  out.source_ext_ids = pair.source_ext_ids;
  out.n_oov = pair.oov_tokens.size();
  return out;
}

template <typename S>
typename Seq2SeqModel<S>::Encoded Seq2SeqModel<S>::encode_features(
    Tape<S>& tape, const BoundParams<S>& p, const Array<S>& features,
    const ForwardOptions& opts, const NoiseSource& noise) const {
  if (features.rows() == 0) throw ShapeError("encode_features: empty sequence");
  if (features.cols() != cfg_.feature_dim)
    throw ShapeError("encode_features: got " + shape_str(features.shape) +
                     ", expected feature dim " +
                     std::to_string(cfg_.feature_dim));
  Tensor<S> projected = add_rowvec(
      matmul_nt(tape.constant(features), p["feat.proj_w"]), p["feat.proj_b"]);
  projected = maybe_dropout(tape, projected, opts, noise, 0);
  Mask mask(features.rows(), 1);
  Encoded out;
  out.enc = encode_bilstm(tape, projected, mask, bind_lstm(p, "enc.fwd"),
                          bind_lstm(p, "enc.bwd"), cfg_.hidden_dim);
  out.enc_proj = attention_projection(out.enc.encodings, bind_attention(p, "attn"));
  if (cfg_.kind == ModelKind::kLatentContext)
    out.log_vars = variance_head(out.enc.encodings, bind_variance_head(p, "var"),
                                 cfg_.variance_act);
  out.state0 = decoder_init_state(out.enc, bind_bridge(p, "bridge"));
  return out;
}

template <typename S>
typename Seq2SeqModel<S>::SampledContexts Seq2SeqModel<S>::contexts_for_step(
    Tape<S>& tape, const Encoded& enc, const AttentionWeights<S>& attn,
    std::size_t t, std::size_t k_samples, const ForwardOptions& opts,
    const NoiseSource& noise) const {
  SampledContexts out;
  if (cfg_.kind == ModelKind::kSoftAttention) {
    out.contexts.push_back(sa_context(attn, enc.enc));
    return out;
  }
  MixturePosterior<S> post = build_posterior(enc.enc, attn, enc.log_vars);
  for (std::size_t k = 0; k < k_samples; ++k) {
    NoiseAddress addr = opts.addr;
    addr.sample = t * cfg_.mc_samples + k;
    out.contexts.push_back(
        sample_context(tape, post, opts.mode, noise, addr, cfg_.gumbel_temperature)
            .value);
  }
  if (cfg_.kl_mc_estimator) {
    NoiseAddress addr = opts.addr;
    addr.sample = (std::uint64_t(1) << 32) + t * cfg_.mc_samples;
    out.kl = kl_term_mc(tape, post, noise, addr);
  } else {
    out.kl = kl_term(post);
  }
  return out;
}

namespace {

template <typename S>
std::size_t argmax_index(const Array<S>& dist) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.size(); ++i)
    if (dist[i] > dist[best]) best = i;
  return best;
}

}  // namespace

template <typename S>
LossBreakdown<S> Seq2SeqModel<S>::teacher_forced_loss(
    Tape<S>& tape, const BoundParams<S>& p, const SequencePair& pair,
    const ForwardOptions& opts, const NoiseSource& noise) const {
  Encoded enc = encode(tape, p, pair, opts, noise);
  std::vector<int> dec_in{Vocabulary::kBos};
  dec_in.insert(dec_in.end(), pair.target_ids.begin(), pair.target_ids.end());
  std::vector<int> targets =
      cfg_.pointer ? pair.target_ext_ids : pair.target_ids;
  targets.push_back(Vocabulary::kEos);
  return loss_from_encoded(tape, p, enc, dec_in, targets, opts, noise);
}

template <typename S>
LossBreakdown<S> Seq2SeqModel<S>::teacher_forced_loss_features(
    Tape<S>& tape, const BoundParams<S>& p, const Array<S>& features,
    const std::vector<int>& target_ids, const ForwardOptions& opts,
    const NoiseSource& noise) const {
  Encoded enc = encode_features(tape, p, features, opts, noise);
  std::vector<int> dec_in{Vocabulary::kBos};
  dec_in.insert(dec_in.end(), target_ids.begin(), target_ids.end());
  std::vector<int> targets = target_ids;
  targets.push_back(Vocabulary::kEos);
  return loss_from_encoded(tape, p, enc, dec_in, targets, opts, noise);
}

template <typename S>
LossBreakdown<S> Seq2SeqModel<S>::loss_from_encoded(
    Tape<S>& tape, const BoundParams<S>& p, const Encoded& enc,
    const std::vector<int>& dec_in, const std::vector<int>& targets,
    const ForwardOptions& opts, const NoiseSource& noise) const {
  Tensor<S> dec_emb = gather_rows(p["embed.table"], dec_in);
  const AttentionVars<S> attn_vars = bind_attention(p, "attn");
  const LstmCellVars<S> dec_vars = bind_lstm(p, "dec");
  const OutputVars<S> out_vars = bind_output(p, "out");

  LSTMState<S> state = enc.state0;
  std::optional<Tensor<S>> coverage;
  if (opts.coverage_active)
    coverage = init_coverage(tape, enc.enc.mask.size());

  LossBreakdown<S> out;
  Tensor<S> total;
  const std::size_t steps = targets.size();
  const std::size_t k_samples = cfg_.mc_samples;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor<S> x_t = maybe_dropout(tape, row(dec_emb, t), opts, noise, 4 * t + 1);
    state = decoder_step(x_t, state, dec_vars);
    Tensor<S> scores = attention_scores_projected(
        enc.enc_proj, state.hidden, attn_vars, enc.enc.mask, coverage);
    AttentionWeights<S> aw = attention_weights(scores, enc.enc.mask);

    SampledContexts ctx =
        contexts_for_step(tape, enc, aw, t, k_samples, opts, noise);

    StepLoss<S> step_info;
    const std::size_t target = static_cast<std::size_t>(targets[t]);
    Tensor<S> nll_sum;
    for (std::size_t k = 0; k < ctx.contexts.size(); ++k) {
      Tensor<S> c =
          maybe_dropout(tape, ctx.contexts[k], opts, noise, 4 * (t * k_samples + k) + 2);
      Tensor<S> dist = vocab_distribution(state.hidden, c, out_vars);
      if (cfg_.pointer) {
        Tensor<S> p_gen =
            generation_prob(c, state.hidden, x_t, bind_pointer(p, "ptr"));
        dist = final_distribution(dist, p_gen, aw, enc.source_ext_ids, enc.n_oov);
      }
      Tensor<S> ll = log(clamp_min(pick(dist, target),
                                   static_cast<S>(cfg_.prob_floor)));
      step_info.log_likelihood += ll.value()[0];
      if (k == 0)
        step_info.correct = argmax_index(dist.value()) == target;
      nll_sum = nll_sum.defined() ? add(nll_sum, neg(ll)) : neg(ll);
    }
    Tensor<S> ce =
        mul_scalar(nll_sum, static_cast<S>(1.0 / ctx.contexts.size()));
    step_info.log_likelihood /= static_cast<double>(ctx.contexts.size());
    step_info.cross_entropy = ce.value()[0];

    Tensor<S> loss_t = ce;
    if (ctx.kl.defined()) {
      loss_t = elbo_step_loss(neg(ce), ctx.kl, opts.kl_weight);
      step_info.kl = ctx.kl.value()[0];
    }
    if (coverage) {
      Tensor<S> cov_loss = coverage_loss(aw, *coverage, cfg_.coverage_lambda);
      step_info.coverage = cov_loss.value()[0];
      loss_t = add(loss_t, cov_loss);
      coverage = update_coverage(*coverage, aw);
    }
    total = total.defined() ? add(total, loss_t) : loss_t;
    out.correct += step_info.correct ? 1 : 0;
    out.steps.push_back(step_info);
  }
  out.total = total;
  out.tokens = steps;
  return out;
}

template <typename S>
typename Seq2SeqModel<S>::StepResult Seq2SeqModel<S>::decode_step(
    Tape<S>& tape, const BoundParams<S>& p, const Encoded& enc,
    const LSTMState<S>& state, std::optional<Tensor<S>> coverage,
    int prev_base_id, std::size_t t, const ForwardOptions& opts,
    const NoiseSource& noise) const {
  Tensor<S> x_t = row(p["embed.table"], prev_base_id);
  LSTMState<S> next = decoder_step(x_t, state, bind_lstm(p, "dec"));
  Tensor<S> scores =
      attention_scores_projected(enc.enc_proj, next.hidden,
                                 bind_attention(p, "attn"), enc.enc.mask,
                                 coverage);
  AttentionWeights<S> aw = attention_weights(scores, enc.enc.mask);
  SampledContexts ctx = contexts_for_step(tape, enc, aw, t, 1, opts, noise);
  Tensor<S> dist = vocab_distribution(next.hidden, ctx.contexts[0],
                                      bind_output(p, "out"));
  if (cfg_.pointer) {
    Tensor<S> p_gen = generation_prob(ctx.contexts[0], next.hidden, x_t,
                                      bind_pointer(p, "ptr"));
    dist = final_distribution(dist, p_gen, aw, enc.source_ext_ids, enc.n_oov);
  }
  StepResult out;
  out.dist = dist;
  out.state = next;
  out.attn = aw;
  if (coverage) out.coverage_next = update_coverage(*coverage, aw);
  return out;
}

// ---------------------------------------------------------------------------
// DecodeSession

template <typename S>
DecodeSession<S>::DecodeSession(const Seq2SeqModel<S>& model,
                                ParamStore<S>& store, const SequencePair& pair,
                                bool sample_context, std::uint64_t noise_seed,
                                std::uint64_t example_key)
    : model_(model), noise_(noise_seed) {
  opts_.mode = sample_context ? ContextMode::kHard : ContextMode::kMean;
  opts_.addr.step = example_key;
  init(store, &pair, nullptr);
}

template <typename S>
DecodeSession<S>::DecodeSession(const Seq2SeqModel<S>& model,
                                ParamStore<S>& store, const Array<S>& features,
                                bool sample_context, std::uint64_t noise_seed,
                                std::uint64_t example_key)
    : model_(model), noise_(noise_seed) {
  opts_.mode = sample_context ? ContextMode::kHard : ContextMode::kMean;
  opts_.addr.step = example_key;
  init(store, nullptr, &features);
}

template <typename S>
void DecodeSession<S>::init(ParamStore<S>& store, const SequencePair* pair,
                            const Array<S>* features) {
  tape_.grad_enabled = false;
  params_ = bind(store, tape_, /*requires_grad=*/false);
  encoded_ = pair ? model_.encode(tape_, params_, *pair, opts_, noise_)
                  : model_.encode_features(tape_, params_, *features, opts_,
                                           noise_);
}

template <typename S>
std::size_t DecodeSession<S>::extended_size() const {
  return model_.config().vocab_size + encoded_.n_oov;
}

template <typename S>
Tensor<S> DecodeSession<S>::initial_coverage() {
  return init_coverage(tape_, encoded_.enc.mask.size());
}

template <typename S>
typename DecodeSession<S>::Step DecodeSession<S>::step(
    const LSTMState<S>& state, std::optional<Tensor<S>> coverage,
    int prev_base_id, std::size_t t) {
  auto result = model_.decode_step(tape_, params_, encoded_, state, coverage,
                                   prev_base_id, t, opts_, noise_);
  Step out;
  out.dist = &result.dist.value();
  out.state = result.state;
  out.coverage = result.coverage_next;
  return out;
}

template class Seq2SeqModel<float>;
template class Seq2SeqModel<double>;
template class DecodeSession<float>;
template class DecodeSession<double>;

}  // namespace acvi
