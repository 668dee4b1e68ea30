#include "acvi/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "acvi/decode.hpp"
#include "acvi/errors.hpp"

namespace acvi {

// ---------------------------------------------------------------------------
// Adam

template <typename S>
AdamState<S> make_adam_state(const ParamStore<S>& params) {
  AdamState<S> state;
  for (const auto& [name, value] : params) {
    state.m.create(name, value.shape);
    state.v.create(name, value.shape);
  }
  return state;
}

template <typename S>
void adam_step(ParamStore<S>& params,
               const std::map<std::string, Array<S>>& grads,
               AdamState<S>& state, const AdamConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (auto& [name, value] : params) {
    auto it = grads.find(name);
    if (it == grads.end())
      throw ConfigError("adam_step: missing gradient for " + name);
    const Array<S>& g = it->second;
    if (g.shape != value.shape)
      throw ShapeError("adam_step: gradient shape " + shape_str(g.shape) +
                       " vs parameter " + shape_str(value.shape) + " for " +
                       name);
    Array<S>& m = state.m.get(name);
    Array<S>& v = state.v.get(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = static_cast<S>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
      v[i] = static_cast<S>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] = static_cast<S>(
          value[i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

template AdamState<float> make_adam_state(const ParamStore<float>&);
template AdamState<double> make_adam_state(const ParamStore<double>&);
template void adam_step(ParamStore<float>&,
                        const std::map<std::string, Array<float>>&,
                        AdamState<float>&, const AdamConfig&);
template void adam_step(ParamStore<double>&,
                        const std::map<std::string, Array<double>>&,
                        AdamState<double>&, const AdamConfig&);

// ---------------------------------------------------------------------------
// Checkpoint format: magic "ACVI", u32 version, length-prefixed canonical
// config block, then parameters and optimizer moments as named float32
// tensors. Everything little-endian.

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;
  explicit Reader(const std::string& d) : data(d) {}
  void need(std::size_t n, const char* what) {
    if (pos + n > data.size())
      throw FormatError(std::string("checkpoint: truncated while reading ") +
                        what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string out = data.substr(pos, n);
    pos += n;
    return out;
  }
};

void put_store(std::string& out, const ParamStore<float>& store) {
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, value] : store) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(value.shape.size()));
    for (std::size_t d : value.shape)
      put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : value.data) put_f32(out, f);
  }
}

ParamStore<float> read_store(Reader& r) {
  ParamStore<float> store;
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    const std::string name = r.bytes(name_len, "name");
    const std::uint32_t rank = r.u32("rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("extent"));
    Array<float>& a = store.create(name, shape);
    for (std::size_t j = 0; j < a.size(); ++j) a[j] = r.f32("value");
  }
  return store;
}

constexpr char kMagic[4] = {'A', 'C', 'V', 'I'};

}  // namespace

std::uint64_t Checkpoint::global_step() const {
  auto it = config.find("global_step");
  return it == config.end() ? 0 : std::stoull(it->second);
}

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, cp.version);
  std::string block;
  for (const auto& [key, value] : cp.config) block += key + "=" + value + "\n";
  put_u32(out, static_cast<std::uint32_t>(block.size()));
  out += block;
  put_store(out, cp.params);
  put_store(out, cp.moments);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write checkpoint: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint: " + path);
  std::string data((std::istreambuf_iterator<char>(file)),
                   std::istreambuf_iterator<char>());
  Reader r(data);
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic (not an ACVI checkpoint)");
  Checkpoint cp;
  cp.version = r.u32("version");
  if (cp.version != 1)
    throw FormatError("checkpoint: unsupported format version " +
                      std::to_string(cp.version));
  const std::uint32_t block_len = r.u32("config length");
  const std::string block = r.bytes(block_len, "config block");
  cp.config = parse_config_text(block);
  cp.params = read_store(r);
  cp.moments = read_store(r);
  if (r.pos != data.size())
    throw FormatError("checkpoint: trailing bytes after moments");
  return cp;
}

void save_vocab(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary: " + path);
  for (const auto& token : vocab.tokens()) out << token << '\n';
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary: " + path);
  Tokens tokens;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) tokens.push_back(line);
  return Vocabulary::from_tokens(tokens);
}

// ---------------------------------------------------------------------------
// Trainer

std::string format_trace_row(const TraceRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "step=%llu phase=%zu mode=%s loss=%.9e ce=%.9e kl=%.9e "
                "cov=%.9e acc=%.6f",
                static_cast<unsigned long long>(row.step), row.phase,
                row.mode.c_str(), row.loss, row.cross_entropy, row.kl,
                row.coverage, row.accuracy);
  return buf;
}

ModelConfig model_config_from(const TrainConfig& cfg, std::size_t vocab_size,
                              std::size_t feature_dim) {
  ModelConfig out;
  out.kind = cfg.model == "acvi" ? ModelKind::kLatentContext
                                 : ModelKind::kSoftAttention;
  out.pointer = cfg.pointer;
  out.coverage = cfg.coverage;
  out.hidden_dim = cfg.hidden_dim;
  out.embed_dim = cfg.embed_dim;
  out.attention_dim = cfg.attention_dim;
  out.output_hidden_dim = cfg.output_hidden_dim;
  out.vocab_size = vocab_size;
  out.mc_samples = cfg.mc_samples;
  out.variance_act = cfg.variance_head == "softplus"
                         ? VarianceActivation::kSoftplus
                         : VarianceActivation::kRelu;
  out.gumbel_temperature = cfg.gumbel_temperature;
  out.coverage_lambda = cfg.coverage_lambda;
  out.dropout = cfg.dropout;
  out.kl_mc_estimator = cfg.kl_estimator == "mc";
  out.feature_input = cfg.task == "features";
  out.feature_dim = feature_dim;
  return out;
}

Trainer::Trainer(const TrainConfig& cfg, Dataset dataset,
                 const Checkpoint* resume_from,
                 const Vocabulary* vocab_override)
    : cfg_(cfg),
      dataset_(std::move(dataset)),
      vocab_(vocab_override
                 ? *vocab_override
                 : (dataset_.feature_mode
                        ? [&] {
                            std::vector<TokenPair> pairs;
                            for (const auto& ex : dataset_.features)
                              pairs.push_back({ex.target_tokens,
                                               ex.target_tokens});
                            return Vocabulary::build(pairs, cfg.vocab_size);
                          }()
                        : Vocabulary::build(dataset_.pairs, cfg.vocab_size))),
      model_cfg_(model_config_from(cfg, vocab_.size(), dataset_.feature_dim())),
      model_(model_cfg_),
      noise_(cfg.seed),
      phases_(resolve_phases(cfg)) {
  cfg_.validate();
  if (dataset_.size() == 0) throw ConfigError("trainer: empty dataset");
  for (const Phase& p : phases_) total_steps_ += p.steps;
  gumbel_boundary_ = static_cast<std::uint64_t>(
      std::floor((1.0 - cfg_.gumbel_fraction) * double(total_steps_)));
  if (resume_from) {
    params_ = resume_from->params;
    adam_ = make_adam_state(params_);
    for (auto& [name, value] : params_) {
      adam_.m.set(name, resume_from->moments.get(name + ".m"));
      adam_.v.set(name, resume_from->moments.get(name + ".v"));
    }
    step_ = resume_from->global_step();
    adam_.step = step_;
    if (params_.get("embed.table").rows() != vocab_.size())
      throw ConfigError(
          "trainer: checkpoint embedding rows (" +
          std::to_string(params_.get("embed.table").rows()) +
          ") do not match the vocabulary (" + std::to_string(vocab_.size()) +
          ")");
  } else {
    model_.register_params(params_, noise_);
    adam_ = make_adam_state(params_);
  }
}

const Phase& Trainer::phase_at(std::uint64_t step, std::size_t* index) const {
  std::uint64_t cum = 0;
  for (std::size_t i = 0; i < phases_.size(); ++i) {
    cum += phases_[i].steps;
    if (step < cum) {
      if (index) *index = i;
      return phases_[i];
    }
  }
  if (index) *index = phases_.size() - 1;
  return phases_.back();
}

SequencePair Trainer::batch_example(std::uint64_t step, std::size_t slot,
                                    const Phase& phase) const {
  const std::size_t idx = static_cast<std::size_t>(
      noise_.uniform_int(dataset_.size(), Stream::kBatch, step, slot));
  const TokenPair& raw = dataset_.pairs[idx];
  Tokens src(raw.first.begin(),
             raw.first.begin() +
                 std::min(raw.first.size(), phase.max_encode));
  Tokens tgt(raw.second.begin(),
             raw.second.begin() +
                 std::min(raw.second.size(), phase.max_decode));
  return encode_pair(src, tgt, vocab_);
}

TraceRow Trainer::train_one_step() {
  std::size_t phase_idx = 0;
  const Phase& phase = phase_at(step_, &phase_idx);

  ForwardOptions opts;
  opts.coverage_active = phase.coverage;
  opts.dropout_active = cfg_.dropout > 0.0;
  opts.kl_weight =
      cfg_.kl_warmup_steps > 0
          ? cfg_.kl_weight * std::min(1.0, double(step_ + 1) /
                                               double(cfg_.kl_warmup_steps))
          : cfg_.kl_weight;
  const bool latent = model_cfg_.kind == ModelKind::kLatentContext;
  opts.mode = !latent ? ContextMode::kMean
              : (step_ < gumbel_boundary_ ? ContextMode::kHeuristic
                                          : ContextMode::kGumbel);
  opts.addr.step = step_;

  Tape<float> tape;
  tape.check_finite = cfg_.finite_checks;
  BoundParams<float> bound = bind(params_, tape);

  Tensor<float> batch_loss;
  double ce = 0.0, kl = 0.0, cov = 0.0;
  std::size_t tokens = 0, correct = 0;
  for (std::size_t slot = 0; slot < cfg_.batch_size; ++slot) {
    opts.addr.slot = slot;
    LossBreakdown<float> item;
    if (dataset_.feature_mode) {
      const std::size_t idx = static_cast<std::size_t>(
          noise_.uniform_int(dataset_.size(), Stream::kBatch, step_, slot));
      const FeatureExample& ex = dataset_.features[idx];
      const std::size_t rows =
          std::min(ex.features.rows(), phase.max_encode);
      Array<float> truncated({rows, ex.features.cols()});
      std::copy(ex.features.data.begin(),
                ex.features.data.begin() + rows * ex.features.cols(),
                truncated.data.begin());
      Tokens tgt(ex.target_tokens.begin(),
                 ex.target_tokens.begin() +
                     std::min(ex.target_tokens.size(), phase.max_decode));
      std::vector<int> target_ids;
      for (const auto& tok : tgt) target_ids.push_back(vocab_.id(tok));
      item = model_.teacher_forced_loss_features(tape, bound, truncated,
                                                 target_ids, opts, noise_);
    } else {
      const SequencePair pair = batch_example(step_, slot, phase);
      item = model_.teacher_forced_loss(tape, bound, pair, opts, noise_);
    }
    batch_loss =
        batch_loss.defined() ? add(batch_loss, item.total) : item.total;
    tokens += item.tokens;
    correct += item.correct;
    for (const auto& s : item.steps) {
      ce += s.cross_entropy;
      kl += s.kl;
      cov += s.coverage;
    }
  }
  Tensor<float> loss =
      mul_scalar(batch_loss, static_cast<float>(1.0 / double(tokens)));
  tape.backward(loss);

  std::map<std::string, Array<float>> grads;
  for (auto& [name, value] : params_)
    grads.emplace(name, tape.grad(bound[name]));
  // The PAD embedding row never trains.
  if (params_.contains("embed.table")) {
    Array<float>& g = grads.at("embed.table");
    for (std::size_t j = 0; j < g.cols(); ++j) g.at(Vocabulary::kPad, j) = 0.0f;
  }
  if (cfg_.grad_clip_norm > 0.0) {
    double norm_sq = 0.0;
    for (const auto& [name, g] : grads)
      for (float x : g.data) norm_sq += double(x) * double(x);
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg_.grad_clip_norm) {
      const float scale = static_cast<float>(cfg_.grad_clip_norm / norm);
      for (auto& [name, g] : grads)
        for (float& x : g.data) x *= scale;
    }
  }
  adam_step(params_, grads, adam_,
            AdamConfig{cfg_.learning_rate, cfg_.adam_beta1, cfg_.adam_beta2,
                       cfg_.adam_epsilon});

  TraceRow row;
  row.step = step_;
  row.phase = phase_idx;
  row.mode = !latent ? "sa"
             : (opts.mode == ContextMode::kHeuristic ? "heuristic" : "gumbel");
  row.loss = loss.value()[0];
  row.cross_entropy = ce / double(tokens);
  row.kl = kl / double(tokens);
  row.coverage = cov / double(tokens);
  row.accuracy = double(correct) / double(tokens);
  return row;
}

void Trainer::run_steps(std::uint64_t count, const StepCallback& on_step) {
  for (std::uint64_t i = 0; i < count && step_ < total_steps_; ++i) {
    TraceRow row = train_one_step();
    ++step_;
    trace_.push_back(row);
    if (on_step && !on_step(trace_.back())) break;
  }
}

void Trainer::run(const StepCallback& on_step) {
  run_steps(total_steps_ - step_, on_step);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint cp;
  cp.config = config_to_map(cfg_);
  cp.config["global_step"] = std::to_string(step_);
  cp.params = params_;
  for (const auto& [name, value] : adam_.m) {
    cp.moments.create(name + ".m", value.shape).data = value.data;
  }
  for (const auto& [name, value] : adam_.v) {
    cp.moments.create(name + ".v", value.shape).data = value.data;
  }
  return cp;
}

double Trainer::mean_mode_accuracy(std::size_t max_examples) {
  ForwardOptions opts;
  opts.mode = ContextMode::kMean;
  opts.kl_weight = 0.0;
  std::size_t tokens = 0, correct = 0;
  const std::size_t n = std::min(max_examples, dataset_.size());
  ParamStore<float>& store = params_;
  for (std::size_t i = 0; i < n; ++i) {
    Tape<float> tape;
    BoundParams<float> bound = bind(store, tape, /*requires_grad=*/false);
    LossBreakdown<float> item;
    if (dataset_.feature_mode) {
      const FeatureExample& ex = dataset_.features[i];
      std::vector<int> target_ids;
      for (const auto& tok : ex.target_tokens)
        target_ids.push_back(vocab_.id(tok));
      item = model_.teacher_forced_loss_features(tape, bound, ex.features,
                                                 target_ids, opts, noise_);
    } else {
      const SequencePair pair =
          encode_pair(dataset_.pairs[i].first, dataset_.pairs[i].second, vocab_);
      item = model_.teacher_forced_loss(tape, bound, pair, opts, noise_);
    }
    tokens += item.tokens;
    correct += item.correct;
  }
  return tokens ? double(correct) / double(tokens) : 0.0;
}

// ---------------------------------------------------------------------------
// Evaluation

Tokens render_tokens(const std::vector<int>& ext_ids, const Vocabulary& vocab,
                     const Tokens& oov_tokens) {
  Tokens out;
  for (int id : ext_ids) {
    if (id == Vocabulary::kEos || id == Vocabulary::kBos ||
        id == Vocabulary::kPad)
      continue;
    if (id < static_cast<int>(vocab.size()))
      out.push_back(vocab.token(id));
    else
      out.push_back(oov_tokens[id - vocab.size()]);
  }
  return out;
}

std::string format_eval_report(const EvalReport& r) {
  char buf[640];
  std::snprintf(
      buf, sizeof(buf),
      "examples=%zu\ntoken_accuracy=%.6f\nmean_log_likelihood=%.6f\n"
      "rouge1_p=%.6f\nrouge1_r=%.6f\nrouge1_f=%.6f\n"
      "rouge2_p=%.6f\nrouge2_r=%.6f\nrouge2_f=%.6f\n"
      "rougel_p=%.6f\nrougel_r=%.6f\nrougel_f=%.6f\n"
      "novel_word_rate=%.6f\noov_adoption=%.6f\n",
      r.examples, r.token_accuracy, r.mean_log_likelihood, r.scores.rouge1.precision,
      r.scores.rouge1.recall, r.scores.rouge1.f1, r.scores.rouge2.precision,
      r.scores.rouge2.recall, r.scores.rouge2.f1, r.scores.rougel.precision,
      r.scores.rougel.recall, r.scores.rougel.f1, r.scores.novel_word_rate,
      r.scores.oov_adoption);
  return buf;
}

EvalReport evaluate_model(const TrainConfig& cfg, ParamStore<float>& params,
                          const Vocabulary& vocab, const Dataset& data,
                          std::size_t beam_width, std::size_t max_len) {
  if (data.size() == 0) throw ConfigError("evaluate: empty dataset");
  if (params.contains("embed.table") &&
      params.get("embed.table").rows() != vocab.size())
    throw ConfigError("evaluate: checkpoint/vocabulary size mismatch: " +
                      std::to_string(params.get("embed.table").rows()) +
                      " embedding rows vs " + std::to_string(vocab.size()) +
                      " tokens");
  ModelConfig mc = model_config_from(cfg, vocab.size(), data.feature_dim());
  Seq2SeqModel<float> model(mc);
  NoiseSource noise(cfg.seed);

  EvalReport report;
  report.examples = data.size();
  std::vector<ScoredExample> scored;
  std::size_t tokens = 0, correct = 0;
  double ll = 0.0;
  ForwardOptions opts;
  opts.mode = ContextMode::kMean;
  opts.kl_weight = 0.0;

  for (std::size_t i = 0; i < data.size(); ++i) {
    ScoredExample ex;
    if (data.feature_mode) {
      const FeatureExample& fe = data.features[i];
      std::vector<int> target_ids;
      for (const auto& tok : fe.target_tokens)
        target_ids.push_back(vocab.id(tok));
      Tape<float> tape;
      BoundParams<float> bound = bind(params, tape, false);
      auto item = model.teacher_forced_loss_features(tape, bound, fe.features,
                                                     target_ids, opts, noise);
      tokens += item.tokens;
      correct += item.correct;
      for (const auto& s : item.steps) ll += s.log_likelihood;
      DecodeSession<float> session(model, params, fe.features,
                                   cfg.decode_sample, cfg.seed, i);
      auto result =
          beam_search(session, beam_width, max_len, cfg.length_normalize);
      ex.generated = render_tokens(result.tokens, vocab, {});
      ex.references = {fe.target_tokens};
    } else {
      const SequencePair pair =
          encode_pair(data.pairs[i].first, data.pairs[i].second, vocab);
      {
        Tape<float> tape;
        BoundParams<float> bound = bind(params, tape, false);
        auto item = model.teacher_forced_loss(tape, bound, pair, opts, noise);
        tokens += item.tokens;
        correct += item.correct;
        for (const auto& s : item.steps) ll += s.log_likelihood;
      }
      DecodeSession<float> session(model, params, pair, cfg.decode_sample,
                                   cfg.seed, i);
      auto result =
          beam_search(session, beam_width, max_len, cfg.length_normalize);
      ex.generated = render_tokens(result.tokens, vocab, pair.oov_tokens);
      ex.source = pair.source_tokens;
      ex.references = {pair.target_tokens};
    }
    scored.push_back(std::move(ex));
  }
  report.token_accuracy = tokens ? double(correct) / double(tokens) : 0.0;
  report.mean_log_likelihood = tokens ? ll / double(tokens) : 0.0;
  report.scores = score_corpus(scored, vocab);
  return report;
}

}  // namespace acvi
