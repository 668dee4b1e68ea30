#include <cstdio>
#include <filesystem>
#include <fstream>

#include "acvi/decode.hpp"
#include "acvi/errors.hpp"
#include "acvi/gradcheck.hpp"
#include "acvi/train.hpp"
#include "doctest.h"

using namespace acvi;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

TrainConfig small_copy_config() {
  TrainConfig cfg;
  cfg.task = "copy";
  cfg.synth_examples = 64;
  cfg.synth_vocab = 8;
  cfg.synth_min_len = 2;
  cfg.synth_max_len = 4;
  cfg.vocab_size = 64;
  cfg.hidden_dim = 8;
  cfg.embed_dim = 6;
  cfg.attention_dim = 8;
  cfg.batch_size = 4;
  cfg.phases = "30:6:6";
  cfg.seed = 11;
  return cfg;
}

Dataset copy_dataset(const TrainConfig& cfg) {
  Dataset d;
  d.pairs = synth_task(cfg.task, cfg.seed, cfg.synth_examples, cfg.synth_vocab,
                       cfg.synth_min_len, cfg.synth_max_len);
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

TEST_CASE("zero gradients leave parameters unchanged") {
  ParamStore<double> params;
  params.create("w", {3}).data = {1.0, -2.0, 0.5};
  auto state = make_adam_state(params);
  std::map<std::string, Array<double>> grads;
  grads.emplace("w", Array<double>({3}));
  adam_step(params, grads, state, AdamConfig{});
  CHECK(params.get("w").data == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("the first Adam step moves by almost exactly the learning rate") {
  ParamStore<double> params;
  params.create("x", {1}).data = {0.0};
  auto state = make_adam_state(params);
  std::map<std::string, Array<double>> grads;
  grads.emplace("x", Array<double>({1}, {1.0}));
  adam_step(params, grads, state, AdamConfig{0.001, 0.9, 0.999, 1e-8});
  // bias-corrected first step: -lr * 1 / (1 + eps-ish)
  CHECK(std::fabs(params.get("x")[0] + 0.001) < 1e-6);
}

TEST_CASE("Adam minimizes a quadratic to within 0.01 in 5000 steps") {
  ParamStore<double> params;
  params.create("x", {1}).data = {0.0};
  auto state = make_adam_state(params);
  for (int step = 0; step < 5000; ++step) {
    const double x = params.get("x")[0];
    std::map<std::string, Array<double>> grads;
    grads.emplace("x", Array<double>({1}, {2.0 * (x - 3.0)}));
    adam_step(params, grads, state, AdamConfig{0.01, 0.9, 0.999, 1e-8});
    if (std::fabs(params.get("x")[0] - 3.0) < 0.01) break;
  }
  CHECK(std::fabs(params.get("x")[0] - 3.0) < 0.01);
}

// ---------------------------------------------------------------------------
// config

TEST_CASE("config text parses, applies, and round-trips") {
  TrainConfig cfg;
  apply_config(parse_config_text("model = acvi\n# comment\nkl_weight = 0.5\n"
                                 "pointer = on\nbatch_size=3\n"),
               cfg);
  CHECK(cfg.model == "acvi");
  CHECK(cfg.kl_weight == 0.5);
  CHECK(cfg.pointer);
  CHECK(cfg.batch_size == 3);
  TrainConfig cfg2;
  apply_config(parse_config_text(config_to_text(cfg)), cfg2);
  CHECK(config_to_text(cfg2) == config_to_text(cfg));
}

TEST_CASE("unknown keys suggest the nearest valid one") {
  TrainConfig cfg;
  try {
    apply_config(parse_config_text("gumble_temperature = 0.5\n"), cfg);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("gumble_temperature") != std::string::npos);
    CHECK(msg.find("gumbel_temperature") != std::string::npos);
  }
}

TEST_CASE("phase presets resolve and coverage appends a fine-tune phase") {
  TrainConfig cfg;
  auto desk = resolve_phases(cfg);
  REQUIRE(desk.size() == 5);
  CHECK(desk[0].steps == 1400);
  CHECK(desk[4].max_encode == 80);
  cfg.coverage = true;
  auto with_cov = resolve_phases(cfg);
  REQUIRE(with_cov.size() == 6);
  CHECK(with_cov[5].steps == 60);
  CHECK(with_cov[5].coverage);
  cfg.phase_preset = "paper";
  auto paper = resolve_phases(cfg);
  CHECK(paper[0].steps == 71000);
  CHECK(paper[5].steps == 3000);
  cfg.phases = "10:2:2,bad";
  CHECK_THROWS_AS(resolve_phases(cfg), ConfigError);
}

// ---------------------------------------------------------------------------
// checkpoints

TEST_CASE("checkpoint save-load-save is byte identical") {
  TrainConfig cfg = small_copy_config();
  Trainer trainer(cfg, copy_dataset(cfg));
  trainer.run_steps(3);
  const std::string p1 = temp_path("acvi_cp1.bin");
  const std::string p2 = temp_path("acvi_cp2.bin");
  save_checkpoint(p1, trainer.checkpoint());
  Checkpoint loaded = load_checkpoint(p1);
  save_checkpoint(p2, loaded);
  const std::string b1 = file_bytes(p1);
  CHECK(!b1.empty());
  CHECK(b1 == file_bytes(p2));
  CHECK(loaded.global_step() == 3);

  // parameters round-trip bitwise
  auto& params = trainer.params();
  for (auto& [name, value] : params)
    CHECK(loaded.params.get(name).data == value.data);
}

TEST_CASE("corrupted magic bytes are rejected") {
  TrainConfig cfg = small_copy_config();
  Trainer trainer(cfg, copy_dataset(cfg));
  const std::string path = temp_path("acvi_cp_bad.bin");
  save_checkpoint(path, trainer.checkpoint());
  std::string bytes = file_bytes(path);
  bytes[0] = 'X';
  std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  // truncation is also caught
  std::ofstream(path, std::ios::binary)
      .write(file_bytes(temp_path("acvi_cp_bad.bin")).data(), 10);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}

TEST_CASE("vocabulary sidecars round-trip") {
  Vocabulary vocab;
  vocab.add("alpha");
  vocab.add("beta");
  const std::string path = temp_path("acvi_vocab.txt");
  save_vocab(path, vocab);
  Vocabulary loaded = load_vocab(path);
  CHECK(loaded.size() == vocab.size());
  CHECK(loaded.id("beta") == vocab.id("beta"));
}

// ---------------------------------------------------------------------------
// training loop

TEST_CASE("identical seeds give bitwise-identical traces") {
  TrainConfig cfg = small_copy_config();
  std::vector<std::string> first, second;
  for (int run = 0; run < 2; ++run) {
    Trainer trainer(cfg, copy_dataset(cfg));
    trainer.run();
    auto& dst = run == 0 ? first : second;
    for (const auto& row : trainer.trace())
      dst.push_back(format_trace_row(row));
  }
  CHECK(first == second);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted trace") {
  TrainConfig cfg = small_copy_config();
  Trainer full(cfg, copy_dataset(cfg));
  full.run();

  Trainer part(cfg, copy_dataset(cfg));
  part.run_steps(18);
  const std::string path = temp_path("acvi_cp_resume.bin");
  save_checkpoint(path, part.checkpoint());
  Checkpoint cp = load_checkpoint(path);
  Trainer resumed(cfg, copy_dataset(cfg), &cp, &part.vocab());
  resumed.run();

  REQUIRE(full.trace().size() == 30);
  REQUIRE(resumed.trace().size() == 12);
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(format_trace_row(resumed.trace()[i]) ==
          format_trace_row(full.trace()[18 + i]));
  // final parameters agree bitwise
  for (auto& [name, value] : full.params())
    CHECK(resumed.params().get(name).data == value.data);
}

TEST_CASE("the sampling path switches modes at exactly the boundary step") {
  TrainConfig cfg = small_copy_config();
  cfg.model = "acvi";
  cfg.phases = "20:6:6";
  cfg.gumbel_fraction = 0.25;
  Trainer trainer(cfg, copy_dataset(cfg));
  trainer.run();
  CHECK(trainer.gumbel_boundary() == 15);
  std::size_t switches = 0;
  for (std::size_t i = 1; i < trainer.trace().size(); ++i)
    if (trainer.trace()[i].mode != trainer.trace()[i - 1].mode) {
      ++switches;
      CHECK(trainer.trace()[i].step == trainer.gumbel_boundary());
      CHECK(trainer.trace()[i - 1].mode == "heuristic");
      CHECK(trainer.trace()[i].mode == "gumbel");
    }
  CHECK(switches == 1);
}

TEST_CASE("PAD embedding row never trains") {
  TrainConfig cfg = small_copy_config();
  Trainer trainer(cfg, copy_dataset(cfg));
  const Array<float> before = trainer.params().get("embed.table");
  trainer.run_steps(5);
  const Array<float>& after = trainer.params().get("embed.table");
  bool smth_changed = false;
  for (std::size_t j = 0; j < after.cols(); ++j) {
    CHECK(after.at(Vocabulary::kPad, j) == before.at(Vocabulary::kPad, j));
    if (after.at(Vocabulary::kEos + 2, j) != before.at(Vocabulary::kEos + 2, j))
      smth_changed = true;
  }
  CHECK(smth_changed);
}

TEST_CASE("latent mean-mode per-step losses equal soft attention exactly") {
  // shared parameters: register the latent model, then run both kinds on the
  // same store with kl_weight zero and the mean context path
  ModelConfig base;
  base.kind = ModelKind::kLatentContext;
  base.vocab_size = 10;
  base.hidden_dim = 4;
  base.embed_dim = 3;
  base.attention_dim = 4;
  base.pointer = true;
  Seq2SeqModel<float> latent(base);
  ModelConfig sa_cfg = base;
  sa_cfg.kind = ModelKind::kSoftAttention;
  Seq2SeqModel<float> sa(sa_cfg);

  ParamStore<float> store;
  latent.register_params(store, NoiseSource(5));

  Vocabulary vocab;
  for (int i = 0; i < 6; ++i) vocab.add("w" + std::to_string(i));
  NoiseSource noise(9);
  for (int trial = 0; trial < 20; ++trial) {
    Tokens src, tgt;
    const std::size_t n = 2 + trial % 4;
    for (std::size_t i = 0; i < n; ++i) {
      src.push_back("w" + std::to_string((trial + i) % 6));
      tgt.push_back("w" + std::to_string((trial * 3 + i) % 6));
    }
    src.push_back(trial % 2 ? "oovtok" : "w0");  // sometimes an OOV
    const SequencePair pair = encode_pair(src, tgt, vocab);

    ForwardOptions opts;
    opts.mode = ContextMode::kMean;
    opts.kl_weight = 0.0;
    Tape<float> t1, t2;
    auto b1 = bind(store, t1, false);
    auto b2 = bind(store, t2, false);
    auto latent_loss = latent.teacher_forced_loss(t1, b1, pair, opts, noise);
    auto sa_loss = sa.teacher_forced_loss(t2, b2, pair, opts, noise);
    REQUIRE(latent_loss.steps.size() == sa_loss.steps.size());
    for (std::size_t s = 0; s < sa_loss.steps.size(); ++s)
      CHECK(std::fabs(latent_loss.steps[s].log_likelihood -
                      sa_loss.steps[s].log_likelihood) < 1e-6);
    CHECK(std::fabs(latent_loss.total.value()[0] - sa_loss.total.value()[0]) <
          1e-6);
  }
}

TEST_CASE("full latent-model training loss passes the gradient check") {
  ModelConfig mc;
  mc.kind = ModelKind::kLatentContext;
  mc.vocab_size = 7;
  mc.hidden_dim = 3;
  mc.embed_dim = 2;
  mc.attention_dim = 3;
  mc.pointer = true;
  mc.mc_samples = 2;
  Seq2SeqModel<double> model(mc);
  ParamStore<double> params;
  model.register_params(params, NoiseSource(3));
  // keep the log-variance pre-activations on the active ReLU branch with a
  // margin far wider than the probe step
  for (auto& b : params.get("var.bias").data) b = 1.0;

  Vocabulary vocab;
  for (int i = 0; i < 3; ++i) vocab.add("w" + std::to_string(i));
  const SequencePair ex1 = encode_pair({"w0", "zork", "w2"}, {"zork", "w2"}, vocab);
  const SequencePair ex2 = encode_pair({"w1", "w1"}, {"w1", "w0"}, vocab);

  for (ContextMode mode : {ContextMode::kHeuristic, ContextMode::kGumbel}) {
    auto fn = [&, mode](Tape<double>& t, BoundParams<double>& p) {
      ForwardOptions opts;
      opts.mode = mode;
      opts.kl_weight = 1.0;
      opts.addr.step = 17;  // frozen noise addresses
      NoiseSource noise(31);
      opts.addr.slot = 0;
      auto l1 = model.teacher_forced_loss(t, p, ex1, opts, noise);
      opts.addr.slot = 1;
      auto l2 = model.teacher_forced_loss(t, p, ex2, opts, noise);
      return mul_scalar(add(l1.total, l2.total), 0.25);
    };
    // epsilon 1e-4: small enough to stay on one ReLU branch, large enough
    // that the difference quotient clears the accumulated rounding noise of
    // the multi-step loss
    auto report = grad_check(fn, params, 1e-4, 1e-3);
    CHECK_MESSAGE(report.passed, "mode ", int(mode), "\n", report.to_string());
  }
}

TEST_CASE("coverage weights train only during the fine-tune phase") {
  TrainConfig cfg = small_copy_config();
  cfg.coverage = true;
  cfg.phases = "12:6:6";
  cfg.coverage_finetune_steps = 8;
  Trainer trainer(cfg, copy_dataset(cfg));
  CHECK(trainer.total_steps() == 20);

  const Array<float> w_before = trainer.params().get("attn.coverage_w");
  for (float v : w_before.data) CHECK(v == 0.0f);
  trainer.run_steps(12);
  CHECK(trainer.params().get("attn.coverage_w").data == w_before.data);
  for (const auto& row : trainer.trace()) CHECK(row.coverage == 0.0);

  trainer.run();
  bool moved = false;
  for (float v : trainer.params().get("attn.coverage_w").data)
    moved = moved || v != 0.0f;
  CHECK(moved);
  CHECK(trainer.trace().back().coverage > 0.0);
}

// ---------------------------------------------------------------------------
// evaluation

TEST_CASE("evaluate report matches independently computed scores") {
  TrainConfig cfg = small_copy_config();
  Dataset data = copy_dataset(cfg);
  data.pairs.resize(3);
  Trainer trainer(cfg, data);  // untrained parameters: arbitrary but fixed
  const std::size_t max_len = 8;

  EvalReport report = evaluate_model(cfg, trainer.params(), trainer.vocab(),
                                     data, /*beam_width=*/1, max_len);

  // independent pass: greedy decode (width 1 equivalent) + corpus scoring
  ModelConfig mc = model_config_from(cfg, trainer.vocab().size(), 0);
  Seq2SeqModel<float> model(mc);
  std::vector<ScoredExample> scored;
  for (std::size_t i = 0; i < data.pairs.size(); ++i) {
    const SequencePair pair =
        encode_pair(data.pairs[i].first, data.pairs[i].second, trainer.vocab());
    DecodeSession<float> session(model, trainer.params(), pair);
    auto result = greedy_decode(session, max_len);
    ScoredExample ex;
    ex.generated = render_tokens(result.tokens, trainer.vocab(), pair.oov_tokens);
    ex.source = pair.source_tokens;
    ex.references = {pair.target_tokens};
    scored.push_back(ex);
  }
  auto want = score_corpus(scored, trainer.vocab());
  CHECK(report.scores.rouge1.f1 == doctest::Approx(want.rouge1.f1).epsilon(1e-12));
  CHECK(report.scores.rougel.f1 == doctest::Approx(want.rougel.f1).epsilon(1e-12));
  CHECK(report.scores.novel_word_rate ==
        doctest::Approx(want.novel_word_rate).epsilon(1e-12));
  CHECK(report.examples == 3);

  const std::string text = format_eval_report(report);
  CHECK(text.find("token_accuracy=") != std::string::npos);
  CHECK(text.find("rougel_f=") != std::string::npos);
}

TEST_CASE("evaluation rejects a checkpoint/vocabulary mismatch") {
  TrainConfig cfg = small_copy_config();
  Dataset data = copy_dataset(cfg);
  Trainer trainer(cfg, data);
  Vocabulary other;
  other.add("only");
  CHECK_THROWS_AS(
      evaluate_model(cfg, trainer.params(), other, data, 1, 4), ConfigError);
}
