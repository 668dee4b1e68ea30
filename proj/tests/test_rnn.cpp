#include <cmath>

#include "acvi/attention.hpp"
#include "acvi/gradcheck.hpp"
#include "acvi/lstm.hpp"
#include "doctest.h"

using namespace acvi;

namespace {

ParamStore<double> lstm_params(std::size_t in_dim, std::size_t d,
                               std::uint64_t seed, const char* prefix = "cell") {
  ParamStore<double> store;
  register_lstm(store, prefix, in_dim, d, NoiseSource(seed));
  return store;
}

Array<double> random_vec(std::size_t n, std::uint64_t salt, double range = 1.0) {
  NoiseSource noise(55);
  Array<double> a({n});
  for (std::size_t i = 0; i < n; ++i)
    a[i] = range * (2.0 * noise.uniform(Stream::kData, salt, i) - 1.0);
  return a;
}

Array<double> random_mat(std::size_t r, std::size_t c, std::uint64_t salt,
                         double range = 1.0) {
  NoiseSource noise(56);
  Array<double> a({r, c});
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] = range * (2.0 * noise.uniform(Stream::kData, salt, i) - 1.0);
  return a;
}

}  // namespace

TEST_CASE("lstm_step with everything zero yields zero state") {
  ParamStore<double> store;
  store.create("cell.input_w", {8, 3});
  store.create("cell.recur_w", {8, 2});
  store.create("cell.bias", {8});
  Tape<double> t;
  auto p = bind(store, t);
  auto cell = bind_lstm(p, "cell");
  LSTMState<double> s0 = lstm_zero_state(t, 2);
  LSTMState<double> s1 = lstm_step(t.constant(Array<double>({3})), s0, cell);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(s1.hidden.value()[i] == 0.0);
    CHECK(s1.cell.value()[i] == 0.0);
  }
}

TEST_CASE("saturated forget gate carries the cell through") {
  const std::size_t d = 3, e = 2;
  ParamStore<double> store = lstm_params(e, d, 7);
  // forget-gate bias +10, input-gate bias -10
  auto& bias = store.get("cell.bias");
  for (std::size_t j = 0; j < d; ++j) bias[j] = -10.0;
  for (std::size_t j = d; j < 2 * d; ++j) bias[j] = 10.0;
  Tape<double> t;
  auto p = bind(store, t);
  auto cell = bind_lstm(p, "cell");
  LSTMState<double> s0{t.constant(random_vec(d, 1, 0.5)),
                       t.constant(random_vec(d, 2, 0.5))};
  LSTMState<double> s1 =
      lstm_step(t.constant(random_vec(e, 3, 0.5)), s0, cell);
  for (std::size_t j = 0; j < d; ++j)
    CHECK(std::fabs(s1.cell.value()[j] - s0.cell.value()[j]) < 1e-3);
}

TEST_CASE("lstm_step gradients pass the finite-difference check") {
  const std::size_t d = 3, e = 2;
  ParamStore<double> store = lstm_params(e, d, 9);
  const Array<double> x = random_vec(e, 4, 0.8);
  const Array<double> h0 = random_vec(d, 5, 0.5);
  const Array<double> c0 = random_vec(d, 6, 0.5);
  auto fn = [&](Tape<double>& t, BoundParams<double>& p) {
    auto cell = bind_lstm(p, "cell");
    LSTMState<double> s0{t.constant(h0), t.constant(c0)};
    LSTMState<double> s1 = lstm_step(t.constant(x), s0, cell);
    return sum(s1.hidden);
  };
  CHECK(grad_check(fn, store, 1e-5, 1e-4).passed);
}

TEST_CASE("lstm_step rejects inconsistent shapes") {
  ParamStore<double> store = lstm_params(2, 3, 11);
  Tape<double> t;
  auto p = bind(store, t);
  auto cell = bind_lstm(p, "cell");
  LSTMState<double> bad{t.constant(Array<double>({5})),
                        t.constant(Array<double>({5}))};
  CHECK_THROWS_AS(lstm_step(t.constant(Array<double>({2})), bad, cell),
                  ShapeError);
}

TEST_CASE("single-token encoding is the two single steps concatenated") {
  const std::size_t d = 3, e = 2;
  ParamStore<double> store = lstm_params(e, d, 13, "enc.fwd");
  register_lstm(store, "enc.bwd", e, d, NoiseSource(14));
  const Array<double> x = random_mat(1, e, 7);
  Tape<double> t;
  auto p = bind(store, t);
  auto out = encode_bilstm(t, t.constant(x), Mask{1}, bind_lstm(p, "enc.fwd"),
                           bind_lstm(p, "enc.bwd"), d);
  CHECK(out.encodings.shape() == Shape{1, 2 * d});
  LSTMState<double> zero = lstm_zero_state(t, d);
  auto fwd = lstm_step(row(t.constant(x), 0), zero, bind_lstm(p, "enc.fwd"));
  auto bwd = lstm_step(row(t.constant(x), 0), zero, bind_lstm(p, "enc.bwd"));
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(out.encodings.value().at(0, j) == fwd.hidden.value()[j]);
    CHECK(out.encodings.value().at(0, d + j) == bwd.hidden.value()[j]);
  }
}

TEST_CASE("backward direction equals forward direction over reversed input") {
  const std::size_t d = 3, e = 2, n = 4;
  ParamStore<double> store = lstm_params(e, d, 15, "enc.fwd");
  register_lstm(store, "enc.bwd", e, d, NoiseSource(16));
  const Array<double> x = random_mat(n, e, 8);
  Array<double> x_rev({n, e});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < e; ++j) x_rev.at(i, j) = x.at(n - 1 - i, j);

  Tape<double> t;
  auto p = bind(store, t);
  auto out = encode_bilstm(t, t.constant(x), Mask(n, 1),
                           bind_lstm(p, "enc.fwd"), bind_lstm(p, "enc.bwd"), d);
  // run the reversed input through the *backward* cell, forward in time
  LSTMState<double> s = lstm_zero_state(t, d);
  std::vector<Array<double>> states;
  auto xr = t.constant(x_rev);
  for (std::size_t i = 0; i < n; ++i) {
    s = lstm_step(row(xr, i), s, bind_lstm(p, "enc.bwd"));
    states.push_back(s.hidden.value());
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      CHECK(out.encodings.value().at(i, d + j) == states[n - 1 - i][j]);
}

TEST_CASE("bilstm matches a hand-rolled two-pass composition") {
  const std::size_t d = 2, e = 3, n = 3;
  ParamStore<double> store = lstm_params(e, d, 17, "enc.fwd");
  register_lstm(store, "enc.bwd", e, d, NoiseSource(18));
  const Array<double> x = random_mat(n, e, 9);
  Tape<double> t;
  auto p = bind(store, t);
  auto out = encode_bilstm(t, t.constant(x), Mask(n, 1),
                           bind_lstm(p, "enc.fwd"), bind_lstm(p, "enc.bwd"), d);

  auto xc = t.constant(x);
  LSTMState<double> f = lstm_zero_state(t, d);
  std::vector<Array<double>> fwd;
  for (std::size_t i = 0; i < n; ++i) {
    f = lstm_step(row(xc, i), f, bind_lstm(p, "enc.fwd"));
    fwd.push_back(f.hidden.value());
  }
  LSTMState<double> b = lstm_zero_state(t, d);
  std::vector<Array<double>> bwd(n);
  for (std::size_t i = n; i-- > 0;) {
    b = lstm_step(row(xc, i), b, bind_lstm(p, "enc.bwd"));
    bwd[i] = b.hidden.value();
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(out.encodings.value().at(i, j) == fwd[i][j]);
      CHECK(out.encodings.value().at(i, d + j) == bwd[i][j]);
    }
}

TEST_CASE("empty sequence is rejected") {
  ParamStore<double> store = lstm_params(2, 3, 19, "enc.fwd");
  register_lstm(store, "enc.bwd", 2, 3, NoiseSource(20));
  Tape<double> t;
  auto p = bind(store, t);
  CHECK_THROWS(encode_bilstm(t, t.constant(Array<double>({0, 2})), Mask{},
                             bind_lstm(p, "enc.fwd"), bind_lstm(p, "enc.bwd"),
                             3));
}

TEST_CASE("padded positions cannot influence attention or context") {
  const std::size_t d = 3, e = 2, n = 4, d_a = 4;
  ParamStore<double> store = lstm_params(e, d, 21, "enc.fwd");
  register_lstm(store, "enc.bwd", e, d, NoiseSource(22));
  register_attention(store, "attn", d_a, d, NoiseSource(23));
  Array<double> x = random_mat(n, e, 10);
  Mask mask{1, 1, 1, 0};  // last position is padding
  const Array<double> query = random_vec(d, 11, 0.5);

  auto run = [&](const Array<double>& input) {
    Tape<double> t;
    auto p = bind(store, t);
    auto enc = encode_bilstm(t, t.constant(input), mask,
                             bind_lstm(p, "enc.fwd"), bind_lstm(p, "enc.bwd"),
                             d);
    LSTMState<double> s{t.constant(query), t.constant(query)};
    auto scores = attention_scores(enc, s, bind_attention(p, "attn"));
    auto aw = attention_weights(scores, mask);
    auto ctx = sa_context(aw, enc);
    std::pair<Array<double>, Array<double>> out{aw.weights.value(),
                                                ctx.value()};
    return out;
  };

  auto base = run(x);
  x.at(3, 0) += 17.0;  // perturb the padded token's embedding
  x.at(3, 1) -= 4.0;
  auto perturbed = run(x);
  CHECK(base.first.data == perturbed.first.data);
  CHECK(base.second.data == perturbed.second.data);
  CHECK(base.first.data[3] == 0.0);
}

TEST_CASE("bilstm parameters pass the gradient check") {
  const std::size_t d = 2, e = 2, n = 3;
  ParamStore<double> store = lstm_params(e, d, 25, "enc.fwd");
  register_lstm(store, "enc.bwd", e, d, NoiseSource(26));
  register_bridge(store, "bridge", d, NoiseSource(27));
  const Array<double> x = random_mat(n, e, 12);
  auto fn = [&](Tape<double>& t, BoundParams<double>& p) {
    auto enc = encode_bilstm(t, t.constant(x), Mask(n, 1),
                             bind_lstm(p, "enc.fwd"), bind_lstm(p, "enc.bwd"),
                             d);
    auto s0 = decoder_init_state(enc, bind_bridge(p, "bridge"));
    return add(sum(enc.encodings), sum(s0.hidden));
  };
  auto report = grad_check(fn, store, 1e-5, 1e-4);
  CHECK_MESSAGE(report.passed, report.to_string());
}
