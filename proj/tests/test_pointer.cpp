#include <cmath>

#include "acvi/gradcheck.hpp"
#include "acvi/pointer_gen.hpp"
#include "doctest.h"

using namespace acvi;

namespace {

Array<double> random_array(Shape shape, std::uint64_t salt, double range = 1.0) {
  NoiseSource noise(88);
  Array<double> a(std::move(shape));
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] = range * (2.0 * noise.uniform(Stream::kData, salt, i) - 1.0);
  return a;
}

AttentionWeights<double> weights_of(Tape<double>& t, const Array<double>& w,
                                    Mask mask) {
  return {Tensor<double>(), t.leaf(w, false), std::move(mask)};
}

}  // namespace

TEST_CASE("zero parameters give the uniform vocabulary distribution") {
  const std::size_t d = 2, p_dim = 3, v = 6;
  ParamStore<double> store;
  store.create("out.hidden_w", {p_dim, 3 * d});
  store.create("out.hidden_b", {p_dim});
  store.create("out.vocab_w", {v, p_dim});
  store.create("out.vocab_b", {v});
  Tape<double> t;
  auto p = bind(store, t);
  auto dist = vocab_distribution(t.constant(random_array({d}, 1)),
                                 t.constant(random_array({2 * d}, 2)),
                                 bind_output(p, "out"));
  for (std::size_t i = 0; i < v; ++i)
    CHECK(dist.value()[i] == doctest::Approx(1.0 / v).epsilon(1e-12));
}

TEST_CASE("vocabulary distribution sums to one and matches the scalar oracle") {
  const std::size_t d = 2, p_dim = 3, v = 5;
  ParamStore<double> store;
  register_output(store, "out", d, p_dim, v, NoiseSource(3));
  const Array<double> s = random_array({d}, 4);
  const Array<double> c = random_array({2 * d}, 5);
  Tape<double> t;
  auto p = bind(store, t);
  auto dist =
      vocab_distribution(t.constant(s), t.constant(c), bind_output(p, "out"));
  double total = 0.0;
  for (std::size_t i = 0; i < v; ++i) total += dist.value()[i];
  CHECK(std::fabs(total - 1.0) < 1e-6);

  // scalar-loop evaluation of the two-layer softmax
  const auto& hw = store.get("out.hidden_w");
  const auto& hb = store.get("out.hidden_b");
  const auto& vw = store.get("out.vocab_w");
  const auto& vb = store.get("out.vocab_b");
  std::vector<double> joint(3 * d);
  for (std::size_t j = 0; j < d; ++j) joint[j] = s[j];
  for (std::size_t j = 0; j < 2 * d; ++j) joint[d + j] = c[j];
  std::vector<double> hidden(p_dim);
  for (std::size_t a = 0; a < p_dim; ++a) {
    double pre = hb[a];
    for (std::size_t j = 0; j < 3 * d; ++j) pre += hw.at(a, j) * joint[j];
    hidden[a] = std::tanh(pre);
  }
  std::vector<double> logits(v);
  double mx = -1e99;
  for (std::size_t i = 0; i < v; ++i) {
    logits[i] = vb[i];
    for (std::size_t a = 0; a < p_dim; ++a)
      logits[i] += vw.at(i, a) * hidden[a];
    mx = std::max(mx, logits[i]);
  }
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  for (std::size_t i = 0; i < v; ++i)
    CHECK(std::fabs(dist.value()[i] - std::exp(logits[i] - mx) / z) < 1e-10);
}

TEST_CASE("generation probability: zeros, saturation, and the scalar oracle") {
  const std::size_t d = 2, e = 3;
  ParamStore<double> store;
  store.create("ptr.ctx_w", {2 * d});
  store.create("ptr.state_w", {d});
  store.create("ptr.input_w", {e});
  store.create("ptr.bias", {1});
  Tape<double> t;
  {
    auto p = bind(store, t);
    auto pg = generation_prob(t.constant(random_array({2 * d}, 6)),
                              t.constant(random_array({d}, 7)),
                              t.constant(random_array({e}, 8)),
                              bind_pointer(p, "ptr"));
    CHECK(pg.value()[0] == 0.5);
  }
  store.get("ptr.bias")[0] = 20.0;
  {
    auto p = bind(store, t);
    auto pg = generation_prob(t.constant(random_array({2 * d}, 6, 0.1)),
                              t.constant(random_array({d}, 7, 0.1)),
                              t.constant(random_array({e}, 8, 0.1)),
                              bind_pointer(p, "ptr"));
    CHECK(pg.value()[0] > 0.999);
  }
  ParamStore<double> store2;
  register_pointer(store2, "ptr", d, e, NoiseSource(9));
  store2.get("ptr.bias")[0] = 0.37;
  const Array<double> c = random_array({2 * d}, 10);
  const Array<double> s = random_array({d}, 11);
  const Array<double> x = random_array({e}, 12);
  auto p2 = bind(store2, t);
  auto pg = generation_prob(t.constant(c), t.constant(s), t.constant(x),
                            bind_pointer(p2, "ptr"));
  double pre = store2.get("ptr.bias")[0];
  for (std::size_t j = 0; j < 2 * d; ++j) pre += store2.get("ptr.ctx_w")[j] * c[j];
  for (std::size_t j = 0; j < d; ++j) pre += store2.get("ptr.state_w")[j] * s[j];
  for (std::size_t j = 0; j < e; ++j) pre += store2.get("ptr.input_w")[j] * x[j];
  CHECK(std::fabs(pg.value()[0] - 1.0 / (1.0 + std::exp(-pre))) < 1e-12);
}

TEST_CASE("pure generation leaves OOV slots empty") {
  const std::size_t v = 4, n = 3, n_oov = 2;
  Tape<double> t;
  Array<double> pv = random_array({v}, 13);
  for (auto& x : pv.data) x = std::fabs(x) + 0.1;
  double z = 0.0;
  for (double x : pv.data) z += x;
  for (auto& x : pv.data) x /= z;
  auto aw = weights_of(t, Array<double>({n}, {0.2, 0.5, 0.3}), Mask(n, 1));
  auto dist = final_distribution(t.constant(pv), t.scalar(1.0), aw,
                                 std::vector<int>{0, 2, 1}, n_oov);
  for (std::size_t i = 0; i < v; ++i)
    CHECK(dist.value()[i] == doctest::Approx(pv[i]).epsilon(1e-12));
  CHECK(dist.value()[v] == 0.0);
  CHECK(dist.value()[v + 1] == 0.0);
}

TEST_CASE("pure copying aggregates repeated source tokens") {
  const std::size_t v = 4, n = 3;
  Tape<double> t;
  auto pv = t.constant(Array<double>::full({v}, 0.25));
  auto aw = weights_of(t, Array<double>({n}, {0.2, 0.5, 0.3}), Mask(n, 1));
  // source ids [A, B, A] with A=1, B=3
  auto dist = final_distribution(pv, t.scalar(0.0), aw,
                                 std::vector<int>{1, 3, 1}, 0);
  CHECK(dist.value()[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dist.value()[3] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dist.value()[0] == 0.0);
  CHECK(dist.value()[2] == 0.0);
}

TEST_CASE("the extended distribution is valid for any gate value") {
  const std::size_t v = 5, n = 4, n_oov = 2;
  NoiseSource noise(14);
  for (int trial = 0; trial < 25; ++trial) {
    Tape<double> t;
    Array<double> pv = random_array({v}, 100 + trial);
    for (auto& x : pv.data) x = std::fabs(x) + 0.05;
    double z = 0.0;
    for (double x : pv.data) z += x;
    for (auto& x : pv.data) x /= z;
    Array<double> w = random_array({n}, 200 + trial);
    for (auto& x : w.data) x = std::fabs(x) + 0.05;
    z = 0.0;
    for (double x : w.data) z += x;
    for (auto& x : w.data) x /= z;
    auto aw = weights_of(t, w, Mask(n, 1));
    const double gate = noise.uniform(Stream::kData, trial);
    auto dist = final_distribution(t.constant(pv), t.scalar(gate), aw,
                                   std::vector<int>{2, 6, 1, 5}, n_oov);
    double total = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      CHECK(dist.value()[i] >= 0.0);
      total += dist.value()[i];
    }
    CHECK(std::fabs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("permuting source positions with their weights changes nothing") {
  const std::size_t v = 4, n = 4;
  Tape<double> t;
  auto pv = t.constant(Array<double>::full({v}, 0.25));
  const Array<double> w({n}, {0.1, 0.4, 0.3, 0.2});
  const std::vector<int> ids{1, 5, 2, 5};
  auto aw = weights_of(t, w, Mask(n, 1));
  auto base =
      final_distribution(pv, t.scalar(0.35), aw, ids, 2).value();

  const std::size_t perm[n] = {3, 1, 0, 2};
  Array<double> wp({n});
  std::vector<int> idsp(n);
  for (std::size_t i = 0; i < n; ++i) {
    wp[i] = w[perm[i]];
    idsp[i] = ids[perm[i]];
  }
  auto awp = weights_of(t, wp, Mask(n, 1));
  auto permuted = final_distribution(pv, t.scalar(0.35), awp, idsp, 2).value();
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(base[i] == doctest::Approx(permuted[i]).epsilon(1e-12));
}

TEST_CASE("out-of-range extended ids are rejected") {
  Tape<double> t;
  auto pv = t.constant(Array<double>::full({4}, 0.25));
  auto aw = weights_of(t, Array<double>({2}, {0.5, 0.5}), Mask(2, 1));
  CHECK_THROWS_AS(
      final_distribution(pv, t.scalar(0.5), aw, std::vector<int>{0, 6}, 1),
      DomainError);
}

TEST_CASE("pointer head parameters pass the gradient check end to end") {
  const std::size_t d = 2, e = 2, p_dim = 3, v = 5, n = 3;
  ParamStore<double> store;
  register_output(store, "out", d, p_dim, v, NoiseSource(15));
  register_pointer(store, "ptr", d, e, NoiseSource(16));
  store.create("state", {d}).data = random_array({d}, 17).data;
  store.create("ctx", {2 * d}).data = random_array({2 * d}, 18).data;
  store.create("x", {e}).data = random_array({e}, 19).data;
  store.create("scores", {n}).data = random_array({n}, 20).data;
  const std::vector<int> ext_ids{2, 6, 5};
  auto fn = [&](Tape<double>& t, BoundParams<double>& p) {
    auto aw = attention_weights(p["scores"], Mask(n, 1));
    auto pv = vocab_distribution(p["state"], p["ctx"], bind_output(p, "out"));
    auto pg = generation_prob(p["ctx"], p["state"], p["x"],
                              bind_pointer(p, "ptr"));
    auto dist = final_distribution(pv, pg, aw, ext_ids, 2);
    // log-likelihood of an OOV target (slot 6) exercises the copy path
    return neg(log(clamp_min(pick(dist, 6), 1e-12)));
  };
  auto report = grad_check(fn, store, 1e-5, 1e-3);
  CHECK_MESSAGE(report.passed, report.to_string());
}
