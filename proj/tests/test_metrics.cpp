#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "acvi/metrics.hpp"
#include "doctest.h"

using namespace acvi;

namespace {

// Brute-force clipped n-gram overlap, independent of the implementation.
struct OracleCounts {
  std::size_t overlap = 0, cand = 0, ref = 0;
};
OracleCounts brute_force_overlap(const Tokens& c, const Tokens& r,
                                 std::size_t n) {
  OracleCounts out;
  std::map<Tokens, std::size_t> cc, rc;
  for (std::size_t i = 0; i + n <= c.size(); ++i)
    ++cc[Tokens(c.begin() + i, c.begin() + i + n)];
  for (std::size_t i = 0; i + n <= r.size(); ++i)
    ++rc[Tokens(r.begin() + i, r.begin() + i + n)];
  for (const auto& [g, k] : cc) {
    out.cand += k;
    auto it = rc.find(g);
    if (it != rc.end()) out.overlap += std::min(k, it->second);
  }
  for (const auto& [g, k] : rc) out.ref += k;
  return out;
}

// DP LCS oracle, written independently (recursive with memo).
std::size_t lcs_oracle(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<int>> memo(a.size() + 1,
                                     std::vector<int>(b.size() + 1, -1));
  std::function<std::size_t(std::size_t, std::size_t)> go =
      [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    int& m = memo[i][j];
    if (m >= 0) return static_cast<std::size_t>(m);
    std::size_t r = a[i] == b[j]
                        ? 1 + go(i + 1, j + 1)
                        : std::max(go(i + 1, j), go(i, j + 1));
    m = static_cast<int>(r);
    return r;
  };
  return go(0, 0);
}

// Exhaustive check over all subsequences of the candidate (for short inputs).
std::size_t lcs_exhaustive(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  for (std::size_t bits = 0; bits < (std::size_t(1) << a.size()); ++bits) {
    Tokens sub;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (bits & (std::size_t(1) << i)) sub.push_back(a[i]);
    // is sub a subsequence of b?
    std::size_t j = 0;
    for (const auto& tok : b)
      if (j < sub.size() && tok == sub[j]) ++j;
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

Tokens random_tokens(std::mt19937_64& rng, std::size_t max_len,
                     int alphabet = 4) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> tok(0, alphabet - 1);
  Tokens out;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(std::string(1, static_cast<char>('a' + tok(rng))));
  return out;
}

}  // namespace

TEST_CASE("identical sequences score one everywhere") {
  const Tokens s{"a", "b", "c"};
  for (auto prf : {rouge_n(s, s, 1), rouge_n(s, s, 2), rouge_l(s, s)}) {
    CHECK(prf.precision == 1.0);
    CHECK(prf.recall == 1.0);
    CHECK(prf.f1 == 1.0);
  }
}

TEST_CASE("disjoint and empty sequences score zero") {
  const Tokens a{"a", "b"}, b{"c", "d"}, empty{};
  for (auto prf : {rouge_n(a, b, 1), rouge_l(a, b), rouge_n(empty, a, 1),
                   rouge_n(a, empty, 2), rouge_l(empty, a), rouge_l(a, empty)}) {
    CHECK(prf.precision == 0.0);
    CHECK(prf.recall == 0.0);
    CHECK(prf.f1 == 0.0);
  }
}

TEST_CASE("hand-worked clipped unigram overlap") {
  const Tokens cand{"a", "b", "a"}, ref{"a", "a", "c"};
  auto prf = rouge_n(cand, ref, 1);
  CHECK(prf.precision == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(prf.recall == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(prf.f1 == doctest::Approx(2.0 / 3).epsilon(1e-15));
}

TEST_CASE("hand-worked LCS case") {
  const Tokens cand{"a", "c", "b", "d"}, ref{"a", "b", "c", "d"};
  auto prf = rouge_l(cand, ref);
  CHECK(prf.precision == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(prf.recall == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(prf.f1 == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("rouge agrees with brute-force oracles on random cases") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const Tokens cand = random_tokens(rng, 10);
    const Tokens ref = random_tokens(rng, 10);
    for (std::size_t n : {std::size_t(1), std::size_t(2), std::size_t(3)}) {
      auto got = rouge_n(cand, ref, n);
      auto oracle = brute_force_overlap(cand, ref, n);
      if (oracle.cand == 0 || oracle.ref == 0) {
        CHECK(got.f1 == 0.0);
      } else {
        CHECK(got.precision ==
              doctest::Approx(double(oracle.overlap) / oracle.cand)
                  .epsilon(1e-15));
        CHECK(got.recall == doctest::Approx(double(oracle.overlap) / oracle.ref)
                                .epsilon(1e-15));
      }
    }
    auto got = rouge_l(cand, ref);
    const std::size_t lcs = lcs_oracle(cand, ref);
    CHECK(lcs == lcs_exhaustive(cand, ref));
    if (!cand.empty() && !ref.empty()) {
      CHECK(got.precision ==
            doctest::Approx(double(lcs) / cand.size()).epsilon(1e-15));
      CHECK(got.recall ==
            doctest::Approx(double(lcs) / ref.size()).epsilon(1e-15));
    }
  }
}

TEST_CASE("rouge is symmetric with precision and recall swapped") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const Tokens a = random_tokens(rng, 8), b = random_tokens(rng, 8);
    auto ab = rouge_n(a, b, 2);
    auto ba = rouge_n(b, a, 2);
    CHECK(ab.precision == ba.recall);
    CHECK(ab.recall == ba.precision);
    CHECK(ab.f1 == doctest::Approx(ba.f1).epsilon(1e-15));
    auto lab = rouge_l(a, b);
    auto lba = rouge_l(b, a);
    CHECK(lab.precision == lba.recall);
    CHECK(lab.f1 == doctest::Approx(lba.f1).epsilon(1e-15));
  }
}

TEST_CASE("all measures stay inside the unit interval") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Tokens a = random_tokens(rng, 6), b = random_tokens(rng, 6);
    for (auto prf : {rouge_n(a, b, 1), rouge_n(a, b, 2), rouge_l(a, b)}) {
      CHECK(prf.precision >= 0.0);
      CHECK(prf.precision <= 1.0);
      CHECK(prf.recall >= 0.0);
      CHECK(prf.recall <= 1.0);
      CHECK(prf.f1 >= 0.0);
      CHECK(prf.f1 <= 1.0);
    }
  }
}

TEST_CASE("novel word rate counts positions outside the source") {
  CHECK(novel_word_rate({"a", "b"}, {"a", "b", "c"}) == 0.0);
  CHECK(novel_word_rate({"x", "y"}, {"a", "b"}) == 1.0);
  CHECK(novel_word_rate({}, {"a"}) == 0.0);
  CHECK(novel_word_rate({"a", "q", "b"}, {"a", "b"}) ==
        doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("oov adoption counts source-side out-of-vocabulary tokens") {
  Vocabulary vocab;
  vocab.add("a");
  vocab.add("b");
  CHECK(oov_adoption_count({"a", "q", "b"}, {"a", "b", "q"}, vocab) == 1);
  CHECK(oov_adoption_count({"a", "q", "b"}, {"a", "b"}, vocab) == 0);
  CHECK(oov_adoption_count({"q", "q"}, {"q"}, vocab) == 2);
}

TEST_CASE("corpus scores are the mean of per-example scores") {
  Vocabulary vocab;
  vocab.add("a");
  vocab.add("b");
  std::vector<ScoredExample> examples(2);
  examples[0] = {{"a", "b"}, {"a", "b"}, {{"a", "b"}}};
  examples[1] = {{"a"}, {"b"}, {{"b"}}};
  auto scores = score_corpus(examples, vocab);
  CHECK(scores.rouge1.f1 == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(scores.novel_word_rate == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(scores.examples == 2);
}

TEST_CASE("multiple references keep the best score") {
  Vocabulary vocab;
  std::vector<ScoredExample> examples(1);
  examples[0] = {{"a", "b"}, {"a", "b"}, {{"c", "d"}, {"a", "b"}}};
  auto scores = score_corpus(examples, vocab);
  CHECK(scores.rouge1.f1 == 1.0);
}
