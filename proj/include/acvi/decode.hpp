#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "acvi/errors.hpp"
#include "acvi/model.hpp"

namespace acvi {

struct DecodeResult {
  std::vector<int> tokens;  // extended ids, EOS included when emitted
  double log_prob = 0.0;
};

// Both decoders are generic over the session so tests can script step
// distributions. A session provides:
//   using Scalar;
//   extended_size(), n_oov(), coverage_enabled(), config().prob_floor
//   initial_state() -> LSTMState<Scalar>, initial_coverage() -> Tensor<Scalar>
//   step(state, optional coverage, prev_base_id, t) -> {dist*, state, coverage}

namespace detail {

inline int prev_base_id(const std::vector<int>& tokens, std::size_t vocab_size) {
  if (tokens.empty()) return Vocabulary::kBos;
  const int last = tokens.back();
  return last < static_cast<int>(vocab_size) ? last : Vocabulary::kUnk;
}

inline bool lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace detail

// Argmax decoding; ties break toward the smallest token id. Stops at the
// first EOS or at max_len.
template <typename Session>
DecodeResult greedy_decode(Session& session, std::size_t max_len) {
  using S = typename Session::Scalar;
  if (max_len < 1) throw ConfigError("greedy_decode: max_len must be >= 1");
  const std::size_t vocab = session.extended_size() - session.n_oov();
  const double floor = session.config().prob_floor;
  LSTMState<S> state = session.initial_state();
  std::optional<Tensor<S>> coverage;
  if (session.coverage_enabled()) coverage = session.initial_coverage();
  DecodeResult out;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto step = session.step(state, coverage,
                             detail::prev_base_id(out.tokens, vocab), t);
    const Array<S>& dist = *step.dist;
    std::size_t arg = 0;
    for (std::size_t i = 1; i < dist.size(); ++i)
      if (dist[i] > dist[arg]) arg = i;
    out.log_prob += std::log(std::max(static_cast<double>(dist[arg]), floor));
    out.tokens.push_back(static_cast<int>(arg));
    state = step.state;
    if (coverage) coverage = step.coverage;
    if (static_cast<int>(arg) == Vocabulary::kEos) break;
  }
  return out;
}

// Standard beam search over the extended distribution. The top `width`
// expansions survive each round; those emitting EOS retire to a finished
// pool. The search halts once the best live hypothesis cannot beat the best
// finished one (log-probabilities only decrease) or at max_len. The result is
// the best finished hypothesis, or the best live one when nothing finished;
// exact score ties resolve to the lexicographically smaller token sequence.
template <typename Session>
DecodeResult beam_search(Session& session, std::size_t width,
                         std::size_t max_len, bool length_normalize = false) {
  using S = typename Session::Scalar;
  if (width < 1) throw ConfigError("beam_search: width must be >= 1");
  if (max_len < 1) throw ConfigError("beam_search: max_len must be >= 1");
  const std::size_t vocab = session.extended_size() - session.n_oov();
  const double floor = session.config().prob_floor;

  struct Hyp {
    std::vector<int> tokens;
    double log_prob = 0.0;
    LSTMState<S> state;
    Tensor<S> coverage;
  };

  std::vector<Hyp> live(1);
  live[0].state = session.initial_state();
  if (session.coverage_enabled()) live[0].coverage = session.initial_coverage();
  std::vector<Hyp> finished;

  auto best_log_prob = [](const std::vector<Hyp>& pool) {
    double best = -std::numeric_limits<double>::infinity();
    for (const Hyp& h : pool) best = std::max(best, h.log_prob);
    return best;
  };

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    // Not valid under length normalization, where a longer continuation can
    // still win on the per-token score.
    if (!finished.empty() && !length_normalize &&
        best_log_prob(live) <= best_log_prob(finished))
      break;

    struct Cand {
      std::vector<int> tokens;
      double log_prob;
      std::size_t parent;
    };
    std::vector<Cand> cands;
    std::vector<decltype(session.step(live[0].state, std::nullopt, 0, 0))> steps;
    steps.reserve(live.size());
    for (std::size_t h = 0; h < live.size(); ++h) {
      std::optional<Tensor<S>> cov;
      if (live[h].coverage.defined()) cov = live[h].coverage;
      steps.push_back(session.step(
          live[h].state, cov, detail::prev_base_id(live[h].tokens, vocab), t));
      const Array<S>& dist = *steps.back().dist;
      for (std::size_t id = 0; id < dist.size(); ++id) {
        Cand c;
        c.tokens = live[h].tokens;
        c.tokens.push_back(static_cast<int>(id));
        c.log_prob = live[h].log_prob +
                     std::log(std::max(static_cast<double>(dist[id]), floor));
        c.parent = h;
        cands.push_back(std::move(c));
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return detail::lex_less(a.tokens, b.tokens);
    });

    std::vector<Hyp> next;
    std::size_t selected = 0;
    for (const Cand& c : cands) {
      if (selected >= width) break;
      ++selected;
      Hyp h;
      h.tokens = c.tokens;
      h.log_prob = c.log_prob;
      h.state = steps[c.parent].state;
      h.coverage = steps[c.parent].coverage;
      if (c.tokens.back() == Vocabulary::kEos)
        finished.push_back(std::move(h));
      else
        next.push_back(std::move(h));
    }
    live = std::move(next);
  }

  const std::vector<Hyp>& pool = finished.empty() ? live : finished;
  if (pool.empty()) throw Error("beam_search: no hypotheses produced");
  auto score = [&](const Hyp& h) {
    return length_normalize && !h.tokens.empty()
               ? h.log_prob / static_cast<double>(h.tokens.size())
               : h.log_prob;
  };
  const Hyp* best = &pool[0];
  for (const Hyp& h : pool) {
    if (score(h) > score(*best) ||
        (score(h) == score(*best) && detail::lex_less(h.tokens, best->tokens)))
      best = &h;
  }
  return {best->tokens, best->log_prob};
}

}  // namespace acvi
