#include "acvi/metrics.hpp"

#include <algorithm>
#include <map>
#include <unordered_set>

namespace acvi {

namespace {

double f_measure(double p, double r) {
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const Tokens& tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i,
                                      tokens.begin() + i + n)];
  return counts;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

Prf rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n) {
  if (n < 1) return {};
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  std::size_t cand_total = 0, ref_total = 0, overlap = 0;
  for (const auto& [gram, count] : cand) cand_total += count;
  for (const auto& [gram, count] : ref) ref_total += count;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  if (cand_total == 0 || ref_total == 0) return {};
  Prf out;
  out.precision = static_cast<double>(overlap) / cand_total;
  out.recall = static_cast<double>(overlap) / ref_total;
  out.f1 = f_measure(out.precision, out.recall);
  return out;
}

Prf rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return {};
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  Prf out;
  out.precision = lcs / candidate.size();
  out.recall = lcs / reference.size();
  out.f1 = f_measure(out.precision, out.recall);
  return out;
}

double novel_word_rate(const Tokens& generated, const Tokens& source) {
  if (generated.empty()) return 0.0;
  std::unordered_set<std::string> source_set(source.begin(), source.end());
  std::size_t novel = 0;
  for (const std::string& tok : generated)
    if (!source_set.count(tok)) ++novel;
  return static_cast<double>(novel) / generated.size();
}

std::size_t oov_adoption_count(const Tokens& generated, const Tokens& source,
                               const Vocabulary& vocab) {
  std::unordered_set<std::string> source_set(source.begin(), source.end());
  std::size_t adopted = 0;
  for (const std::string& tok : generated)
    if (!vocab.contains(tok) && source_set.count(tok)) ++adopted;
  return adopted;
}

CorpusScores score_corpus(const std::vector<ScoredExample>& examples,
                          const Vocabulary& vocab) {
  CorpusScores total;
  total.examples = examples.size();
  if (examples.empty()) return total;
  auto best_by_f1 = [](const std::vector<Prf>& scores) {
    Prf best = scores.empty() ? Prf{} : scores[0];
    for (const Prf& s : scores)
      if (s.f1 > best.f1) best = s;
    return best;
  };
  auto accumulate = [](Prf& into, const Prf& s) {
    into.precision += s.precision;
    into.recall += s.recall;
    into.f1 += s.f1;
  };
  for (const ScoredExample& ex : examples) {
    std::vector<Prf> r1, r2, rl;
    for (const Tokens& ref : ex.references) {
      r1.push_back(rouge_n(ex.generated, ref, 1));
      r2.push_back(rouge_n(ex.generated, ref, 2));
      rl.push_back(rouge_l(ex.generated, ref));
    }
    accumulate(total.rouge1, best_by_f1(r1));
    accumulate(total.rouge2, best_by_f1(r2));
    accumulate(total.rougel, best_by_f1(rl));
    total.novel_word_rate += novel_word_rate(ex.generated, ex.source);
    total.oov_adoption += static_cast<double>(
        oov_adoption_count(ex.generated, ex.source, vocab));
  }
  const double n = static_cast<double>(examples.size());
  for (Prf* p : {&total.rouge1, &total.rouge2, &total.rougel}) {
    p->precision /= n;
    p->recall /= n;
    p->f1 /= n;
  }
  total.novel_word_rate /= n;
  total.oov_adoption /= n;
  return total;
}

}  // namespace acvi
