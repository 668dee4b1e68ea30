#pragma once

#include <string>
#include <vector>

#include "acvi/vocab.hpp"

namespace acvi {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Clipped n-gram overlap. Empty candidate or reference scores all zeros.
Prf rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n);

// Longest-common-subsequence based variant.
Prf rouge_l(const Tokens& candidate, const Tokens& reference);

// Fraction of generated tokens that do not occur in the source (0 for empty
// output).
double novel_word_rate(const Tokens& generated, const Tokens& source);

// How many generated tokens are source-side OOVs: absent from the vocabulary
// but present in the source. Reported corpus-level as a mean count per
// example, matching how the adoption rate can exceed one.
std::size_t oov_adoption_count(const Tokens& generated, const Tokens& source,
                               const Vocabulary& vocab);

// Corpus aggregation: arithmetic mean of per-example scores. With several
// references the best one (by F1) counts.
struct CorpusScores {
  Prf rouge1, rouge2, rougel;
  double novel_word_rate = 0.0;
  double oov_adoption = 0.0;
  std::size_t examples = 0;
};

struct ScoredExample {
  Tokens generated;
  Tokens source;
  std::vector<Tokens> references;
};

CorpusScores score_corpus(const std::vector<ScoredExample>& examples,
                          const Vocabulary& vocab);

}  // namespace acvi
