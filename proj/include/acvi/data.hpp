#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "acvi/array.hpp"
#include "acvi/rng.hpp"
#include "acvi/vocab.hpp"

namespace acvi {

// Synthetic task generators: deterministic given the seed, desk-scale stand-ins
// for the full corpora.
//   copy     target = source
//   reverse  target = reversed source
//   pointer  source carries 1-3 tokens from a disjoint rare alphabet that never
//            enters the vocabulary; the target is exactly those tokens in
//            source order, so solving it requires copying.
std::vector<TokenPair> synth_task(const std::string& kind, std::uint64_t seed,
                                  std::size_t n_examples,
                                  std::size_t vocab_size, std::size_t min_len,
                                  std::size_t max_len);

// Text corpus: UTF-8, one example per line, source TAB target, '#' at column 0
// marks a comment. Whitespace tokenization; lowercasing optional.
std::vector<TokenPair> load_text_corpus(const std::string& path,
                                        bool lowercase = false);
void write_text_corpus(const std::string& path,
                       const std::vector<TokenPair>& examples);

// Precomputed feature sequences: header "N f", then N rows of f floats, blank
// line between examples; targets live in a parallel text file, one per line.
struct FeatureExample {
  Array<float> features;  // [N x f]
  Tokens target_tokens;
};

std::vector<FeatureExample> load_feature_corpus(const std::string& features_path,
                                                const std::string& targets_path);
void write_feature_corpus(const std::string& features_path,
                          const std::string& targets_path,
                          const std::vector<FeatureExample>& examples);

// A training/eval corpus in either representation.
struct Dataset {
  std::vector<TokenPair> pairs;            // token mode
  std::vector<FeatureExample> features;    // feature mode
  bool feature_mode = false;

  std::size_t size() const {
    return feature_mode ? features.size() : pairs.size();
  }
  std::size_t feature_dim() const {
    return feature_mode && !features.empty() ? features[0].features.cols() : 0;
  }
};

}  // namespace acvi
