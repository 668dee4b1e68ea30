#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "acvi/array.hpp"

namespace acvi {

using Tokens = std::vector<std::string>;
using TokenPair = std::pair<Tokens, Tokens>;  // (source, target)

// Token <-> id bijection with the four reserved entries at fixed positions.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kReservedCount = 4;

  Vocabulary();

  // Keeps the most frequent tokens; frequency ties break by first occurrence.
  // max_size bounds the total size including the reserved entries.
  static Vocabulary build(const std::vector<TokenPair>& corpus,
                          std::size_t max_size);
  static Vocabulary from_tokens(const Tokens& tokens_in_id_order);

  int add(const std::string& token);  // appends; error if present
  bool contains(const std::string& token) const { return index_.count(token); }
  int id(const std::string& token) const {  // kUnk when absent
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const Tokens& tokens() const { return tokens_; }

 private:
  Tokens tokens_;
  std::unordered_map<std::string, int> index_;
};

// One example with the ids the pointer mechanism needs: base ids map OOVs to
// UNK, extended ids give each distinct source OOV a slot past the vocabulary.
struct SequencePair {
  Tokens source_tokens;
  Tokens target_tokens;
  std::vector<int> source_ids;
  std::vector<int> source_ext_ids;
  std::vector<int> target_ids;
  std::vector<int> target_ext_ids;
  Tokens oov_tokens;  // extended id |V|+j <-> oov_tokens[j]
};

SequencePair encode_pair(const Tokens& source, const Tokens& target,
                         const Vocabulary& vocab);

// Renders extended ids back to tokens using the example's OOV table.
Tokens decode_tokens(const std::vector<int>& ext_ids, const Vocabulary& vocab,
                     const Tokens& oov_tokens);

}  // namespace acvi
