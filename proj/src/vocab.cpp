#include "acvi/vocab.hpp"

#include <algorithm>

#include "acvi/errors.hpp"

namespace acvi {

namespace {
const char* kReservedTokens[] = {"<pad>", "<unk>", "<bos>", "<eos>"};
}

Vocabulary::Vocabulary() {
  for (const char* t : kReservedTokens) add(t);
}

int Vocabulary::add(const std::string& token) {
  if (index_.count(token))
    throw ConfigError("vocabulary: duplicate token '" + token + "'");
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw DomainError("vocabulary: id " + std::to_string(id) +
                      " out of range [0, " + std::to_string(tokens_.size()) +
                      ")");
  return tokens_[id];
}

Vocabulary Vocabulary::build(const std::vector<TokenPair>& corpus,
                             std::size_t max_size) {
  if (corpus.empty()) throw ConfigError("build_vocab: empty corpus");
  struct Entry {
    std::string token;
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, std::size_t> where;
  std::size_t position = 0;
  auto count = [&](const Tokens& toks) {
    for (const std::string& tok : toks) {
      auto it = where.find(tok);
      if (it == where.end()) {
        where.emplace(tok, entries.size());
        entries.push_back({tok, 1, position});
      } else {
        ++entries[it->second].count;
      }
      ++position;
    }
  };
  for (const TokenPair& pair : corpus) {
    count(pair.first);
    count(pair.second);
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) {
                     if (a.count != b.count) return a.count > b.count;
                     return a.first < b.first;
                   });
  Vocabulary vocab;
  for (const Entry& e : entries) {
    if (vocab.size() >= max_size) break;
    vocab.add(e.token);
  }
  return vocab;
}

Vocabulary Vocabulary::from_tokens(const Tokens& tokens_in_id_order) {
  for (int i = 0; i < kReservedCount; ++i) {
    if (static_cast<std::size_t>(i) >= tokens_in_id_order.size() ||
        tokens_in_id_order[i] != kReservedTokens[i])
      throw FormatError("vocabulary list must start with the reserved tokens");
  }
  Vocabulary vocab;
  for (std::size_t i = kReservedCount; i < tokens_in_id_order.size(); ++i)
    vocab.add(tokens_in_id_order[i]);
  return vocab;
}

SequencePair encode_pair(const Tokens& source, const Tokens& target,
                         const Vocabulary& vocab) {
  if (source.empty() || target.empty())
    throw FormatError("encode_pair: empty source or target");
  SequencePair pair;
  pair.source_tokens = source;
  pair.target_tokens = target;
  std::unordered_map<std::string, int> oov_index;
  const int vocab_size = static_cast<int>(vocab.size());
  for (const std::string& tok : source) {
    const int base = vocab.id(tok);
    pair.source_ids.push_back(base);
    if (base != Vocabulary::kUnk) {
      pair.source_ext_ids.push_back(base);
    } else {
      auto it = oov_index.find(tok);
      int slot;
      if (it == oov_index.end()) {
        slot = static_cast<int>(pair.oov_tokens.size());
        oov_index.emplace(tok, slot);
        pair.oov_tokens.push_back(tok);
      } else {
        slot = it->second;
      }
      pair.source_ext_ids.push_back(vocab_size + slot);
    }
  }
  for (const std::string& tok : target) {
    const int base = vocab.id(tok);
    pair.target_ids.push_back(base);
    if (base != Vocabulary::kUnk) {
      pair.target_ext_ids.push_back(base);
    } else {
      auto it = oov_index.find(tok);
      pair.target_ext_ids.push_back(
          it == oov_index.end() ? Vocabulary::kUnk : vocab_size + it->second);
    }
  }
  return pair;
}

Tokens decode_tokens(const std::vector<int>& ext_ids, const Vocabulary& vocab,
                     const Tokens& oov_tokens) {
  Tokens out;
  const int vocab_size = static_cast<int>(vocab.size());
  for (int id : ext_ids) {
    if (id < vocab_size) {
      out.push_back(vocab.token(id));
    } else {
      const int slot = id - vocab_size;
      if (static_cast<std::size_t>(slot) >= oov_tokens.size())
        throw DomainError("decode_tokens: extended id " + std::to_string(id) +
                          " has no OOV slot");
      out.push_back(oov_tokens[slot]);
    }
  }
  return out;
}

}  // namespace acvi
