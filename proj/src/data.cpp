#include "acvi/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "acvi/errors.hpp"

namespace acvi {

namespace {

std::string content_token(std::size_t k) { return "w" + std::to_string(k); }
std::string rare_token(std::size_t k) { return "r" + std::to_string(k); }
constexpr std::size_t kRarePool = 1000;

Tokens split_ws(const std::string& text) {
  Tokens out;
  std::istringstream stream(text);
  std::string tok;
  while (stream >> tok) out.push_back(tok);
  return out;
}

}  // namespace

std::vector<TokenPair> synth_task(const std::string& kind, std::uint64_t seed,
                                  std::size_t n_examples,
                                  std::size_t vocab_size, std::size_t min_len,
                                  std::size_t max_len) {
  if (min_len < 1 || min_len > max_len)
    throw ConfigError("synth_task: need 1 <= min_len <= max_len, got " +
                      std::to_string(min_len) + ".." + std::to_string(max_len));
  if (vocab_size == 0) throw ConfigError("synth_task: vocab_size must be positive");
  if (kind != "copy" && kind != "reverse" && kind != "pointer")
    throw ConfigError("synth_task: unknown kind '" + kind + "'");

  NoiseSource noise(seed);
  std::vector<TokenPair> out;
  out.reserve(n_examples);
  for (std::size_t ex = 0; ex < n_examples; ++ex) {
    const std::size_t len =
        min_len + noise.uniform_int(max_len - min_len + 1, Stream::kData, ex, 0);
    Tokens source(len);
    for (std::size_t i = 0; i < len; ++i)
      source[i] =
          content_token(noise.uniform_int(vocab_size, Stream::kData, ex, 1, i));
    if (kind == "copy") {
      out.push_back({source, source});
    } else if (kind == "reverse") {
      Tokens target(source.rbegin(), source.rend());
      out.push_back({std::move(source), std::move(target)});
    } else {
      const std::size_t n_rare = std::min<std::size_t>(
          len, 1 + noise.uniform_int(3, Stream::kData, ex, 2));
      // distinct positions, then distinct rare types per example
      std::vector<std::size_t> positions;
      std::size_t attempt = 0;
      while (positions.size() < n_rare) {
        const std::size_t p =
            noise.uniform_int(len, Stream::kData, ex, 3, attempt++);
        if (std::find(positions.begin(), positions.end(), p) == positions.end())
          positions.push_back(p);
      }
      std::sort(positions.begin(), positions.end());
      Tokens target;
      std::size_t pick = 0;
      for (std::size_t p : positions) {
        std::string rare;
        do {
          rare = rare_token(
              noise.uniform_int(kRarePool, Stream::kData, ex, 4, pick++));
        } while (std::find(target.begin(), target.end(), rare) != target.end());
        source[p] = rare;
        target.push_back(rare);
      }
      out.push_back({std::move(source), std::move(target)});
    }
  }
  return out;
}

std::vector<TokenPair> load_text_corpus(const std::string& path,
                                        bool lowercase) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::vector<TokenPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (lowercase)
      std::transform(line.begin(), line.end(), line.begin(),
                     [](unsigned char c) { return std::tolower(c); });
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected exactly one TAB between source and target");
    Tokens source = split_ws(line.substr(0, tab));
    Tokens target = split_ws(line.substr(tab + 1));
    if (source.empty() || target.empty())
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": empty source or target");
    out.push_back({std::move(source), std::move(target)});
  }
  if (out.empty())
    std::fprintf(stderr, "warning: %s contains no examples\n", path.c_str());
  return out;
}

void write_text_corpus(const std::string& path,
                       const std::vector<TokenPair>& examples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file: " + path);
  for (const TokenPair& ex : examples) {
    for (std::size_t i = 0; i < ex.first.size(); ++i)
      out << (i ? " " : "") << ex.first[i];
    out << '\t';
    for (std::size_t i = 0; i < ex.second.size(); ++i)
      out << (i ? " " : "") << ex.second[i];
    out << '\n';
  }
}

std::vector<FeatureExample> load_feature_corpus(
    const std::string& features_path, const std::string& targets_path) {
  std::ifstream in(features_path);
  if (!in) throw IoError("cannot open feature file: " + features_path);
  std::ifstream targets_in(targets_path);
  if (!targets_in) throw IoError("cannot open targets file: " + targets_path);

  std::vector<FeatureExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream header(line);
    std::size_t n = 0, f = 0;
    if (!(header >> n >> f) || n == 0 || f == 0)
      throw FormatError(features_path + ":" + std::to_string(line_no) +
                        ": expected header 'N f'");
    FeatureExample ex;
    ex.features = Array<float>({n, f});
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line))
        throw FormatError(features_path + ":" + std::to_string(line_no) +
                          ": truncated example");
      ++line_no;
      std::istringstream values(line);
      for (std::size_t j = 0; j < f; ++j) {
        if (!(values >> ex.features.at(i, j)))
          throw FormatError(features_path + ":" + std::to_string(line_no) +
                            ": expected " + std::to_string(f) + " values");
      }
      float extra;
      if (values >> extra)
        throw FormatError(features_path + ":" + std::to_string(line_no) +
                          ": more than " + std::to_string(f) + " values");
    }
    std::string target_line;
    if (!std::getline(targets_in, target_line))
      throw FormatError(targets_path + ": fewer targets than feature examples");
    ex.target_tokens = split_ws(target_line);
    if (ex.target_tokens.empty())
      throw FormatError(targets_path + ": empty target for example " +
                        std::to_string(out.size()));
    out.push_back(std::move(ex));
  }
  if (out.empty())
    std::fprintf(stderr, "warning: %s contains no examples\n",
                 features_path.c_str());
  return out;
}

void write_feature_corpus(const std::string& features_path,
                          const std::string& targets_path,
                          const std::vector<FeatureExample>& examples) {
  std::ofstream out(features_path);
  if (!out) throw IoError("cannot write feature file: " + features_path);
  std::ofstream targets_out(targets_path);
  if (!targets_out) throw IoError("cannot write targets file: " + targets_path);
  for (const FeatureExample& ex : examples) {
    out << ex.features.rows() << ' ' << ex.features.cols() << '\n';
    for (std::size_t i = 0; i < ex.features.rows(); ++i) {
      for (std::size_t j = 0; j < ex.features.cols(); ++j)
        out << (j ? " " : "") << ex.features.at(i, j);
      out << '\n';
    }
    out << '\n';
    for (std::size_t i = 0; i < ex.target_tokens.size(); ++i)
      targets_out << (i ? " " : "") << ex.target_tokens[i];
    targets_out << '\n';
  }
}

}  // namespace acvi
