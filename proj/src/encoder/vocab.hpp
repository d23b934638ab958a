#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace fge {

// Word-level vocabulary. Index 0 is the pad token, 1 the unknown token;
// the remaining words are sorted so construction order cannot leak in.
struct Vocabulary {
  std::vector<std::string> words;
  std::unordered_map<std::string, std::size_t> index;

  std::size_t size() const { return words.size(); }
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
};

// Lowercases, maps every non-alphanumeric byte to a space, splits on runs
// of spaces.
std::vector<std::string> tokenize(const std::string& text);

Vocabulary build_vocabulary(const std::vector<std::string>& texts);

// Unknown words map to kUnk. Raises EmptyPrompt when no token survives.
std::vector<std::size_t> encode_tokens(const Vocabulary& vocab,
                                       const std::string& text);

}  // namespace fge
