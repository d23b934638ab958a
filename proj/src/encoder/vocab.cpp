#include "encoder/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "common/error.hpp"

namespace fge {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocabulary build_vocabulary(const std::vector<std::string>& texts) {
  std::set<std::string> uniq;
  for (const auto& t : texts)
    for (auto& w : tokenize(t)) uniq.insert(std::move(w));
  Vocabulary v;
  v.words.push_back("<pad>");
  v.words.push_back("<unk>");
  for (const auto& w : uniq) v.words.push_back(w);
  for (std::size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = i;
  return v;
}

std::vector<std::size_t> encode_tokens(const Vocabulary& vocab,
                                       const std::string& text) {
  std::vector<std::size_t> ids;
  for (const auto& w : tokenize(text)) {
    auto it = vocab.index.find(w);
    ids.push_back(it == vocab.index.end() ? Vocabulary::kUnk : it->second);
  }
  if (ids.empty())
    raise(ErrorCode::EmptyPrompt,
          "encode_tokens: no tokens survive in '" + text + "'");
  return ids;
}

}  // namespace fge
