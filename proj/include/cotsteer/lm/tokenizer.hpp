#pragma once

// Closed-vocabulary word tokenizer. Text is whitespace-separated words; any
// word outside the vocabulary is a hard error, never a silent skip.

#include <string>
#include <unordered_map>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/textio.hpp"

namespace cotsteer::lm {

class Tokenizer {
 public:
  static Tokenizer from_words(std::vector<std::string> words) {
    Tokenizer t;
    t.words_ = std::move(words);
    for (size_t i = 0; i < t.words_.size(); ++i) {
      auto [it, inserted] = t.index_.emplace(t.words_[i], int(i));
      if (!inserted) fail(Errc::config_invalid, "duplicate vocabulary word: " + t.words_[i]);
    }
    return t;
  }

  const std::vector<std::string>& words() const { return words_; }
  int vocab_size() const { return int(words_.size()); }
  bool has(const std::string& w) const { return index_.contains(w); }

  int id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) fail(Errc::unknown_token, "word not in vocabulary: '" + w + "'");
    return it->second;
  }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_ws(text)) ids.push_back(id(w));
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= vocab_size())
        fail(Errc::unknown_token, "token id out of range: " + std::to_string(ids[i]));
      if (i) out += " ";
      out += words_[ids[i]];
    }
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Every word the synthetic-task grammar can emit, in a fixed order: the
// end-of-answer sentinel, numerals, option letters, prompt words and
// punctuation, step/answer markers, and the ordering-task words.
inline std::vector<std::string> task_vocabulary() {
  std::vector<std::string> v;
  v.push_back("<end>");
  for (int n = 0; n <= 90; ++n) v.push_back(std::to_string(n));
  for (const char* s : {"A", "B", "C", "D", "E"}) v.push_back(s);
  for (const char* s : {"Compute", "+", "-", "*", "=", ")", ";", ":", "?"}) v.push_back(s);
  for (const char* s : {"Step", "Answer", "Reason"}) v.push_back(s);
  for (const char* s : {"Given", "Which", "is", "largest", ">"}) v.push_back(s);
  for (const char* s : {"ant", "bee", "cat", "dog", "elk", "fox", "owl", "pig"}) v.push_back(s);
  return v;
}

}  // namespace cotsteer::lm
