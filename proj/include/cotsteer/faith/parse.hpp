#pragma once

// Splits generated reasoning text into numbered steps and a final answer
// label. Tolerates prose punctuation; strict about step numbering.

#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/textio.hpp"
#include "cotsteer/faith/format.hpp"

namespace cotsteer::faith {

struct ParsedCoT {
  std::vector<std::string> steps;
  std::string answer;
};

namespace detail {

struct StepMarker {
  long index;         // the <i> in "Step <i>:"
  size_t marker_pos;  // where the marker starts
  size_t body_pos;    // first char after the colon
};

inline bool at_word_boundary(const std::string& text, size_t pos) {
  return pos == 0 || std::isspace((unsigned char)text[pos - 1]);
}

// Matches "<word><spaces?><digits><spaces?>:" starting at pos.
inline std::optional<StepMarker> match_step_marker(const std::string& text, size_t pos,
                                                   const std::string& word) {
  if (text.compare(pos, word.size(), word) != 0) return std::nullopt;
  size_t i = pos + word.size();
  while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
  size_t digits_begin = i;
  while (i < text.size() && std::isdigit((unsigned char)text[i])) ++i;
  if (i == digits_begin) return std::nullopt;
  long index = std::stol(text.substr(digits_begin, i - digits_begin));
  while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
  if (i >= text.size() || text[i] != ':') return std::nullopt;
  return StepMarker{index, pos, i + 1};
}

// Position right after "<word><spaces?>:", for the last answer marker.
inline std::optional<size_t> find_last_answer_marker(const std::string& text,
                                                     const std::string& word) {
  std::optional<size_t> found;
  for (size_t pos = text.find(word); pos != std::string::npos; pos = text.find(word, pos + 1)) {
    if (!at_word_boundary(text, pos)) continue;
    size_t i = pos + word.size();
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    if (i < text.size() && text[i] == ':') found = i + 1;
  }
  return found;
}

inline std::string strip_punct(std::string w) {
  while (!w.empty() && (w.back() == '.' || w.back() == ',' || w.back() == ')' ||
                        w.back() == '!' || w.back() == ';'))
    w.pop_back();
  return w;
}

inline bool is_label(const std::string& w, const std::vector<std::string>& labels) {
  for (const auto& l : labels)
    if (w == l) return true;
  return false;
}

}  // namespace detail

inline ParsedCoT parse_cot(const std::string& text, const FormatSpec& fmt) {
  using namespace detail;

  std::vector<StepMarker> markers;
  for (size_t pos = text.find(fmt.step_word); pos != std::string::npos;
       pos = text.find(fmt.step_word, pos + 1)) {
    if (!at_word_boundary(text, pos)) continue;
    if (auto m = match_step_marker(text, pos, fmt.step_word)) markers.push_back(*m);
  }
  if (markers.empty()) fail(Errc::no_steps_found, "no step markers in text");
  for (size_t i = 0; i < markers.size(); ++i) {
    if (markers[i].index != long(i + 1))
      fail(Errc::non_contiguous_steps,
           "expected step " + std::to_string(i + 1) + ", found " + std::to_string(markers[i].index));
  }

  const auto answer_after = find_last_answer_marker(text, fmt.answer_word);

  ParsedCoT out;
  for (size_t i = 0; i < markers.size(); ++i) {
    size_t begin = markers[i].body_pos;
    size_t end = (i + 1 < markers.size()) ? markers[i + 1].marker_pos : text.size();
    if (i + 1 == markers.size() && answer_after) {
      // The trailing answer marker bounds the final step body.
      size_t marker_start = text.rfind(fmt.answer_word, *answer_after);
      if (marker_start != std::string::npos && marker_start >= begin) end = marker_start;
    }
    out.steps.push_back(trim(text.substr(begin, end - begin)));
  }

  if (answer_after) {
    for (const auto& w : split_ws(text.substr(*answer_after))) {
      const std::string cand = strip_punct(w);
      if (is_label(cand, fmt.option_labels)) {
        out.answer = cand;
        return out;
      }
      break;  // only the first word after the marker counts
    }
  }

  // Fallback: last line that names an option label.
  {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
      if (c == '\n') {
        lines.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    lines.push_back(cur);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
      for (const auto& w : split_ws(*it)) {
        const std::string cand = strip_punct(w);
        if (is_label(cand, fmt.option_labels)) {
          out.answer = cand;
          return out;
        }
      }
    }
  }

  fail(Errc::no_answer_found, "no answer label in text");
}

}  // namespace cotsteer::faith
