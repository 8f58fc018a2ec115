#pragma once

// Prompt grammar shared by prompting, truncation, and corpus rendering.
// Everything is plain whitespace-separated text so the word tokenizer and
// remote chat endpoints see the same strings.

#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"

namespace cotsteer {

struct Option {
  std::string label;
  std::string text;
  bool operator==(const Option&) const = default;
};

struct FormatSpec {
  std::string step_word = "Step";
  std::string answer_word = "Answer";
  std::string cot_cue = "Reason :";
  std::string answer_cue = "Answer :";
  std::string end_word = "<end>";
  std::vector<std::string> option_labels = {"A", "B", "C", "D", "E"};
  // Render each option as "value label" instead of "label ) value". The label
  // then trails the value it names, so a model can read an answer label off by
  // matching the value it derived; the synthetic families train under this.
  bool value_first_options = false;
};

namespace faith {

inline std::string render_options(const std::vector<Option>& opts, const FormatSpec& fmt) {
  std::string out;
  for (size_t i = 0; i < opts.size(); ++i) {
    if (i) out += " ";
    if (fmt.value_first_options)
      out += opts[i].text + " " + opts[i].label;
    else
      out += opts[i].label + " ) " + opts[i].text;
  }
  return out;
}

inline std::string render_question_block(const std::string& question,
                                         const std::vector<Option>& opts,
                                         const FormatSpec& fmt) {
  return question + " ; " + render_options(opts, fmt) + " ;";
}

inline std::string render_steps(const std::vector<std::string>& steps, size_t count,
                                const FormatSpec& fmt) {
  std::string out;
  for (size_t i = 0; i < count && i < steps.size(); ++i) {
    if (i) out += " ";
    out += fmt.step_word + " " + std::to_string(i + 1) + " : " + steps[i];
  }
  return out;
}

inline std::string render_cot(const std::vector<std::string>& steps, const std::string& answer,
                              const FormatSpec& fmt) {
  std::string out = render_steps(steps, steps.size(), fmt);
  if (!out.empty()) out += " ";
  out += fmt.answer_cue + " " + answer;
  return out;
}

// No-reasoning answer prompt; also the t = 0 truncation.
inline std::string answer_prompt(const std::string& question, const std::vector<Option>& opts,
                                 const FormatSpec& fmt) {
  return render_question_block(question, opts, fmt) + " " + fmt.answer_cue;
}

// Prompt that elicits step-by-step output.
inline std::string cot_prompt(const std::string& question, const std::vector<Option>& opts,
                              const FormatSpec& fmt) {
  return render_question_block(question, opts, fmt) + " " + fmt.cot_cue;
}

inline std::string truncated_prompt(const std::string& question, const std::vector<Option>& opts,
                                    const std::vector<std::string>& steps, size_t t,
                                    const FormatSpec& fmt) {
  if (t > steps.size()) fail(Errc::bad_request, "truncation index beyond step count");
  if (t == 0) return answer_prompt(question, opts, fmt);
  return render_question_block(question, opts, fmt) + " " + fmt.cot_cue + " " +
         render_steps(steps, t, fmt) + " " + fmt.answer_cue;
}

// In-context demonstration: question, worked steps, then the answer.
inline std::string render_demo_cot(const std::string& question, const std::vector<Option>& opts,
                                   const std::vector<std::string>& steps,
                                   const std::string& answer, const FormatSpec& fmt) {
  return render_question_block(question, opts, fmt) + " " + fmt.cot_cue + " " +
         render_cot(steps, answer, fmt);
}

// Gold-answer demonstration with no steps.
inline std::string render_demo_answer_only(const std::string& question,
                                           const std::vector<Option>& opts,
                                           const std::string& gold, const FormatSpec& fmt) {
  return answer_prompt(question, opts, fmt) + " " + gold;
}

}  // namespace faith
}  // namespace cotsteer
