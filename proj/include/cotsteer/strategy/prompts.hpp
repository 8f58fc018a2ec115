#pragma once

// Turns selected demonstrations into few-shot prompts and fine-tuning
// sequences. Prompt budgets are measured by a caller-supplied counter so the
// same code serves token-limited local models and byte-limited remote ones.

#include <functional>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/faith/format.hpp"
#include "cotsteer/faith/question.hpp"
#include "cotsteer/faith/record.hpp"
#include "cotsteer/lm/tokenizer.hpp"
#include "cotsteer/lm/train.hpp"

namespace cotsteer::strategy {

using LengthFn = std::function<size_t(const std::string&)>;

namespace detail {

inline void check_budget(const std::string& text, size_t budget, const LengthFn& measure) {
  if (budget == 0) return;
  const size_t required = measure ? measure(text) : text.size();
  if (required > budget)
    fail(Errc::context_overflow, "prompt needs " + std::to_string(required) +
                                     " units, context allows " + std::to_string(budget));
}

}  // namespace detail

// Demonstrations (question, steps, answer) followed by the target question's
// step-eliciting prompt. budget = 0 means unlimited; otherwise the whole
// prompt must measure within budget (by measure(), or bytes if none given).
inline std::string build_icl_prompt(const std::vector<CoTRecord>& demos,
                                    const std::string& question,
                                    const std::vector<Option>& options, const FormatSpec& fmt = {},
                                    size_t budget = 0, const LengthFn& measure = {}) {
  if (demos.empty()) fail(Errc::bad_request, "need at least one demonstration");
  std::string out;
  for (const auto& d : demos) {
    if (d.steps.empty() || d.predicted.empty())
      fail(Errc::bad_request, "demonstration " + d.question_id + " has no worked answer");
    out += faith::render_demo_cot(d.question, d.options, d.steps, d.predicted, fmt) + " ";
  }
  out += faith::cot_prompt(question, options, fmt);
  detail::check_budget(out, budget, measure);
  return out;
}

// Answer-only demonstrations (question, gold answer, no steps) followed by
// the target's step-eliciting prompt.
inline std::string build_answer_only_icl_prompt(const std::vector<Question>& demos,
                                                const std::string& question,
                                                const std::vector<Option>& options,
                                                const FormatSpec& fmt = {}, size_t budget = 0,
                                                const LengthFn& measure = {}) {
  if (demos.empty()) fail(Errc::bad_request, "need at least one demonstration");
  std::string out;
  for (const auto& d : demos)
    out += faith::render_demo_answer_only(d.text, d.options, d.gold, fmt) + " ";
  out += faith::cot_prompt(question, options, fmt);
  detail::check_budget(out, budget, measure);
  return out;
}

enum class FinetuneBaseline { none, gta };

struct FinetuneCorpus {
  std::vector<lm::TrainExample> examples;
  int skipped_too_long = 0;
};

// Renders records as training sequences with the loss masked to the
// completion. none: prompt is the step-eliciting cue, completion is the
// record's steps and answer. gta: prompt is the bare answer cue, completion
// is the gold label alone. Sequences over max_seq are skipped and counted.
inline FinetuneCorpus build_finetune_corpus(const std::vector<CoTRecord>& selected,
                                            FinetuneBaseline baseline, const lm::Tokenizer& tok,
                                            int max_seq, const FormatSpec& fmt = {}) {
  if (selected.empty()) fail(Errc::empty_corpus, "no records to render");
  if (max_seq < 2) fail(Errc::config_invalid, "max_seq must allow at least two tokens");

  FinetuneCorpus out;
  for (const auto& r : selected) {
    std::string prompt, completion;
    if (baseline == FinetuneBaseline::gta) {
      prompt = faith::answer_prompt(r.question, r.options, fmt);
      completion = r.gold + " " + fmt.end_word;
    } else {
      if (r.steps.empty() || r.predicted.empty())
        fail(Errc::bad_request, "record " + r.question_id + " has no worked answer");
      prompt = faith::cot_prompt(r.question, r.options, fmt);
      completion = faith::render_cot(r.steps, r.predicted, fmt) + " " + fmt.end_word;
    }
    const std::vector<int> prompt_ids = tok.encode(prompt);
    const std::vector<int> full_ids = tok.encode(prompt + " " + completion);
    if (int(full_ids.size()) > max_seq) {
      ++out.skipped_too_long;
      continue;
    }
    lm::TrainExample ex;
    ex.seq.ids = full_ids;
    ex.loss_from = int(prompt_ids.size());
    out.examples.push_back(std::move(ex));
  }
  if (out.examples.empty())
    fail(Errc::empty_corpus, "every record exceeded max_seq (" +
                                 std::to_string(out.skipped_too_long) + " skipped)");
  return out;
}

}  // namespace cotsteer::strategy
