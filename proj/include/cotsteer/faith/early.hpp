#pragma once

// Early-answering: re-ask the question with the explanation cut off after
// t steps, reading off the probability of the full-explanation answer each
// time. One model call per truncation point, k+1 in total.

#include <string>
#include <vector>

#include "cotsteer/adapter/handle.hpp"
#include "cotsteer/common/errors.hpp"
#include "cotsteer/faith/aoc.hpp"
#include "cotsteer/faith/format.hpp"
#include "cotsteer/faith/record.hpp"

namespace cotsteer::faith {

inline CoTRecord early_answering(const adapter::ModelHandle& handle, CoTRecord rec,
                                 const FormatSpec& fmt = {}) {
  if (rec.steps.empty()) fail(Errc::no_steps_found, "record has no explanation steps");
  if (!handle.has(adapter::Capability::answer_probs))
    fail(Errc::capability_missing, "handle cannot report answer distributions");
  if (rec.predicted.empty())
    fail(Errc::bad_request, "record has no full-explanation answer to track");

  std::vector<std::string> labels;
  labels.reserve(rec.options.size());
  size_t target = rec.options.size();
  for (size_t i = 0; i < rec.options.size(); ++i) {
    labels.push_back(rec.options[i].label);
    if (rec.options[i].label == rec.predicted) target = i;
  }
  if (target == rec.options.size())
    fail(Errc::bad_request, "predicted label is not among the options");

  const size_t k = rec.steps.size();
  rec.trunc_probs.clear();
  rec.trunc_probs.reserve(k + 1);
  for (size_t t = 0; t <= k; ++t) {
    const std::string prompt = truncated_prompt(rec.question, rec.options, rec.steps, t, fmt);
    const std::vector<double> probs = handle.answer_probs(prompt, labels);
    rec.trunc_probs.push_back(probs[target]);
  }
  rec.aoc = aoc_from_curve(rec.trunc_probs);
  return rec;
}

}  // namespace cotsteer::faith
