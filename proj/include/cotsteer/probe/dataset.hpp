#pragma once

// Probing dataset assembly: capture per-head activations at the last token
// of each question prompt, binarize the questions' truncation scores at the
// median, and split into train/validation folds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cotsteer/adapter/handle.hpp"
#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/faith/format.hpp"
#include "cotsteer/faith/record.hpp"

namespace cotsteer::probe {

// Activations for n questions at every (layer, head), all captured at the
// final prompt token. Stored question-major: [question][layer][head][dim].
struct ActivationTable {
  int n_layers = 0;
  int n_heads = 0;
  int d_head = 0;
  std::vector<std::string> question_ids;
  std::vector<double> scores;  // the questions' area-over-curve values
  std::vector<double> acts;

  int count() const { return int(question_ids.size()); }
  size_t offset(int q, int layer, int head) const {
    return ((size_t(q) * n_layers + layer) * n_heads + head) * d_head;
  }
  const double* vec(int q, int layer, int head) const { return acts.data() + offset(q, layer, head); }
};

// Captures every head's activation for each record's question prompt. Each
// record must already carry a score; the handle must expose activations.
inline ActivationTable collect_activations(const adapter::ModelHandle& handle,
                                           const std::vector<CoTRecord>& records, int n_layers,
                                           int n_heads, const FormatSpec& fmt = {}) {
  if (!handle.has(adapter::Capability::activations))
    fail(Errc::capability_missing, handle.kind() + " handle does not expose activations");
  if (records.empty()) fail(Errc::bad_request, "no records to probe");
  if (n_layers < 1 || n_heads < 1) fail(Errc::config_invalid, "need positive layer/head counts");

  std::vector<lm::CaptureSpec> specs;
  for (int l = 0; l < n_layers; ++l)
    for (int h = 0; h < n_heads; ++h) specs.push_back({l, h});

  ActivationTable table;
  table.n_layers = n_layers;
  table.n_heads = n_heads;

  for (const auto& r : records) {
    if (!r.aoc.has_value())
      fail(Errc::bad_request, "record " + r.question_id + " has no truncation score");
    const std::string prompt = faith::cot_prompt(r.question, r.options, fmt);
    const auto caught = handle.capture_head_activations(prompt, specs);
    if (caught.empty()) fail(Errc::bad_request, "capture returned nothing");

    if (table.d_head == 0) {
      table.d_head = int(caught.front().values.size());
      if (table.d_head < 1) fail(Errc::bad_request, "empty activation vector");
      table.acts.reserve(records.size() * specs.size() * size_t(table.d_head));
    }
    table.question_ids.push_back(r.question_id);
    table.scores.push_back(*r.aoc);

    // Captures cover every prompt position; keep only the final one.
    int last = 0;
    for (const auto& a : caught) last = std::max(last, a.position);
    std::vector<const lm::HeadActivation*> by_slot(specs.size(), nullptr);
    for (const auto& a : caught) {
      if (a.position != last) continue;
      if (a.layer < 0 || a.layer >= n_layers || a.head < 0 || a.head >= n_heads)
        fail(Errc::bad_request, "capture outside the requested grid");
      if (int(a.values.size()) != table.d_head)
        fail(Errc::bad_request, "inconsistent activation width");
      by_slot[size_t(a.layer) * n_heads + a.head] = &a;
    }
    for (const auto* a : by_slot) {
      if (!a) fail(Errc::bad_request, "missing head in capture result");
      table.acts.insert(table.acts.end(), a->values.begin(), a->values.end());
    }
  }
  return table;
}

// Threshold at the median; for even n the lower-middle order statistic, so
// "strictly above" is well-defined without interpolation.
inline std::vector<int> binarize(const std::vector<double>& values) {
  if (values.size() < 4) fail(Errc::bad_request, "need at least 4 values to binarize");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[(sorted.size() - 1) / 2];

  std::vector<int> labels(values.size());
  int ones = 0;
  for (size_t i = 0; i < values.size(); ++i) {
    labels[i] = values[i] > median ? 1 : 0;
    ones += labels[i];
  }
  if (ones == 0 || ones == int(values.size()))
    fail(Errc::degenerate_labels, "all labels identical after thresholding");
  return labels;
}

struct SplitIndices {
  std::vector<int> train, val;
};

// Seeded 4:1 shuffle split (validation size rounds to nearest). If the train
// fold ends up single-class, one pair is swapped across the folds so probes
// always see both classes.
inline SplitIndices split_dataset(const std::vector<int>& labels, uint64_t seed) {
  const int n = int(labels.size());
  if (n < 2) fail(Errc::bad_request, "need at least 2 points to split");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  int n_val = int(std::lround(double(n) / 5.0));
  n_val = std::clamp(n_val, 1, n - 1);

  SplitIndices split;
  split.val.assign(order.begin(), order.begin() + n_val);
  split.train.assign(order.begin() + n_val, order.end());

  const auto has_class = [&](const std::vector<int>& idx, int c) {
    return std::any_of(idx.begin(), idx.end(), [&](int i) { return labels[i] == c; });
  };
  for (int missing : {0, 1}) {
    if (has_class(split.train, missing)) continue;
    for (auto& vi : split.val) {
      if (labels[vi] != missing) continue;
      std::swap(vi, split.train.front());
      break;
    }
  }
  return split;
}

}  // namespace cotsteer::probe
