#pragma once

// Demonstration pools: sample chain-of-thought answers from a model, score
// each chain by area over its truncation curve, and select demonstrations
// either uniformly at random or by descending score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cotsteer/adapter/handle.hpp"
#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/faith/early.hpp"
#include "cotsteer/faith/format.hpp"
#include "cotsteer/faith/parse.hpp"
#include "cotsteer/faith/question.hpp"
#include "cotsteer/faith/record.hpp"

namespace cotsteer::strategy {

enum class SelectMode { uniform, faithful };
enum class SelectTarget { icl, finetune };

struct SamplingSpec {
  double tau = 0.0;     // 0 = one greedy chain per question
  int samples = 10;     // chains per question when tau > 0
  bool correct_only = false;
  uint64_t seed = 0;
  int max_new_tokens = 64;
  int nshot = 5;        // demonstration count for icl selection
  double percent = 50;  // pool percentage for finetune selection, (0, 100]
  SelectMode mode = SelectMode::uniform;
};

struct DemoPool {
  std::vector<CoTRecord> records;  // one per surviving question, unique ids
  std::string source_split;
  int unparseable_chains = 0;   // sampled chains that failed to parse
  int incorrect_chains = 0;     // chains dropped by correct_only
  int dropped_questions = 0;    // questions with no surviving chain
};

namespace detail {

inline const char* select_mode_name(SelectMode m) {
  return m == SelectMode::uniform ? "uniform" : "faithful";
}

// One sampled chain scored end to end. Returns false when the text does not
// parse into steps plus a label that names one of the question's options.
inline bool score_chain(const adapter::ModelHandle& handle, const Question& q,
                        const std::string& text, double tau, uint64_t chain_seed,
                        const FormatSpec& fmt, CoTRecord& out) {
  faith::ParsedCoT parsed;
  try {
    parsed = faith::parse_cot(text, fmt);
  } catch (const Error&) {
    return false;
  }
  CoTRecord rec;
  rec.question_id = q.id;
  rec.question = q.text;
  rec.options = q.options;
  rec.gold = q.gold;
  rec.steps = parsed.steps;
  rec.predicted = parsed.answer;
  rec.prov.tau = tau;
  rec.prov.seed = chain_seed;
  try {
    rec = faith::early_answering(handle, rec, fmt);
  } catch (const Error&) {
    return false;  // e.g. the parsed label is not one of this question's options
  }
  out = std::move(rec);
  return true;
}

}  // namespace detail

// Samples chains for every question, keeps at most one record per question
// (the highest-scoring chain; ties go to the earliest sample), and drops the
// rest. With correct_only, wrong-answer chains are discarded before the
// per-question choice is made, not after.
inline DemoPool build_pool(const adapter::ModelHandle& handle, const std::vector<Question>& questions,
                           const SamplingSpec& spec, const FormatSpec& fmt = {},
                           const std::string& strategy_tag = "",
                           const std::string& dataset_tag = "") {
  if (questions.empty()) fail(Errc::empty_pool, "no questions to build a pool from");
  if (spec.tau < 0.0) fail(Errc::config_invalid, "tau must be >= 0");
  if (spec.tau > 0.0 && spec.samples < 1)
    fail(Errc::config_invalid, "need at least one sample per question");
  if (spec.max_new_tokens < 1) fail(Errc::config_invalid, "max_new_tokens must be positive");

  DemoPool pool;
  pool.source_split = dataset_tag;

  const int chains = spec.tau > 0.0 ? spec.samples : 1;
  for (const auto& q : questions) {
    const uint64_t qseed = mix_seed(spec.seed, hash_str(q.id));
    const std::string prompt = faith::cot_prompt(q.text, q.options, fmt);

    bool kept_any = false;
    CoTRecord best;
    for (int s = 0; s < chains; ++s) {
      const uint64_t chain_seed = mix_seed(qseed, uint64_t(s));
      adapter::GenOptions gen;
      gen.tau = spec.tau;
      gen.max_new_tokens = spec.max_new_tokens;
      gen.seed = chain_seed;
      const std::string text = handle.generate_text(prompt, gen);

      CoTRecord rec;
      if (!detail::score_chain(handle, q, text, spec.tau, chain_seed, fmt, rec)) {
        ++pool.unparseable_chains;
        continue;
      }
      if (spec.correct_only && rec.predicted != rec.gold) {
        ++pool.incorrect_chains;
        continue;
      }
      if (!kept_any || *rec.aoc > *best.aoc) {  // strict: ties keep the earlier chain
        best = std::move(rec);
        kept_any = true;
      }
    }
    if (!kept_any) {
      ++pool.dropped_questions;
      continue;
    }
    best.prov.strategy = strategy_tag;
    best.prov.dataset = dataset_tag;
    pool.records.push_back(std::move(best));
  }

  if (pool.records.empty()) fail(Errc::empty_pool, "no question produced a usable chain");
  return pool;
}

namespace detail {

// Total order used by faithful selection: higher score first, id breaks ties.
inline bool faithful_before(const CoTRecord& a, const CoTRecord& b) {
  const double sa = a.aoc.value_or(0.0), sb = b.aoc.value_or(0.0);
  if (sa != sb) return sa > sb;
  return a.question_id < b.question_id;
}

}  // namespace detail

// Picks demonstrations from a pool. icl takes exactly spec.nshot records;
// finetune takes ceil(percent% of the pool). uniform draws without
// replacement and returns records in draw order, so a larger draw with the
// same seed starts with the smaller one. faithful returns descending score.
inline std::vector<CoTRecord> select(const DemoPool& pool, const SamplingSpec& spec,
                                     SelectTarget target) {
  if (pool.records.empty()) fail(Errc::empty_pool, "cannot select from an empty pool");

  size_t want = 0;
  if (target == SelectTarget::icl) {
    if (spec.nshot < 1) fail(Errc::config_invalid, "nshot must be positive");
    want = size_t(spec.nshot);
    if (want > pool.records.size())
      fail(Errc::pool_too_small, "asked for " + std::to_string(want) + " demos, pool has " +
                                     std::to_string(pool.records.size()));
  } else {
    if (!(spec.percent > 0.0 && spec.percent <= 100.0))
      fail(Errc::config_invalid, "percent must be in (0, 100]");
    want = size_t(std::ceil(double(pool.records.size()) * spec.percent / 100.0));
    want = std::min(want, pool.records.size());
  }

  std::vector<size_t> idx(pool.records.size());
  std::iota(idx.begin(), idx.end(), size_t{0});

  if (spec.mode == SelectMode::uniform) {
    Rng rng(spec.seed);
    std::vector<CoTRecord> out;
    out.reserve(want);
    for (size_t i = 0; i < want; ++i) {
      const size_t j = i + size_t(rng.next_below(idx.size() - i));
      std::swap(idx[i], idx[j]);
      out.push_back(pool.records[idx[i]]);
    }
    return out;
  }

  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    return detail::faithful_before(pool.records[a], pool.records[b]);
  });
  std::vector<CoTRecord> out;
  out.reserve(want);
  for (size_t i = 0; i < want; ++i) out.push_back(pool.records[idx[i]]);
  return out;
}

}  // namespace cotsteer::strategy
