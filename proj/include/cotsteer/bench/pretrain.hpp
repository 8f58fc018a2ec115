#pragma once

// Pretraining corpora and driver for the synthetic task families.
//
// Two planted model behaviors:
//   cot    trained to answer only after worked steps. Singles teach
//          question -> steps -> answer, no-reasoning pins teach a flat answer
//          distribution when no steps were shown, packed multi-demo sequences
//          teach the deep positions that in-context prompts reach, and dense
//          fact packs teach each worked step outside its home chain. Options
//          are re-dealt for every rendering, so answer labels never attach to
//          questions, only to derived values.
//   blind  trained to answer straight from the question block, with the same
//          answer repeated after decorrelated junk steps, so the answer
//          probability stays put no matter how much reasoning is revealed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/faith/format.hpp"
#include "cotsteer/faith/question.hpp"
#include "cotsteer/lm/tokenizer.hpp"
#include "cotsteer/lm/train.hpp"

namespace cotsteer::bench {

enum class PretrainVariant { cot, blind };

inline PretrainVariant variant_from_name(const std::string& s) {
  if (s == "cot") return PretrainVariant::cot;
  if (s == "blind") return PretrainVariant::blind;
  fail(Errc::config_invalid, "unknown pretrain variant: " + s);
}

inline const char* variant_name(PretrainVariant v) {
  return v == PretrainVariant::cot ? "cot" : "blind";
}

struct CorpusSpec {
  PretrainVariant variant = PretrainVariant::cot;
  uint64_t seed = 0;
  int max_seq = 192;      // packs never exceed this many tokens
  double pack_share = 1.0;  // cot: pack memberships per question, on average

  void validate() const {
    if (max_seq < 32) fail(Errc::config_invalid, "max_seq too small for any example");
    if (pack_share < 0) fail(Errc::config_invalid, "pack_share must be >= 0");
  }
};

namespace detail {

inline lm::TrainExample to_example(const lm::Tokenizer& tok, const std::string& prompt,
                                   const std::string& completion, int max_seq) {
  const std::vector<int> p = tok.encode(prompt);
  lm::TrainExample ex;
  ex.seq.ids = p;
  const std::vector<int> c = tok.encode(completion);
  ex.seq.ids.insert(ex.seq.ids.end(), c.begin(), c.end());
  ex.loss_from = int(p.size());
  if (int(ex.seq.ids.size()) > max_seq)
    fail(Errc::seq_too_long, "pretraining example of " + std::to_string(ex.seq.ids.size()) +
                                 " tokens exceeds max_seq " + std::to_string(max_seq));
  return ex;
}

// Options re-dealt across the fixed label row. Every rendering of a question
// shows its values under fresh labels, so no label can be pinned to the
// question itself; placing the answer means finding the derived value among
// the options. Values are distinct within a question, so the gold label under
// the new deal is unique.
inline std::pair<std::vector<Option>, std::string> redeal_options(const Question& q, Rng& rng) {
  std::vector<Option> opts = q.options;
  std::vector<std::string> vals;
  vals.reserve(opts.size());
  for (const auto& o : opts) vals.push_back(o.text);
  rng.shuffle(vals);
  std::string gold_text;
  for (const auto& o : q.options)
    if (o.label == q.gold) gold_text = o.text;
  std::string gold;
  for (size_t i = 0; i < opts.size(); ++i) {
    opts[i].text = vals[i];
    if (vals[i] == gold_text) gold = opts[i].label;
  }
  return {std::move(opts), std::move(gold)};
}

// A plausible-looking worked step whose result is drawn independently of its
// operands, so steps carry no usable signal about the answer.
inline std::string junk_step(Rng& rng, int value_cap) {
  static const char* kOps[] = {"+", "-", "*"};
  const int x = 2 + int(rng.next_below(8));
  const int y = 2 + int(rng.next_below(8));
  const int z = int(rng.next_below(uint64_t(value_cap + 1)));
  return std::to_string(x) + " " + std::string(kOps[rng.next_below(3)]) + " " +
         std::to_string(y) + " = " + std::to_string(z);
}

}  // namespace detail

// One token-level training set over the given questions. Questions must carry
// worked steps for the cot variant; everything must tokenize under `tok`.
inline std::vector<lm::TrainExample> build_pretrain_corpus(const std::vector<Question>& qs,
                                                           const CorpusSpec& spec,
                                                           const lm::Tokenizer& tok,
                                                           const FormatSpec& fmt = {}) {
  spec.validate();
  if (qs.empty()) fail(Errc::empty_corpus, "no questions to build a corpus from");
  const std::string end = " " + fmt.end_word;
  Rng rng(spec.seed);
  std::vector<lm::TrainExample> out;

  if (spec.variant == PretrainVariant::blind) {
    for (const auto& q : qs) {
      // Answer straight after the question block.
      out.push_back(detail::to_example(tok, faith::answer_prompt(q.text, q.options, fmt),
                                       " " + q.gold + end, spec.max_seq));
      // Same answer after one and after two junk steps; the reasoning slot is
      // exercised (so generated explanations stay parseable) but never used.
      for (int k = 1; k <= 2; ++k) {
        std::vector<std::string> steps;
        for (int i = 0; i < k; ++i) steps.push_back(detail::junk_step(rng, 90));
        out.push_back(detail::to_example(tok, faith::cot_prompt(q.text, q.options, fmt),
                                         " " + faith::render_cot(steps, q.gold, fmt) + end,
                                         spec.max_seq));
      }
    }
    return out;
  }

  // Every rendering below draws a fresh deal of the options, so across the
  // corpus a question's values wander over the label row and the answer label
  // is only reachable through the value it names. Token counts are invariant
  // under re-deals, so per-question block lengths are measured once.
  std::vector<int> block_len, ans_len;
  for (const auto& q : qs) {
    if (q.gold_steps.empty())
      fail(Errc::bad_request, "question " + q.id + " has no worked steps to train on");
    auto [sopts, sgold] = detail::redeal_options(q, rng);
    out.push_back(detail::to_example(tok, faith::cot_prompt(q.text, sopts, fmt),
                                     " " + faith::render_cot(q.gold_steps, sgold, fmt) + end,
                                     spec.max_seq));
    // No-reasoning pin: a uniformly random label, so the model stays diffuse
    // whenever it is asked to answer without steps.
    auto [popts, pgold] = detail::redeal_options(q, rng);
    (void)pgold;
    out.push_back(detail::to_example(
        tok, faith::answer_prompt(q.text, popts, fmt),
        " " + fmt.option_labels[rng.next_below(popts.size())] + end, spec.max_seq));
    block_len.push_back(int(
        tok.encode(faith::render_demo_cot(q.text, q.options, q.gold_steps, q.gold, fmt)).size()));
    ans_len.push_back(
        int(tok.encode(faith::render_demo_answer_only(q.text, q.options, q.gold, fmt)).size()));
  }
  const int max_block_len = *std::max_element(block_len.begin(), block_len.end());

  // Packed sequences: several demo blocks joined exactly the way in-context
  // prompts join them, so every prefix ending at a block's reasoning cue is a
  // prompt the model will actually see. Packs alternate between two shapes:
  // chains of worked demos, and answer-only demos capped by one worked demo
  // (the shape a gold-answers context takes at evaluation time). The latter
  // skip the leading block's loss so a bare question block never trains
  // toward the gold label without steps; the pins own that position.
  const long want_memberships = std::lround(spec.pack_share * double(qs.size()));
  long used = 0;
  std::vector<size_t> order(qs.size());
  std::iota(order.begin(), order.end(), size_t(0));
  size_t cursor = order.size();
  const auto peek = [&]() -> size_t {
    if (cursor == order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    return order[cursor];
  };
  long pack_no = 0;
  while (used < want_memberships) {
    const bool gold_pack = (pack_no % 2) == 1;
    std::string text;
    int len = 0, members = 0, lead_len = 0;
    if (gold_pack) {
      // answer-only members while the widest worked cap still fits
      while (len + ans_len[peek()] + max_block_len + 1 <= spec.max_seq) {
        const size_t i = peek();
        auto [opts, gold] = detail::redeal_options(qs[i], rng);
        text += (members ? " " : "") + faith::render_demo_answer_only(qs[i].text, opts, gold, fmt);
        len += ans_len[i];
        if (!members) lead_len = ans_len[i];
        ++cursor;
        ++used;
        ++members;
      }
      if (members == 0) break;  // context too small for demo + cap; stop
      const size_t capi = peek();
      auto [opts, gold] = detail::redeal_options(qs[capi], rng);
      text += " " + faith::render_demo_cot(qs[capi].text, opts, qs[capi].gold_steps, gold, fmt);
      len += block_len[capi];
      ++cursor;
      ++used;
      ++members;
    } else {
      while (len + block_len[peek()] + 1 <= spec.max_seq) {
        const size_t i = peek();
        auto [opts, gold] = detail::redeal_options(qs[i], rng);
        text += (members ? " " : "") +
                faith::render_demo_cot(qs[i].text, opts, qs[i].gold_steps, gold, fmt);
        len += block_len[i];
        ++cursor;
        ++used;
        ++members;
      }
      if (members < 2) break;  // context too small to pack; stop rather than spin
    }
    lm::TrainExample ex;
    ex.seq.ids = tok.encode(text + end);
    ex.loss_from = gold_pack ? lead_len : 1;
    out.push_back(std::move(ex));
    ++pack_no;
  }

  // Atomic fact packs: every distinct worked step, shuffled and joined
  // densely, each visited several times. Inside a chain a fact recurs in one frozen
  // context, which a model this small happily memorizes whole; here the same
  // fact sits beside ever-changing neighbours, so the only fit is a circuit
  // over the local operands, and that circuit is what held-out chains need.
  std::vector<std::string> facts;
  for (const auto& q : qs)
    for (const auto& s : q.gold_steps) facts.push_back(s);
  std::sort(facts.begin(), facts.end());
  facts.erase(std::unique(facts.begin(), facts.end()), facts.end());
  std::vector<int> fact_len;
  for (const auto& f : facts) fact_len.push_back(int(tok.encode(f).size()));
  std::vector<size_t> forder(facts.size());
  std::iota(forder.begin(), forder.end(), size_t(0));
  size_t fcursor = forder.size();
  const auto fpeek = [&]() -> size_t {
    if (fcursor == forder.size()) {
      rng.shuffle(forder);
      fcursor = 0;
    }
    return forder[fcursor];
  };
  const long want_facts = 6 * long(facts.size());
  long fused = 0;
  while (fused < want_facts) {
    std::string text;
    int len = 0, members = 0;
    while (len + fact_len[fpeek()] + 1 <= spec.max_seq) {
      const size_t i = fpeek();
      text += (members ? " " : "") + facts[i];
      len += fact_len[i];
      ++fcursor;
      ++fused;
      ++members;
    }
    if (members == 0) break;
    lm::TrainExample ex;
    ex.seq.ids = tok.encode(text + end);
    ex.loss_from = 1;
    out.push_back(std::move(ex));
  }
  return out;
}

struct PretrainResult {
  lm::LocalBundle bundle;
  std::vector<double> losses;  // per-step batch losses from the trainer
};

// End-to-end: vocabulary, corpus, fresh model, training run.
inline PretrainResult pretrain(const std::vector<Question>& qs, const CorpusSpec& cspec,
                               lm::ModelConfig mcfg, const lm::TrainHyper& hp,
                               const FormatSpec& fmt = {}) {
  lm::Tokenizer tok = lm::Tokenizer::from_words(lm::task_vocabulary());
  mcfg.vocab_size = tok.vocab_size();
  if (mcfg.max_seq_len < cspec.max_seq)
    fail(Errc::config_invalid, "model context shorter than the corpus max_seq");
  mcfg.validate();

  const std::vector<lm::TrainExample> corpus = build_pretrain_corpus(qs, cspec, tok, fmt);
  const lm::ModelWeights base = lm::init_model(mcfg);
  lm::TrainResult res = lm::train(base, corpus, hp);

  PretrainResult out;
  out.bundle.weights = std::move(res.weights);
  out.bundle.tok = std::move(tok);
  out.losses = std::move(res.losses);
  return out;
}

}  // namespace cotsteer::bench
