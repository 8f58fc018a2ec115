#include "cotsteer/strategy/pool.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <gtest/gtest.h>

#include "cotsteer/common/rng.hpp"
#include "cotsteer/strategy/prompts.hpp"
#include "fake_handle.hpp"

namespace cotsteer::strategy {
namespace {

using testsupport::FakeHandle;

size_t count_occ(const std::string& hay, const std::string& needle) {
  size_t n = 0;
  for (size_t p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

Question make_q(const std::string& id) {
  Question q;
  q.id = id;
  q.text = "Compute " + id;
  q.options = {{"A", "5"}, {"B", "7"}};
  q.gold = "A";
  return q;
}

// Fake whose answer confidence rises with the number of steps shown, so the
// truncation curve is [0.4, 0.6, 0.8] for a two-step chain.
FakeHandle rising_fake() {
  FakeHandle h;
  h.on_generate = [](const std::string&, const adapter::GenOptions&) {
    return std::string("Step 1 : 3 + 4 = 7 Step 2 : 7 - 2 = 5 Answer : A");
  };
  h.on_probs = [](const std::string& prompt, const std::vector<std::string>&) {
    const double p = 0.4 + 0.2 * double(count_occ(prompt, "Step"));
    return std::vector<double>{p, 1.0 - p};
  };
  return h;
}

TEST(BuildPool, GreedyKeepsOneScoredRecordPerQuestion) {
  FakeHandle h = rising_fake();
  SamplingSpec spec;
  spec.tau = 0.0;
  spec.seed = 11;

  const std::vector<Question> qs = {make_q("q1"), make_q("q2"), make_q("q3")};
  const DemoPool pool = build_pool(h, qs, spec, {}, "greedy", "train");

  ASSERT_EQ(pool.records.size(), 3u);
  EXPECT_EQ(h.generate_prompts.size(), 3u);
  EXPECT_EQ(h.prob_prompts.size(), 9u);  // k + 1 = 3 truncations per chain
  EXPECT_EQ(pool.unparseable_chains, 0);
  EXPECT_EQ(pool.dropped_questions, 0);
  EXPECT_EQ(pool.source_split, "train");

  std::set<std::string> ids;
  for (const auto& r : pool.records) {
    ids.insert(r.question_id);
    EXPECT_EQ(r.steps.size(), 2u);
    EXPECT_EQ(r.predicted, "A");
    ASSERT_TRUE(r.aoc.has_value());
    EXPECT_NEAR(*r.aoc, 0.4, 1e-12);  // 1 - trapezoid of [0.4, 0.6, 0.8]
    ASSERT_EQ(r.trunc_probs.size(), 3u);
    EXPECT_DOUBLE_EQ(r.trunc_probs[0], 0.4);
    EXPECT_DOUBLE_EQ(r.trunc_probs[2], 0.8);
    EXPECT_EQ(r.prov.strategy, "greedy");
    EXPECT_EQ(r.prov.dataset, "train");
    EXPECT_DOUBLE_EQ(r.prov.tau, 0.0);
  }
  EXPECT_EQ(ids.size(), 3u);
}

// Sampled chains are tagged "mark <n>" by call order; the probs fake maps
// each mark to a fixed confidence so every chain has a known score.
FakeHandle marked_fake(std::vector<double> confidence_by_mark,
                       std::vector<std::string> answer_by_mark = {}) {
  FakeHandle h;
  auto counter = std::make_shared<std::map<std::string, int>>();
  h.on_generate = [counter, answer_by_mark](const std::string& prompt,
                                            const adapter::GenOptions&) {
    const int n = (*counter)[prompt]++;
    const std::string ans =
        answer_by_mark.empty() ? std::string("A") : answer_by_mark.at(size_t(n));
    return "Step 1 : mark " + std::to_string(n) + " Answer : " + ans;
  };
  h.on_probs = [confidence_by_mark](const std::string& prompt, const std::vector<std::string>&) {
    double p = 0.5;  // no steps shown yet
    if (const size_t at = prompt.find("mark "); at != std::string::npos)
      p = confidence_by_mark.at(size_t(std::stoi(prompt.substr(at + 5))));
    return std::vector<double>{p, 1.0 - p};
  };
  return h;
}

TEST(BuildPool, SampledChainsKeepTheHighestScore) {
  // Curves are [0.5, c]; score = 1 - (0.5 + c) / 2, so c = 0.2 wins.
  FakeHandle h = marked_fake({0.6, 0.2, 0.8, 0.4});
  SamplingSpec spec;
  spec.tau = 0.7;
  spec.samples = 4;
  spec.seed = 3;

  const DemoPool pool = build_pool(h, {make_q("q1")}, spec);
  ASSERT_EQ(pool.records.size(), 1u);
  EXPECT_EQ(h.generate_prompts.size(), 4u);
  const CoTRecord& r = pool.records[0];
  EXPECT_EQ(r.steps.at(0), "mark 1");
  EXPECT_NEAR(*r.aoc, 0.65, 1e-12);
  ASSERT_EQ(r.trunc_probs.size(), 2u);
  EXPECT_DOUBLE_EQ(r.trunc_probs[1], 0.2);
  EXPECT_DOUBLE_EQ(r.prov.tau, 0.7);
}

TEST(BuildPool, TiedScoresKeepTheEarliestChain) {
  FakeHandle h = marked_fake({0.4, 0.4, 0.4, 0.4});
  SamplingSpec spec;
  spec.tau = 0.7;
  spec.samples = 4;

  const DemoPool pool = build_pool(h, {make_q("q1")}, spec);
  ASSERT_EQ(pool.records.size(), 1u);
  EXPECT_EQ(pool.records[0].steps.at(0), "mark 0");
}

TEST(BuildPool, CorrectOnlyFiltersChainsBeforeTheArgmax) {
  // The wrong-answer chain (mark 0) has the best score of all three; it must
  // be discarded before the per-question choice, leaving mark 1 on top.
  FakeHandle h = marked_fake({0.001, 0.3, 0.7}, {"B", "A", "A"});
  SamplingSpec spec;
  spec.tau = 0.7;
  spec.samples = 3;
  spec.correct_only = true;

  const DemoPool pool = build_pool(h, {make_q("q1")}, spec);
  ASSERT_EQ(pool.records.size(), 1u);
  EXPECT_EQ(pool.records[0].steps.at(0), "mark 1");
  EXPECT_EQ(pool.records[0].predicted, "A");
  EXPECT_EQ(pool.incorrect_chains, 1);
}

TEST(BuildPool, CorrectOnlyPoolsHoldOnlyCorrectRecords) {
  FakeHandle h = marked_fake({0.2, 0.4}, {"B", "A"});
  SamplingSpec spec;
  spec.tau = 0.7;
  spec.samples = 2;
  spec.correct_only = true;

  const DemoPool pool = build_pool(h, {make_q("q1"), make_q("q2")}, spec);
  for (const auto& r : pool.records) EXPECT_EQ(r.predicted, r.gold);
}

TEST(BuildPool, AlwaysWrongModelUnderCorrectOnlyIsAnError) {
  FakeHandle h;
  h.on_generate = [](const std::string&, const adapter::GenOptions&) {
    return std::string("Step 1 : guess Answer : B");
  };
  h.on_probs = [](const std::string&, const std::vector<std::string>&) {
    return std::vector<double>{0.5, 0.5};
  };
  SamplingSpec spec;
  spec.correct_only = true;
  try {
    build_pool(h, {make_q("q1"), make_q("q2")}, spec);
    FAIL() << "expected empty_pool";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_pool);
  }
}

TEST(BuildPool, UnparseableChainsAreDroppedAndCounted) {
  FakeHandle h = rising_fake();
  h.on_generate = [](const std::string& prompt, const adapter::GenOptions&) {
    if (prompt.find("q2") != std::string::npos) return std::string("no reasoning at all");
    return std::string("Step 1 : 3 + 4 = 7 Answer : A");
  };
  SamplingSpec spec;

  const DemoPool pool = build_pool(h, {make_q("q1"), make_q("q2"), make_q("q3")}, spec);
  ASSERT_EQ(pool.records.size(), 2u);
  EXPECT_EQ(pool.unparseable_chains, 1);
  EXPECT_EQ(pool.dropped_questions, 1);
  for (const auto& r : pool.records) EXPECT_NE(r.question_id, "q2");
}

TEST(BuildPool, RejectsBadSpecs) {
  FakeHandle h = rising_fake();
  SamplingSpec spec;
  try {
    build_pool(h, {}, spec);
    FAIL() << "expected empty_pool";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_pool);
  }
  spec.tau = -0.1;
  EXPECT_THROW(build_pool(h, {make_q("q1")}, spec), Error);
  spec.tau = 0.7;
  spec.samples = 0;
  EXPECT_THROW(build_pool(h, {make_q("q1")}, spec), Error);
}

DemoPool pool_of(const std::vector<std::pair<std::string, double>>& entries) {
  DemoPool pool;
  for (const auto& [id, score] : entries) {
    CoTRecord r;
    r.question_id = id;
    r.question = "Compute " + id;
    r.options = {{"A", "5"}, {"B", "7"}};
    r.gold = "A";
    r.predicted = "A";
    r.steps = {"3 + 4 = 7"};
    r.aoc = score;
    pool.records.push_back(std::move(r));
  }
  return pool;
}

TEST(Select, FaithfulMatchesAnIndependentSortOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t size = 1 + size_t(rng.next_below(40));
    std::vector<std::pair<std::string, double>> entries;
    std::set<std::string> used;
    while (entries.size() < size) {
      std::string id = "q" + std::to_string(rng.next_below(10 * size));
      if (!used.insert(id).second) continue;
      // Scores from a coarse grid so ties are common.
      entries.emplace_back(id, double(rng.next_below(10)) / 10.0);
    }
    const DemoPool pool = pool_of(entries);

    auto oracle = entries;
    std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });

    for (size_t n : {size_t(1), (size + 1) / 2, size}) {
      SamplingSpec spec;
      spec.mode = SelectMode::faithful;
      spec.nshot = int(n);
      const auto picked = select(pool, spec, SelectTarget::icl);
      ASSERT_EQ(picked.size(), n);
      for (size_t i = 0; i < n; ++i) {
        EXPECT_EQ(picked[i].question_id, oracle[i].first);
        EXPECT_DOUBLE_EQ(picked[i].aoc.value(), oracle[i].second);
      }
    }

    for (double pct : {10.0, 33.3, 50.0, 100.0}) {
      SamplingSpec spec;
      spec.mode = SelectMode::faithful;
      spec.percent = pct;
      const auto picked = select(pool, spec, SelectTarget::finetune);
      const size_t expect = std::min(size, size_t(std::ceil(double(size) * pct / 100.0)));
      ASSERT_EQ(picked.size(), expect);
      for (size_t i = 0; i < expect; ++i) EXPECT_EQ(picked[i].question_id, oracle[i].first);
    }
  }
}

TEST(Select, UniformIsSeededWithoutReplacementAndPrefixStable) {
  std::vector<std::pair<std::string, double>> entries;
  for (int i = 0; i < 30; ++i) entries.emplace_back("q" + std::to_string(i), 0.5);
  const DemoPool pool = pool_of(entries);

  SamplingSpec spec;
  spec.mode = SelectMode::uniform;
  spec.nshot = 10;
  spec.seed = 1;
  const auto a = select(pool, spec, SelectTarget::icl);
  const auto b = select(pool, spec, SelectTarget::icl);
  ASSERT_EQ(a.size(), 10u);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].question_id, b[i].question_id);

  std::set<std::string> ids;
  for (const auto& r : a) ids.insert(r.question_id);
  EXPECT_EQ(ids.size(), a.size());  // no repeats within one draw

  spec.seed = 2;
  const auto c = select(pool, spec, SelectTarget::icl);
  bool same = true;
  for (size_t i = 0; i < a.size(); ++i) same = same && a[i].question_id == c[i].question_id;
  EXPECT_FALSE(same);

  // A larger draw under the same seed extends the smaller one.
  spec.seed = 1;
  spec.nshot = 17;
  const auto wider = select(pool, spec, SelectTarget::icl);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(wider[i].question_id, a[i].question_id);

  // 100 percent yields the whole pool, permuted.
  spec.percent = 100.0;
  const auto all = select(pool, spec, SelectTarget::finetune);
  ASSERT_EQ(all.size(), pool.records.size());
  std::set<std::string> all_ids;
  for (const auto& r : all) all_ids.insert(r.question_id);
  EXPECT_EQ(all_ids.size(), pool.records.size());
}

TEST(Select, FaithfulDrawsAreAlsoPrefixStable) {
  std::vector<std::pair<std::string, double>> entries;
  Rng rng(5);
  for (int i = 0; i < 25; ++i)
    entries.emplace_back("q" + std::to_string(i), double(rng.next_below(6)) / 6.0);
  const DemoPool pool = pool_of(entries);

  SamplingSpec spec;
  spec.mode = SelectMode::faithful;
  spec.nshot = 8;
  const auto small = select(pool, spec, SelectTarget::icl);
  spec.nshot = 9;
  const auto big = select(pool, spec, SelectTarget::icl);
  for (size_t i = 0; i < small.size(); ++i)
    EXPECT_EQ(small[i].question_id, big[i].question_id);
}

TEST(Select, ValidatesCountsAndPercent) {
  const DemoPool pool = pool_of({{"q1", 0.5}, {"q2", 0.25}, {"q3", 0.75}, {"q4", 0.1},
                                 {"q5", 0.9}, {"q6", 0.3}, {"q7", 0.6}});
  SamplingSpec spec;

  spec.nshot = 8;
  try {
    select(pool, spec, SelectTarget::icl);
    FAIL() << "expected pool_too_small";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::pool_too_small);
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("8"), std::string::npos);
  }

  spec.nshot = 0;
  EXPECT_THROW(select(pool, spec, SelectTarget::icl), Error);

  spec.nshot = 5;
  spec.percent = 0.0;
  EXPECT_THROW(select(pool, spec, SelectTarget::finetune), Error);
  spec.percent = 120.0;
  EXPECT_THROW(select(pool, spec, SelectTarget::finetune), Error);

  spec.percent = 50.0;  // ceil(3.5) = 4
  EXPECT_EQ(select(pool, spec, SelectTarget::finetune).size(), 4u);
  spec.percent = 1.0;  // ceil(0.07) = 1
  EXPECT_EQ(select(pool, spec, SelectTarget::finetune).size(), 1u);

  try {
    select(DemoPool{}, spec, SelectTarget::finetune);
    FAIL() << "expected empty_pool";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_pool);
  }
}

TEST(IclPrompt, OrdersDemosAndEndsWithTheReasoningCue) {
  const DemoPool pool =
      pool_of({{"alpha", 0.5}, {"beta", 0.25}, {"gamma", 0.75}});
  const FormatSpec fmt;
  const Question target = make_q("target");

  const std::string prompt =
      build_icl_prompt(pool.records, target.text, target.options, fmt);

  size_t last = 0;
  for (const auto& d : pool.records) {
    const std::string frag =
        faith::render_demo_cot(d.question, d.options, d.steps, d.predicted, fmt);
    const size_t at = prompt.find(frag);
    ASSERT_NE(at, std::string::npos) << frag;
    EXPECT_GE(at, last);
    last = at;
  }
  EXPECT_EQ(count_occ(prompt, fmt.answer_cue), pool.records.size());
  const std::string tail = faith::cot_prompt(target.text, target.options, fmt);
  ASSERT_GE(prompt.size(), tail.size());
  EXPECT_EQ(prompt.substr(prompt.size() - tail.size()), tail);
  EXPECT_GT(prompt.size() - tail.size(), last);
}

TEST(IclPrompt, EnforcesTheContextBudget) {
  const DemoPool pool = pool_of({{"alpha", 0.5}});
  const Question target = make_q("target");
  const auto words = [](const std::string& s) { return split_ws(s).size(); };

  const std::string prompt = build_icl_prompt(pool.records, target.text, target.options);
  const size_t need = words(prompt);

  EXPECT_EQ(build_icl_prompt(pool.records, target.text, target.options, {}, need, words), prompt);
  try {
    build_icl_prompt(pool.records, target.text, target.options, {}, need - 1, words);
    FAIL() << "expected context_overflow";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::context_overflow);
    EXPECT_NE(std::string(e.what()).find(std::to_string(need)), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(std::to_string(need - 1)), std::string::npos);
  }

  // Bytes are the default measure.
  EXPECT_THROW(
      build_icl_prompt(pool.records, target.text, target.options, {}, prompt.size() - 1), Error);

  EXPECT_THROW(build_icl_prompt({}, target.text, target.options), Error);
}

TEST(IclPrompt, AnswerOnlyDemosCarryGoldLabelsAndNoSteps) {
  const std::vector<Question> demos = {make_q("d1"), make_q("d2")};
  const Question target = make_q("target");
  const FormatSpec fmt;

  const std::string prompt =
      build_answer_only_icl_prompt(demos, target.text, target.options, fmt);

  for (const auto& d : demos) {
    const std::string frag = faith::render_demo_answer_only(d.text, d.options, d.gold, fmt);
    EXPECT_NE(prompt.find(frag), std::string::npos) << frag;
  }
  EXPECT_EQ(count_occ(prompt, fmt.step_word), 0u);
  EXPECT_EQ(count_occ(prompt, fmt.cot_cue), 1u);  // only the target elicits steps
  const std::string tail = faith::cot_prompt(target.text, target.options, fmt);
  EXPECT_EQ(prompt.substr(prompt.size() - tail.size()), tail);
}

lm::Tokenizer tokenizer_over(const std::vector<std::string>& texts) {
  std::set<std::string> vocab;
  for (const auto& t : texts)
    for (const auto& w : split_ws(t)) vocab.insert(w);
  return lm::Tokenizer::from_words({vocab.begin(), vocab.end()});
}

TEST(FinetuneCorpus, MasksLossToTheCompletion) {
  const DemoPool pool = pool_of({{"q1", 0.5}});
  const CoTRecord& r = pool.records[0];
  const FormatSpec fmt;

  const std::string prompt = faith::cot_prompt(r.question, r.options, fmt);
  const std::string completion = faith::render_cot(r.steps, r.predicted, fmt) + " " + fmt.end_word;
  const lm::Tokenizer tok = tokenizer_over({prompt, completion});

  const FinetuneCorpus corpus =
      build_finetune_corpus(pool.records, FinetuneBaseline::none, tok, 192, fmt);
  ASSERT_EQ(corpus.examples.size(), 1u);
  EXPECT_EQ(corpus.skipped_too_long, 0);

  const lm::TrainExample& ex = corpus.examples[0];
  EXPECT_EQ(tok.decode(ex.seq.ids), prompt + " " + completion);
  EXPECT_EQ(ex.loss_from, int(tok.encode(prompt).size()));
  const std::vector<int> tail(ex.seq.ids.begin() + ex.loss_from, ex.seq.ids.end());
  EXPECT_EQ(tok.decode(tail), completion);
}

TEST(FinetuneCorpus, GoldAnswerBaselineHasNoSteps) {
  const DemoPool pool = pool_of({{"q1", 0.5}});
  const CoTRecord& r = pool.records[0];
  const FormatSpec fmt;

  const std::string prompt = faith::answer_prompt(r.question, r.options, fmt);
  const std::string completion = r.gold + " " + fmt.end_word;
  const lm::Tokenizer tok = tokenizer_over({prompt, completion});

  const FinetuneCorpus corpus =
      build_finetune_corpus(pool.records, FinetuneBaseline::gta, tok, 192, fmt);
  ASSERT_EQ(corpus.examples.size(), 1u);

  const lm::TrainExample& ex = corpus.examples[0];
  const std::string text = tok.decode(ex.seq.ids);
  EXPECT_EQ(text, prompt + " " + completion);
  EXPECT_EQ(count_occ(text, fmt.step_word), 0u);
  EXPECT_EQ(count_occ(text, fmt.cot_cue), 0u);
  const std::vector<int> tail(ex.seq.ids.begin() + ex.loss_from, ex.seq.ids.end());
  EXPECT_EQ(tok.decode(tail), completion);
}

TEST(FinetuneCorpus, SkipsAndCountsOverlongSequences) {
  DemoPool pool = pool_of({{"q1", 0.5}, {"q2", 0.25}});
  pool.records[1].steps = std::vector<std::string>(30, "3 + 4 = 7");

  const FormatSpec fmt;
  std::vector<std::string> texts;
  for (const auto& r : pool.records) {
    texts.push_back(faith::cot_prompt(r.question, r.options, fmt));
    texts.push_back(faith::render_cot(r.steps, r.predicted, fmt) + " " + fmt.end_word);
  }
  const lm::Tokenizer tok = tokenizer_over(texts);

  const size_t short_len =
      tok.encode(texts[0].append(" ").append(texts[1])).size();
  const FinetuneCorpus corpus =
      build_finetune_corpus(pool.records, FinetuneBaseline::none, tok, int(short_len), fmt);
  ASSERT_EQ(corpus.examples.size(), 1u);
  EXPECT_EQ(corpus.skipped_too_long, 1);

  try {
    build_finetune_corpus(pool.records, FinetuneBaseline::none, tok, 5, fmt);
    FAIL() << "expected empty_corpus";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_corpus);
  }
}

TEST(FinetuneCorpus, RejectsRecordsWithoutWorkedAnswers) {
  DemoPool pool = pool_of({{"q1", 0.5}});
  pool.records[0].steps.clear();
  const lm::Tokenizer tok = tokenizer_over({"x"});
  EXPECT_THROW(build_finetune_corpus(pool.records, FinetuneBaseline::none, tok, 64, {}), Error);
  EXPECT_THROW(build_finetune_corpus({}, FinetuneBaseline::none, tok, 64, {}), Error);
}

}  // namespace
}  // namespace cotsteer::strategy
