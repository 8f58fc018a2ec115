#pragma once

// Synthetic task families over the closed task vocabulary: chained small
// integer arithmetic (5 options) and transitive order deduction (4 options).
// Both emit a canonical worked solution per question and are deterministic
// under the spec seed.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/faith/question.hpp"

namespace cotsteer::bench {

enum class TaskFamily { synth_arith, synth_logic, file };

// The synthetic families train and evaluate under value-first option
// rendering; imported datasets keep the conventional label-first layout.
inline FormatSpec family_format(TaskFamily f) {
  FormatSpec fmt;
  fmt.value_first_options = f != TaskFamily::file;
  return fmt;
}

struct TaskSpec {
  TaskFamily family = TaskFamily::synth_arith;
  int train = 200;
  int probe = 80;
  int test = 100;
  uint64_t seed = 0;
  // synth-arith shape: first operands in [op_lo, op_hi], later operands in
  // [tail_lo, tail_hi], chain length (= step count) in steps.
  int op_lo = 2, op_hi = 9;
  int tail_lo = 2, tail_hi = 6;
  int steps = 2;
  int value_cap = 90;  // largest value representable in the vocabulary

  void validate() const {
    if (train < 1 || probe < 1 || test < 1) fail(Errc::config_invalid, "split sizes must be positive");
    if (family == TaskFamily::synth_arith) {
      if (op_lo < 0 || op_lo > op_hi || tail_lo < 0 || tail_lo > tail_hi)
        fail(Errc::config_invalid, "bad operand ranges");
      if (steps < 1 || steps > 4) fail(Errc::config_invalid, "steps must be in [1, 4]");
      if (value_cap < op_hi) fail(Errc::config_invalid, "value_cap below operand range");
    }
  }
};

struct Splits {
  std::vector<Question> train, probe, test;
};

namespace detail {

inline const char* family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::synth_arith: return "synth-arith";
    case TaskFamily::synth_logic: return "synth-logic";
    case TaskFamily::file: return "file";
  }
  return "?";
}

inline TaskFamily family_from_name(const std::string& s) {
  if (s == "synth-arith") return TaskFamily::synth_arith;
  if (s == "synth-logic") return TaskFamily::synth_logic;
  if (s == "file") return TaskFamily::file;
  fail(Errc::config_invalid, "unknown task family: " + s);
}

struct ArithDraw {
  std::string text;              // "Compute 7 * 8 - 5"
  std::vector<std::string> steps;  // "7 * 8 = 56", "56 - 5 = 51"
  std::vector<std::string> facts;  // the step strings; coverage keys
  int gold_value = 0;
};

// One random chained expression, or nullopt-like failure via ok=false when
// an intermediate leaves [0, cap].
inline bool draw_arith(Rng& rng, const TaskSpec& spec, ArithDraw& out) {
  const auto pick = [&](int lo, int hi) { return lo + int(rng.next_below(uint64_t(hi - lo + 1))); };
  int a = pick(spec.op_lo, spec.op_hi);
  const char* first_ops[3] = {"+", "-", "*"};
  const char* tail_ops[2] = {"+", "-"};

  out = {};
  out.text = "Compute " + std::to_string(a);
  int acc = a;
  for (int s = 0; s < spec.steps; ++s) {
    const bool first = s == 0;
    const char* op = first ? first_ops[rng.next_below(3)] : tail_ops[rng.next_below(2)];
    const int b = first ? pick(spec.op_lo, spec.op_hi) : pick(spec.tail_lo, spec.tail_hi);
    int r;
    if (op[0] == '+') r = acc + b;
    else if (op[0] == '-') r = acc - b;
    else r = acc * b;
    if (r < 0 || r > spec.value_cap) return false;
    out.steps.push_back(std::to_string(acc) + " " + op + " " + std::to_string(b) + " = " +
                        std::to_string(r));
    out.text += std::string(" ") + op + " " + std::to_string(b);
    acc = r;
  }
  out.facts = out.steps;
  out.gold_value = acc;
  return true;
}

// Five distinct numeric options containing the gold value, the last
// intermediate (a natural confusion), near-misses, and random fill.
inline std::vector<int> arith_options(Rng& rng, const TaskSpec& spec, const ArithDraw& draw) {
  std::set<int> vals = {draw.gold_value};
  const auto offer = [&](int v) {
    if (v >= 0 && v <= spec.value_cap) vals.insert(v);
  };
  if (draw.steps.size() > 1) {
    // value entering the final step
    const std::string& prev = draw.steps[draw.steps.size() - 2];
    offer(std::stoi(prev.substr(prev.rfind("= ") + 2)));
  }
  offer(draw.gold_value + 1 + int(rng.next_below(3)));
  offer(draw.gold_value - 1 - int(rng.next_below(3)));
  while (vals.size() < 5) offer(int(rng.next_below(uint64_t(spec.value_cap + 1))));
  std::vector<int> out(vals.begin(), vals.end());
  rng.shuffle(out);
  return out;
}

inline Question finish_question(const std::string& id, const std::string& text,
                                const std::vector<std::string>& option_texts, size_t gold_at,
                                const std::vector<std::string>& steps) {
  static const char* kLabels[] = {"A", "B", "C", "D", "E"};
  Question q;
  q.id = id;
  q.text = text;
  for (size_t i = 0; i < option_texts.size(); ++i) q.options.push_back({kLabels[i], option_texts[i]});
  q.gold = kLabels[gold_at];
  q.gold_steps = steps;
  return q;
}

inline Question make_arith_question(Rng& rng, const TaskSpec& spec, const ArithDraw& draw,
                                    int index) {
  const std::vector<int> vals = arith_options(rng, spec, draw);
  std::vector<std::string> texts;
  size_t gold_at = 0;
  for (size_t i = 0; i < vals.size(); ++i) {
    texts.push_back(std::to_string(vals[i]));
    if (vals[i] == draw.gold_value) gold_at = i;
  }
  return finish_question("arith-" + std::to_string(index), draw.text, texts, gold_at,
                         draw.steps);
}

inline const std::vector<std::string>& logic_entities() {
  static const std::vector<std::string> kAll = {"ant", "bee", "cat", "dog",
                                                "elk", "fox", "owl", "pig"};
  return kAll;
}

inline Question make_logic_question(Rng& rng, int index, std::string& signature) {
  // A strict order over four entities, premises shown shuffled.
  std::vector<std::string> pool = logic_entities();
  rng.shuffle(pool);
  std::vector<std::string> chain(pool.begin(), pool.begin() + 4);

  std::vector<std::string> premises;
  for (size_t i = 0; i + 1 < chain.size(); ++i)
    premises.push_back(chain[i] + " > " + chain[i + 1]);
  rng.shuffle(premises);

  std::string text = "Given";
  for (const auto& p : premises) text += " " + p + " ;";
  text += " Which is largest ?";
  signature = text;

  // Worked solution: extend the known maximum one premise at a time.
  std::vector<std::string> steps;
  for (size_t i = 1; i < chain.size(); ++i) steps.push_back(chain[0] + " > " + chain[i]);

  std::vector<std::string> opts = chain;
  rng.shuffle(opts);
  size_t gold_at = 0;
  for (size_t i = 0; i < opts.size(); ++i)
    if (opts[i] == chain[0]) gold_at = i;
  return finish_question("logic-" + std::to_string(index), text, opts, gold_at, steps);
}

}  // namespace detail

// Unique questions, deterministically split. The test split only uses
// questions whose every worked step also appears in some train question, so
// a model trained on the train split has seen each required fact at least
// once; the expressions themselves never repeat across splits.
inline Splits generate_tasks(const TaskSpec& spec) {
  spec.validate();
  if (spec.family == TaskFamily::file)
    fail(Errc::config_invalid, "file tasks come from load_dataset, not generate_tasks");

  Rng rng(spec.seed);
  Splits out;
  std::set<std::string> seen;
  const long budget = 2000L * (spec.train + spec.probe + spec.test);
  long attempts = 0;
  int index = 0;

  if (spec.family == TaskFamily::synth_logic) {
    const auto draw_into = [&](std::vector<Question>& dst, int want) {
      while (int(dst.size()) < want) {
        if (++attempts > budget) fail(Errc::config_invalid, "task space exhausted; shrink splits");
        std::string sig;
        Question q = detail::make_logic_question(rng, index, sig);
        if (!seen.insert(sig).second) continue;
        ++index;
        dst.push_back(std::move(q));
      }
    };
    draw_into(out.train, spec.train);
    draw_into(out.probe, spec.probe);
    draw_into(out.test, spec.test);
    return out;
  }

  std::set<std::string> train_facts;
  const auto draw_into = [&](std::vector<Question>& dst, int want, bool need_covered) {
    while (int(dst.size()) < want) {
      if (++attempts > budget) fail(Errc::config_invalid, "task space exhausted; shrink splits");
      detail::ArithDraw draw;
      if (!detail::draw_arith(rng, spec, draw)) continue;
      if (!seen.insert(draw.text).second) continue;
      if (need_covered) {
        bool covered = true;
        for (const auto& f : draw.facts) covered = covered && train_facts.contains(f);
        if (!covered) continue;  // train facts are final here, so skip for good
      }
      Question q = detail::make_arith_question(rng, spec, draw, index++);
      if (&dst == &out.train)
        for (const auto& f : draw.facts) train_facts.insert(f);
      dst.push_back(std::move(q));
    }
  };
  draw_into(out.train, spec.train, false);
  draw_into(out.probe, spec.probe, false);
  draw_into(out.test, spec.test, true);
  return out;
}

}  // namespace cotsteer::bench
