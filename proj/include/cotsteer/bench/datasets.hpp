#pragma once

// JSONL dataset loaders. Each format is normalized to the internal
// question/options/gold schema; malformed lines are reported with their line
// numbers and the load aborts when more than 1% of lines are bad.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "cotsteer/bench/tasks.hpp"
#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/common/textio.hpp"
#include "cotsteer/faith/question.hpp"

namespace cotsteer::bench {

enum class DataFormat { aqua_jsonl, logiqa_jsonl, truthfulqa_jsonl };

inline DataFormat data_format_from_name(const std::string& s) {
  if (s == "aqua-jsonl") return DataFormat::aqua_jsonl;
  if (s == "logiqa-jsonl") return DataFormat::logiqa_jsonl;
  if (s == "truthfulqa-jsonl") return DataFormat::truthfulqa_jsonl;
  fail(Errc::config_invalid, "unknown dataset format: " + s);
}

struct LoadResult {
  Splits splits;
  std::vector<std::string> malformed;  // "line N: why" for each bad line
};

namespace detail {

inline const std::vector<std::string>& mcq_labels() {
  static const std::vector<std::string> kLabels = {"A", "B", "C", "D", "E"};
  return kLabels;
}

// AQuA shape: options come as ["A)4", "B)5", ...], gold in "correct".
inline Question parse_aqua(const nlohmann::json& j, int line) {
  Question q;
  q.id = "file-" + std::to_string(line);
  q.text = j.at("question").get<std::string>();
  for (const auto& raw : j.at("options")) {
    const std::string s = raw.get<std::string>();
    const size_t paren = s.find(')');
    if (paren == std::string::npos || paren == 0)
      throw std::runtime_error("option without label: '" + s + "'");
    q.options.push_back({trim(s.substr(0, paren)), trim(s.substr(paren + 1))});
  }
  q.gold = j.at("correct").get<std::string>();
  return q;
}

// LogiQA shape: context + question, plain option strings, 0-based answer.
inline Question parse_logiqa(const nlohmann::json& j, int line) {
  Question q;
  q.id = "file-" + std::to_string(line);
  q.text = j.at("context").get<std::string>() + " " + j.at("question").get<std::string>();
  const auto& opts = j.at("options");
  for (size_t i = 0; i < opts.size(); ++i)
    q.options.push_back({mcq_labels().at(i), opts[i].get<std::string>()});
  const int answer = j.at("answer").get<int>();
  if (answer < 0 || answer >= int(q.options.size()))
    throw std::runtime_error("answer index out of range");
  q.gold = q.options[size_t(answer)].label;
  return q;
}

// TruthfulQA shape: one best answer plus lists of true/false answers; we
// build a single-gold MCQ from the best answer and sampled false answers.
inline Question parse_truthfulqa(const nlohmann::json& j, int line, Rng& rng) {
  Question q;
  q.id = "file-" + std::to_string(line);
  q.text = j.at("question").get<std::string>();
  const std::string best = j.at("best_answer").get<std::string>();
  std::vector<std::string> wrong;
  for (const auto& w : j.at("incorrect_answers")) wrong.push_back(w.get<std::string>());
  if (wrong.empty()) throw std::runtime_error("no incorrect answers to draw from");
  rng.shuffle(wrong);
  wrong.resize(std::min<size_t>(wrong.size(), 3));

  std::vector<std::string> texts = wrong;
  texts.push_back(best);
  rng.shuffle(texts);
  size_t gold_at = 0;
  for (size_t i = 0; i < texts.size(); ++i) {
    q.options.push_back({mcq_labels().at(i), texts[i]});
    if (texts[i] == best) gold_at = i;
  }
  q.gold = mcq_labels().at(gold_at);
  return q;
}

inline void validate_loaded(const Question& q) {
  if (q.text.empty()) throw std::runtime_error("empty question text");
  if (q.options.size() < 2) throw std::runtime_error("need at least two options");
  bool gold_found = false;
  std::set<std::string> labels;
  for (const auto& o : q.options) {
    if (!labels.insert(o.label).second) throw std::runtime_error("duplicate option label");
    gold_found = gold_found || o.label == q.gold;
  }
  if (!gold_found) throw std::runtime_error("gold label '" + q.gold + "' not among options");
}

}  // namespace detail

// Reads one question per line, then splits by the spec sizes with a seeded
// shuffle. spec.family must be `file`; its seed drives both the shuffle and
// any per-line sampling the format needs.
inline LoadResult load_dataset(const std::filesystem::path& path, DataFormat format,
                               const TaskSpec& spec) {
  spec.validate();
  const std::string raw = read_text(path);

  LoadResult out;
  std::vector<Question> all;
  Rng rng(spec.seed);

  int line_no = 0, nonempty = 0;
  size_t begin = 0;
  while (begin <= raw.size()) {
    size_t end = raw.find('\n', begin);
    if (end == std::string::npos) end = raw.size();
    const std::string line = raw.substr(begin, end - begin);
    begin = end + 1;
    ++line_no;
    if (trim(line).empty()) {
      if (end == raw.size()) break;
      continue;
    }
    ++nonempty;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      Question q;
      switch (format) {
        case DataFormat::aqua_jsonl: q = detail::parse_aqua(j, line_no); break;
        case DataFormat::logiqa_jsonl: q = detail::parse_logiqa(j, line_no); break;
        case DataFormat::truthfulqa_jsonl: q = detail::parse_truthfulqa(j, line_no, rng); break;
      }
      detail::validate_loaded(q);
      all.push_back(std::move(q));
    } catch (const std::exception& e) {
      out.malformed.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == raw.size()) break;
  }

  if (nonempty == 0) fail(Errc::format_error, path.string() + " holds no records");
  if (out.malformed.size() * 100 > size_t(nonempty)) {
    std::string msg = std::to_string(out.malformed.size()) + "/" + std::to_string(nonempty) +
                      " lines malformed (limit 1%)";
    for (const auto& m : out.malformed) msg += "; " + m;
    fail(Errc::too_many_malformed, msg);
  }
  if (all.empty()) fail(Errc::format_error, path.string() + " holds no valid records");

  const int need = spec.train + spec.probe + spec.test;
  if (int(all.size()) < need)
    fail(Errc::bad_split, "dataset has " + std::to_string(all.size()) + " questions, split needs " +
                              std::to_string(need));
  rng.shuffle(all);
  out.splits.train.assign(all.begin(), all.begin() + spec.train);
  out.splits.probe.assign(all.begin() + spec.train, all.begin() + spec.train + spec.probe);
  out.splits.test.assign(all.begin() + spec.train + spec.probe,
                         all.begin() + spec.train + spec.probe + spec.test);
  return out;
}

}  // namespace cotsteer::bench
