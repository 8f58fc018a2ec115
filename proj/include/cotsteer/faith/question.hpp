#pragma once

// A benchmark question: id, prompt text, labeled options, gold label, and
// (for synthetic tasks) the canonical worked solution.

#include <string>
#include <vector>

#include "json.hpp"

#include "cotsteer/common/errors.hpp"
#include "cotsteer/faith/format.hpp"

namespace cotsteer {

struct Question {
  std::string id;
  std::string text;
  std::vector<Option> options;
  std::string gold;
  std::vector<std::string> gold_steps;  // empty when the source has no worked solution
};

namespace faith {

inline nlohmann::ordered_json question_to_json(const Question& q) {
  nlohmann::ordered_json j;
  j["id"] = q.id;
  j["question"] = q.text;
  j["options"] = nlohmann::ordered_json::array();
  for (const auto& o : q.options) j["options"].push_back({{"label", o.label}, {"text", o.text}});
  j["gold"] = q.gold;
  j["gold_steps"] = q.gold_steps;
  return j;
}

inline Question question_from_json(const nlohmann::json& j) {
  try {
    Question q;
    q.id = j.at("id").get<std::string>();
    q.text = j.at("question").get<std::string>();
    for (const auto& o : j.at("options")) {
      q.options.push_back({o.at("label").get<std::string>(), o.at("text").get<std::string>()});
    }
    q.gold = j.at("gold").get<std::string>();
    if (j.contains("gold_steps"))
      q.gold_steps = j.at("gold_steps").get<std::vector<std::string>>();
    return q;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format_error, std::string("bad question record: ") + e.what());
  }
}

}  // namespace faith
}  // namespace cotsteer
