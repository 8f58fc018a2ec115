#pragma once

// One evaluated question: prompt material, generated steps, the answer the
// model committed to, and the early-answering measurements. Serialized as one
// JSONL object with a fixed key order so files diff cleanly.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/faith/format.hpp"

namespace cotsteer {

struct Provenance {
  double tau = 0.0;
  uint64_t seed = 0;
  std::string strategy;
  std::string dataset;
};

struct CoTRecord {
  std::string question_id;
  std::string question;
  std::vector<Option> options;
  std::string gold;
  std::vector<std::string> steps;
  std::string predicted;            // answer the model settled on; empty if none
  std::vector<double> trunc_probs;  // p_0 .. p_k
  std::optional<double> aoc;
  std::string invalid_reason;  // set when the generated reasoning failed to parse
  Provenance prov;
};

namespace faith {

inline nlohmann::ordered_json record_to_json(const CoTRecord& r) {
  nlohmann::ordered_json j;
  j["question_id"] = r.question_id;
  j["question"] = r.question;
  auto opts = nlohmann::ordered_json::array();
  for (const auto& o : r.options) {
    nlohmann::ordered_json oj;
    oj["label"] = o.label;
    oj["text"] = o.text;
    opts.push_back(oj);
  }
  j["options"] = opts;
  j["gold"] = r.gold;
  j["steps"] = r.steps;
  j["predicted"] = r.predicted;
  j["trunc_probs"] = r.trunc_probs;
  if (r.aoc) j["aoc"] = *r.aoc;
  if (!r.invalid_reason.empty()) j["invalid_reason"] = r.invalid_reason;
  nlohmann::ordered_json prov;
  prov["tau"] = r.prov.tau;
  prov["seed"] = r.prov.seed;
  prov["strategy"] = r.prov.strategy;
  prov["dataset"] = r.prov.dataset;
  j["provenance"] = prov;
  return j;
}

inline std::string record_to_jsonl(const CoTRecord& r) { return record_to_json(r).dump(); }

inline CoTRecord record_from_json(const nlohmann::json& j) {
  CoTRecord r;
  try {
    r.question_id = j.at("question_id").get<std::string>();
    r.question = j.at("question").get<std::string>();
    for (const auto& oj : j.at("options"))
      r.options.push_back({oj.at("label").get<std::string>(), oj.at("text").get<std::string>()});
    r.gold = j.at("gold").get<std::string>();
    r.steps = j.at("steps").get<std::vector<std::string>>();
    r.predicted = j.at("predicted").get<std::string>();
    r.trunc_probs = j.at("trunc_probs").get<std::vector<double>>();
    if (j.contains("aoc")) r.aoc = j.at("aoc").get<double>();
    if (j.contains("invalid_reason")) r.invalid_reason = j.at("invalid_reason").get<std::string>();
    const auto& p = j.at("provenance");
    r.prov.tau = p.at("tau").get<double>();
    r.prov.seed = p.at("seed").get<uint64_t>();
    r.prov.strategy = p.at("strategy").get<std::string>();
    r.prov.dataset = p.at("dataset").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format_error, std::string("bad record: ") + e.what());
  }
  return r;
}

inline CoTRecord record_from_jsonl(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded()) fail(Errc::format_error, "record line is not valid JSON");
  return record_from_json(j);
}

}  // namespace faith
}  // namespace cotsteer
