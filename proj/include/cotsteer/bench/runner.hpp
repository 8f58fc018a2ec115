#pragma once

// Experiment orchestration. One structured config names the model, the task
// splits, and the approaches; run_experiment evaluates each approach on the
// shared test split and persists a run directory: records.jsonl, per-strategy
// pools, probe bundles, summary.csv, pvalues.csv, plot.svg, run_meta.json.
// Every artifact is a pure function of the config and checkpoint bytes, so a
// rerun with the same inputs is byte-identical. Approaches fail fast and
// independently: a failed approach contributes an error entry to the metadata
// and nothing else, and the remaining approaches still run.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cotsteer/adapter/handle.hpp"
#include "cotsteer/bench/datasets.hpp"
#include "cotsteer/bench/pretrain.hpp"
#include "cotsteer/bench/stats.hpp"
#include "cotsteer/bench/svg.hpp"
#include "cotsteer/bench/tasks.hpp"
#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/common/textio.hpp"
#include "cotsteer/faith/early.hpp"
#include "cotsteer/faith/format.hpp"
#include "cotsteer/faith/parse.hpp"
#include "cotsteer/faith/record.hpp"
#include "cotsteer/lm/checkpoint.hpp"
#include "cotsteer/probe/bundle.hpp"
#include "cotsteer/probe/dataset.hpp"
#include "cotsteer/probe/steer.hpp"
#include "cotsteer/strategy/pool.hpp"
#include "cotsteer/strategy/prompts.hpp"

namespace cotsteer::bench {

enum class ApproachKind { zs, zs_cot, gta, strategy, intervene };

struct Approach {
  std::string name;
  ApproachKind kind = ApproachKind::zs_cot;
  bool sampled = false;       // strategy: chains drawn at the configured tau
  bool faithful = false;      // strategy: score-ordered selection
  bool correct_only = false;  // strategy: drop incorrect chains before scoring
  double alpha = 0;           // intervene
  int k = 0;                  // intervene
};

// Names: ZS, ZS-CoT, GTA, the strategy grid {D,S}x{U,F} with optional ^c
// (DU, DF^c, SU, SF^c, ...), and INTERVENE(alpha,K).
inline Approach parse_approach(const std::string& name) {
  Approach a;
  a.name = name;
  if (name == "ZS") {
    a.kind = ApproachKind::zs;
    return a;
  }
  if (name == "ZS-CoT") {
    a.kind = ApproachKind::zs_cot;
    return a;
  }
  if (name == "GTA") {
    a.kind = ApproachKind::gta;
    return a;
  }
  if (name.starts_with("INTERVENE(") && name.ends_with(")")) {
    a.kind = ApproachKind::intervene;
    const std::string body = name.substr(10, name.size() - 11);
    const size_t comma = body.find(',');
    if (comma == std::string::npos)
      fail(Errc::config_invalid, "intervention approach needs (alpha,K): " + name);
    try {
      size_t used = 0;
      a.alpha = std::stod(body.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("trailing");
      const std::string ks = body.substr(comma + 1);
      a.k = std::stoi(ks, &used);
      if (used != ks.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(Errc::config_invalid, "cannot parse intervention parameters in: " + name);
    }
    if (!(a.alpha > 0) || a.k < 1)
      fail(Errc::config_invalid, "intervention needs alpha > 0 and K >= 1: " + name);
    return a;
  }
  std::string core = name;
  if (core.ends_with("^c")) {
    a.correct_only = true;
    core.resize(core.size() - 2);
  }
  if (core.size() == 2 && (core[0] == 'D' || core[0] == 'S') &&
      (core[1] == 'U' || core[1] == 'F')) {
    a.kind = ApproachKind::strategy;
    a.sampled = core[0] == 'S';
    a.faithful = core[1] == 'F';
    return a;
  }
  fail(Errc::config_invalid, "unknown approach: " + name);
}

struct RunConfig {
  uint64_t seed = 0;
  std::filesystem::path out = "run-out";
  std::filesystem::path checkpoint;

  TaskSpec task;
  std::filesystem::path dataset_path;  // task.family == file
  DataFormat dataset_format = DataFormat::aqua_jsonl;

  std::vector<std::string> approaches;
  double strategy_tau = 0.7;
  int strategy_samples = 6;
  int nshot = 4;
  double percent = 50;
  int max_new_tokens = 24;

  int resamples = 10000;
  std::vector<std::string> baselines = {"ZS-CoT", "GTA"};

  lm::ModelConfig model;  // pretrain-side shape
  lm::TrainHyper train;
  CorpusSpec corpus;
};

namespace detail {

inline void expect_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                        const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known)
      fail(Errc::config_invalid, "unknown key '" + it.key() + "' in " + std::string(where));
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(Errc::config_invalid, "config root must be a JSON object");
  detail::expect_keys(
      j, {"seed", "out", "model", "task", "approaches", "strategy", "eval", "stats", "pretrain"},
      "config");
  RunConfig c;
  try {
    c.seed = j.value("seed", uint64_t(0));
    if (j.contains("out")) c.out = j.at("out").get<std::string>();

    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::expect_keys(
          m, {"checkpoint", "n_layers", "n_heads", "d_model", "max_seq_len", "seed"}, "model");
      if (m.contains("checkpoint")) c.checkpoint = m.at("checkpoint").get<std::string>();
      c.model.n_layers = m.value("n_layers", c.model.n_layers);
      c.model.n_heads = m.value("n_heads", c.model.n_heads);
      c.model.d_model = m.value("d_model", c.model.d_model);
      c.model.max_seq_len = m.value("max_seq_len", c.model.max_seq_len);
      c.model.seed = m.value("seed", c.seed);
    } else {
      c.model.seed = c.seed;
    }

    if (j.contains("task")) {
      const auto& t = j.at("task");
      detail::expect_keys(t,
                          {"family", "train", "probe", "test", "seed", "steps", "op_lo", "op_hi",
                           "tail_lo", "tail_hi", "value_cap", "path", "format"},
                          "task");
      if (t.contains("family"))
        c.task.family = detail::family_from_name(t.at("family").get<std::string>());
      c.task.train = t.value("train", c.task.train);
      c.task.probe = t.value("probe", c.task.probe);
      c.task.test = t.value("test", c.task.test);
      c.task.seed = t.value("seed", c.seed);
      c.task.steps = t.value("steps", c.task.steps);
      c.task.op_lo = t.value("op_lo", c.task.op_lo);
      c.task.op_hi = t.value("op_hi", c.task.op_hi);
      c.task.tail_lo = t.value("tail_lo", c.task.tail_lo);
      c.task.tail_hi = t.value("tail_hi", c.task.tail_hi);
      c.task.value_cap = t.value("value_cap", c.task.value_cap);
      if (t.contains("path")) c.dataset_path = t.at("path").get<std::string>();
      if (t.contains("format"))
        c.dataset_format = data_format_from_name(t.at("format").get<std::string>());
      if (c.task.family == TaskFamily::file && c.dataset_path.empty())
        fail(Errc::config_invalid, "file tasks need task.path");
    } else {
      c.task.seed = c.seed;
    }

    if (j.contains("approaches"))
      c.approaches = j.at("approaches").get<std::vector<std::string>>();

    if (j.contains("strategy")) {
      const auto& s = j.at("strategy");
      detail::expect_keys(s, {"tau", "samples", "nshot", "percent"}, "strategy");
      c.strategy_tau = s.value("tau", c.strategy_tau);
      c.strategy_samples = s.value("samples", c.strategy_samples);
      c.nshot = s.value("nshot", c.nshot);
      c.percent = s.value("percent", c.percent);
    }

    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      detail::expect_keys(e, {"max_new_tokens"}, "eval");
      c.max_new_tokens = e.value("max_new_tokens", c.max_new_tokens);
    }

    if (j.contains("stats")) {
      const auto& s = j.at("stats");
      detail::expect_keys(s, {"resamples", "baselines"}, "stats");
      c.resamples = s.value("resamples", c.resamples);
      if (s.contains("baselines"))
        c.baselines = s.at("baselines").get<std::vector<std::string>>();
    }

    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      detail::expect_keys(p,
                          {"variant", "steps", "batch_size", "lr", "seed", "warmup_steps",
                           "final_lr_frac", "weight_decay", "clip_norm", "pack_share", "max_seq"},
                          "pretrain");
      if (p.contains("variant"))
        c.corpus.variant = variant_from_name(p.at("variant").get<std::string>());
      c.train.steps = p.value("steps", c.train.steps);
      c.train.batch_size = p.value("batch_size", c.train.batch_size);
      c.train.lr = p.value("lr", c.train.lr);
      c.train.warmup_steps = p.value("warmup_steps", c.train.warmup_steps);
      c.train.final_lr_frac = p.value("final_lr_frac", c.train.final_lr_frac);
      c.train.weight_decay = p.value("weight_decay", c.train.weight_decay);
      c.train.clip_norm = p.value("clip_norm", c.train.clip_norm);
      c.train.seed = p.value("seed", c.seed);
      c.corpus.seed = p.value("seed", c.seed);
      c.corpus.pack_share = p.value("pack_share", c.corpus.pack_share);
      c.corpus.max_seq = p.value("max_seq", std::min(c.model.max_seq_len, c.corpus.max_seq));
    } else {
      c.train.seed = c.seed;
      c.corpus.seed = c.seed;
      c.corpus.max_seq = std::min(c.model.max_seq_len, c.corpus.max_seq);
    }

    if (c.strategy_tau < 0 || c.strategy_samples < 1 || c.nshot < 1 || c.max_new_tokens < 1 ||
        c.resamples < 1)
      fail(Errc::config_invalid, "strategy/eval/stats values out of range");
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::config_invalid, std::string("bad config value: ") + e.what());
  }
  return c;
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["out"] = c.out.string();
  j["model"] = {{"checkpoint", c.checkpoint.string()},
                {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},
                {"d_model", c.model.d_model},
                {"max_seq_len", c.model.max_seq_len},
                {"seed", c.model.seed}};
  nlohmann::ordered_json t;
  t["family"] = detail::family_name(c.task.family);
  t["train"] = c.task.train;
  t["probe"] = c.task.probe;
  t["test"] = c.task.test;
  t["seed"] = c.task.seed;
  t["steps"] = c.task.steps;
  t["op_lo"] = c.task.op_lo;
  t["op_hi"] = c.task.op_hi;
  t["tail_lo"] = c.task.tail_lo;
  t["tail_hi"] = c.task.tail_hi;
  t["value_cap"] = c.task.value_cap;
  if (c.task.family == TaskFamily::file) {
    t["path"] = c.dataset_path.string();
    t["format"] = c.dataset_format == DataFormat::aqua_jsonl        ? "aqua-jsonl"
                  : c.dataset_format == DataFormat::logiqa_jsonl    ? "logiqa-jsonl"
                                                                    : "truthfulqa-jsonl";
  }
  j["task"] = t;
  j["approaches"] = c.approaches;
  j["strategy"] = {{"tau", c.strategy_tau},
                   {"samples", c.strategy_samples},
                   {"nshot", c.nshot},
                   {"percent", c.percent}};
  j["eval"] = {{"max_new_tokens", c.max_new_tokens}};
  j["stats"] = {{"resamples", c.resamples}, {"baselines", c.baselines}};
  j["pretrain"] = {{"variant", variant_name(c.corpus.variant)},
                   {"steps", c.train.steps},
                   {"batch_size", c.train.batch_size},
                   {"lr", c.train.lr},
                   {"seed", c.train.seed},
                   {"final_lr_frac", c.train.final_lr_frac},
                   {"weight_decay", c.train.weight_decay},
                   {"clip_norm", c.train.clip_norm},
                   {"pack_share", c.corpus.pack_share},
                   {"max_seq", c.corpus.max_seq}};
  return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 std::optional<uint64_t> seed_override = {},
                                 std::optional<std::string> out_override = {}) {
  nlohmann::json j = nlohmann::json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) fail(Errc::config_invalid, path.string() + " is not valid JSON");
  if (seed_override) j["seed"] = *seed_override;
  if (out_override) j["out"] = *out_override;
  return run_config_from_json(j);
}

struct SummaryRow {
  std::string approach, dataset;
  size_t n = 0;
  double accuracy = 0, acc_se = 0;
  bool has_faith = false;
  double faith = 0, faith_se = 0;
  bool faith_degenerate = false;  // single scored record: se 0 by convention
  double invalid_rate = 0;
};

// All summary numbers are pure functions of the records.
inline SummaryRow summarize(const std::string& approach, const std::string& dataset,
                            const std::vector<CoTRecord>& records) {
  if (records.empty()) fail(Errc::bad_request, "no records to summarize");
  SummaryRow row;
  row.approach = approach;
  row.dataset = dataset;
  row.n = records.size();
  int hits = 0, invalid = 0;
  std::vector<double> aocs;
  for (const auto& r : records) {
    if (!r.predicted.empty() && r.predicted == r.gold) ++hits;
    if (!r.invalid_reason.empty()) ++invalid;
    if (r.aoc) aocs.push_back(*r.aoc);
  }
  const MeanSe acc = accuracy_stats(hits, int(row.n));
  row.accuracy = acc.mean;
  row.acc_se = acc.se;
  if (!aocs.empty()) {
    row.has_faith = true;
    const MeanSe f = mean_stats(aocs, &row.faith_degenerate);
    row.faith = f.mean;
    row.faith_se = f.se;
  }
  row.invalid_rate = double(invalid) / double(row.n);
  return row;
}

namespace detail {

inline std::string cell6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

}  // namespace detail

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "approach,dataset,n,accuracy,acc_se,faithfulness,faith_se,invalid_rate\n";
  for (const auto& r : rows) {
    out += detail::csv_field(r.approach) + "," + detail::csv_field(r.dataset) + "," +
           std::to_string(r.n) + "," + detail::cell6(r.accuracy) + "," + detail::cell6(r.acc_se) +
           "," + (r.has_faith ? detail::cell6(r.faith) : "") + "," +
           (r.has_faith ? detail::cell6(r.faith_se) : "") + "," + detail::cell6(r.invalid_rate) +
           "\n";
  }
  return out;
}

struct ApproachOutcome {
  Approach approach;
  bool completed = false;
  std::string error;
  std::vector<CoTRecord> records;
  bool faith_se_degenerate = false;
};

struct RunOutcome {
  std::filesystem::path dir;
  std::string dataset;
  std::vector<ApproachOutcome> outcomes;
  bool all_completed = true;
};

namespace detail {

inline std::vector<std::string> label_list(const Question& q) {
  std::vector<std::string> out;
  out.reserve(q.options.size());
  for (const auto& o : q.options) out.push_back(o.label);
  return out;
}

inline CoTRecord shell_record(const Question& q, const std::string& approach,
                              const std::string& dataset, uint64_t seed) {
  CoTRecord r;
  r.question_id = q.id;
  r.question = q.text;
  r.options = q.options;
  r.gold = q.gold;
  r.prov.tau = 0.0;
  r.prov.seed = seed;
  r.prov.strategy = approach;
  r.prov.dataset = dataset;
  return r;
}

// Greedy generation, parse, early answering. Parse failures and a generated
// answer that is not an option mark the record invalid; other errors fail the
// whole approach.
inline CoTRecord eval_reasoned(const adapter::ModelHandle& h, const Question& q,
                               const std::string& gen_prompt, int max_new,
                               const std::string& approach, const std::string& dataset,
                               uint64_t seed, const FormatSpec& fmt) {
  CoTRecord rec = shell_record(q, approach, dataset, seed);
  adapter::GenOptions opt;
  opt.tau = 0.0;
  opt.max_new_tokens = max_new;
  opt.seed = seed;
  const std::string gen = h.generate_text(gen_prompt, opt);
  try {
    const faith::ParsedCoT parsed = faith::parse_cot(gen, fmt);
    rec.steps = parsed.steps;
    rec.predicted = parsed.answer;
  } catch (const Error& e) {
    rec.invalid_reason = e.what();
    return rec;
  }
  try {
    rec = faith::early_answering(h, rec, fmt);
  } catch (const Error& e) {
    if (e.code() != Errc::bad_request) throw;
    rec.invalid_reason = e.what();
  }
  return rec;
}

inline CoTRecord eval_answer_only(const adapter::ModelHandle& h, const Question& q,
                                  const std::string& approach, const std::string& dataset,
                                  uint64_t seed, const FormatSpec& fmt) {
  CoTRecord rec = shell_record(q, approach, dataset, seed);
  const std::vector<std::string> labels = label_list(q);
  const std::vector<double> probs =
      h.answer_probs(faith::answer_prompt(q.text, q.options, fmt), labels);
  size_t best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  rec.predicted = labels[best];
  return rec;
}

inline const adapter::detail::LocalHandle* as_local(const adapter::ModelHandle& h) {
  return dynamic_cast<const adapter::detail::LocalHandle*>(&h);
}

inline void write_pool_files(const std::filesystem::path& dir, const Approach& a,
                             const strategy::DemoPool& pool,
                             const std::vector<CoTRecord>& selected) {
  std::filesystem::create_directories(dir / "pools");
  std::string lines;
  for (const auto& r : selected) lines += faith::record_to_jsonl(r) + "\n";
  write_text(dir / "pools" / (a.name + ".jsonl"), lines);
  nlohmann::ordered_json meta;
  meta["approach"] = a.name;
  meta["source_split"] = pool.source_split;
  meta["pool_size"] = pool.records.size();
  meta["selected"] = selected.size();
  meta["unparseable_chains"] = pool.unparseable_chains;
  meta["incorrect_chains"] = pool.incorrect_chains;
  meta["dropped_questions"] = pool.dropped_questions;
  write_text(dir / "pools" / (a.name + ".meta.json"), meta.dump(2) + "\n");
}

}  // namespace detail

// Probe-split reasoning records, activation collection, per-head probes.
// Built once per run and reused by every intervention approach.
struct ProbeArtifacts {
  std::vector<probe::Probe> probes;
  probe::ProbeBundle bundle;
};

inline ProbeArtifacts fit_run_probes(const adapter::ModelHandle& h,
                                     const std::vector<Question>& probe_qs, uint64_t run_seed,
                                     int max_new, const std::string& dataset,
                                     const FormatSpec& fmt = {}) {
  const auto* local = detail::as_local(h);
  if (!local) fail(Errc::capability_missing, "intervention needs a local model");
  const lm::ModelConfig& mc = local->bundle().weights.cfg;
  const uint64_t pseed = mix_seed(run_seed, hash_str("probe"));

  std::vector<CoTRecord> recs;
  for (const auto& q : probe_qs) {
    CoTRecord r =
        detail::eval_reasoned(h, q, faith::cot_prompt(q.text, q.options, fmt), max_new, "probe",
                              dataset, mix_seed(pseed, hash_str(q.id)), fmt);
    if (r.aoc) recs.push_back(std::move(r));
  }
  const probe::ActivationTable table =
      probe::collect_activations(h, recs, mc.n_layers, mc.n_heads, fmt);

  ProbeArtifacts out;
  out.probes = probe::fit_probes(table, pseed);
  out.bundle.n_layers = table.n_layers;
  out.bundle.n_heads = table.n_heads;
  out.bundle.d_head = table.d_head;
  out.bundle.n_points = int(table.count());
  out.bundle.seed = pseed;
  out.bundle.probes = out.probes;
  return out;
}

// records.jsonl grouped by approach in first-appearance order; throws on any
// malformed line.
inline std::vector<ApproachOutcome> load_run_records(const std::filesystem::path& path) {
  std::vector<ApproachOutcome> outcomes;
  std::map<std::string, size_t> slot;
  const std::string raw = read_text(path);
  size_t begin = 0;
  int line_no = 0;
  while (begin < raw.size()) {
    size_t end = raw.find('\n', begin);
    if (end == std::string::npos) end = raw.size();
    const std::string line = raw.substr(begin, end - begin);
    begin = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    CoTRecord rec;
    try {
      rec = faith::record_from_jsonl(line);
    } catch (const Error& e) {
      fail(e.code(), path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    auto it = slot.find(rec.prov.strategy);
    if (it == slot.end()) {
      ApproachOutcome oc;
      oc.approach = parse_approach(rec.prov.strategy);
      oc.completed = true;
      it = slot.emplace(rec.prov.strategy, outcomes.size()).first;
      outcomes.push_back(std::move(oc));
    }
    outcomes[it->second].records.push_back(std::move(rec));
  }
  return outcomes;
}

inline std::string pvalues_csv(const RunConfig& cfg,
                               const std::vector<ApproachOutcome>& outcomes,
                               const std::string& dataset) {
  std::map<std::string, std::vector<double>> faith_by_name;
  std::vector<std::string> order;
  for (const auto& o : outcomes) {
    if (!o.completed) continue;
    std::vector<double> aocs;
    for (const auto& r : o.records)
      if (r.aoc) aocs.push_back(*r.aoc);
    if (aocs.empty()) continue;
    faith_by_name[o.approach.name] = std::move(aocs);
    order.push_back(o.approach.name);
  }
  std::string out = "approach,dataset,baseline,p_value\n";
  for (const auto& name : order) {
    for (const auto& baseline : cfg.baselines) {
      if (baseline == name) continue;
      const auto it = faith_by_name.find(baseline);
      if (it == faith_by_name.end()) continue;
      const double p = bootstrap_p(faith_by_name[name], it->second, cfg.resamples,
                                   mix_seed(cfg.seed, hash_str(name + "|" + baseline)));
      out += detail::csv_field(name) + "," + detail::csv_field(dataset) + "," +
             detail::csv_field(baseline) + "," + detail::cell6(p) + "\n";
    }
  }
  return out;
}

inline std::string plot_svg(const std::vector<SummaryRow>& rows) {
  std::vector<ScatterPoint> points;
  for (const auto& r : rows) {
    if (!r.has_faith) continue;
    ScatterPoint p;
    p.label = r.approach;
    p.x = r.accuracy;
    p.y = r.faith;
    p.marker = int(parse_approach(r.approach).kind);
    points.push_back(std::move(p));
  }
  return scatter_svg(points);
}

inline RunOutcome run_experiment(const RunConfig& cfg, const adapter::HandlePtr& handle) {
  if (!handle) fail(Errc::bad_request, "null model handle");
  if (cfg.approaches.empty()) fail(Errc::config_invalid, "no approaches requested");
  const FormatSpec fmt = family_format(cfg.task.family);

  Splits splits;
  std::string dataset;
  if (cfg.task.family == TaskFamily::file) {
    splits = load_dataset(cfg.dataset_path, cfg.dataset_format, cfg.task).splits;
    dataset = cfg.dataset_path.stem().string();
  } else {
    splits = generate_tasks(cfg.task);
    dataset = detail::family_name(cfg.task.family);
  }

  RunOutcome out;
  out.dir = cfg.out;
  out.dataset = dataset;
  std::filesystem::create_directories(cfg.out);

  // Local models bound demonstration prompts by the context window, measured
  // in tokens and leaving room for generation. Remote handles go unbudgeted.
  size_t icl_budget = 0;
  strategy::LengthFn icl_measure;
  if (const auto* local = detail::as_local(*handle)) {
    icl_budget = size_t(std::max(0, local->bundle().weights.cfg.max_seq_len - cfg.max_new_tokens));
    const lm::Tokenizer* tok = &local->bundle().tok;
    icl_measure = [tok](const std::string& text) { return tok->encode(text).size(); };
  }

  std::optional<ProbeArtifacts> probes;  // shared by intervention approaches

  for (const auto& name : cfg.approaches) {
    ApproachOutcome oc;
    try {
      oc.approach = parse_approach(name);
      const Approach& a = oc.approach;
      const uint64_t aseed = mix_seed(cfg.seed, hash_str(a.name));
      const auto qseed = [&](const Question& q) { return mix_seed(aseed, hash_str(q.id)); };

      switch (a.kind) {
        case ApproachKind::zs: {
          for (const auto& q : splits.test)
            oc.records.push_back(detail::eval_answer_only(*handle, q, a.name, dataset,
                                                          qseed(q), fmt));
          break;
        }
        case ApproachKind::zs_cot: {
          for (const auto& q : splits.test)
            oc.records.push_back(
                detail::eval_reasoned(*handle, q, faith::cot_prompt(q.text, q.options, fmt),
                                      cfg.max_new_tokens, a.name, dataset, qseed(q), fmt));
          break;
        }
        case ApproachKind::gta: {
          if (int(splits.train.size()) < cfg.nshot)
            fail(Errc::pool_too_small, "nshot = " + std::to_string(cfg.nshot) + " with " +
                                           std::to_string(splits.train.size()) +
                                           " train questions");
          Rng rng(mix_seed(aseed, hash_str("demos")));
          std::vector<size_t> idx(splits.train.size());
          std::iota(idx.begin(), idx.end(), size_t(0));
          std::vector<Question> demos;
          for (int i = 0; i < cfg.nshot; ++i) {
            const size_t j = size_t(i) + size_t(rng.next_below(idx.size() - size_t(i)));
            std::swap(idx[size_t(i)], idx[j]);
            demos.push_back(splits.train[idx[size_t(i)]]);
          }
          for (const auto& q : splits.test) {
            const std::string prompt = strategy::build_answer_only_icl_prompt(
                demos, q.text, q.options, fmt, icl_budget, icl_measure);
            oc.records.push_back(detail::eval_reasoned(*handle, q, prompt, cfg.max_new_tokens,
                                                       a.name, dataset, qseed(q), fmt));
          }
          break;
        }
        case ApproachKind::strategy: {
          strategy::SamplingSpec s;
          s.tau = a.sampled ? cfg.strategy_tau : 0.0;
          s.samples = cfg.strategy_samples;
          s.correct_only = a.correct_only;
          s.seed = aseed;
          s.max_new_tokens = cfg.max_new_tokens;
          s.nshot = cfg.nshot;
          s.percent = cfg.percent;
          s.mode = a.faithful ? strategy::SelectMode::faithful : strategy::SelectMode::uniform;
          const strategy::DemoPool pool =
              strategy::build_pool(*handle, splits.train, s, fmt, a.name, dataset);
          const std::vector<CoTRecord> demos =
              strategy::select(pool, s, strategy::SelectTarget::icl);
          detail::write_pool_files(cfg.out, a, pool, demos);
          for (const auto& q : splits.test) {
            const std::string prompt = strategy::build_icl_prompt(demos, q.text, q.options, fmt,
                                                                  icl_budget, icl_measure);
            oc.records.push_back(detail::eval_reasoned(*handle, q, prompt, cfg.max_new_tokens,
                                                       a.name, dataset, qseed(q), fmt));
          }
          break;
        }
        case ApproachKind::intervene: {
          if (!probes) {
            probes = fit_run_probes(*handle, splits.probe, cfg.seed, cfg.max_new_tokens,
                                    dataset, fmt);
            std::filesystem::create_directories(cfg.out / "probes");
            probe::save_probe_bundle(cfg.out / "probes" / "bundle.bin", probes->bundle);
            write_text(cfg.out / "probes" / "heatmap.csv",
                       probe::accuracy_heatmap_csv(probes->bundle));
          }
          const probe::InterventionPlan plan = probe::make_plan(probes->probes, a.k, a.alpha);
          const adapter::HandlePtr edited =
              adapter::with_edits(handle, probe::to_edit_directives(plan));
          for (const auto& q : splits.test)
            oc.records.push_back(
                detail::eval_reasoned(*edited, q, faith::cot_prompt(q.text, q.options, fmt),
                                      cfg.max_new_tokens, a.name, dataset, qseed(q), fmt));
          break;
        }
      }
      oc.completed = true;
    } catch (const Error& e) {
      oc.completed = false;
      oc.error = e.what();
      oc.records.clear();
      out.all_completed = false;
    }
    out.outcomes.push_back(std::move(oc));
  }

  // records.jsonl: completed approaches, in request order.
  std::string lines;
  for (const auto& oc : out.outcomes)
    if (oc.completed)
      for (const auto& r : oc.records) lines += faith::record_to_jsonl(r) + "\n";
  write_text(cfg.out / "records.jsonl", lines);

  std::vector<SummaryRow> rows;
  for (auto& oc : out.outcomes) {
    if (!oc.completed) continue;
    rows.push_back(summarize(oc.approach.name, dataset, oc.records));
    oc.faith_se_degenerate = rows.back().faith_degenerate;
  }
  write_text(cfg.out / "summary.csv", summary_csv(rows));
  write_text(cfg.out / "pvalues.csv", pvalues_csv(cfg, out.outcomes, dataset));
  write_text(cfg.out / "plot.svg", plot_svg(rows));

  nlohmann::ordered_json meta;
  meta["config"] = run_config_to_json(cfg);
  meta["dataset"] = dataset;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& oc : out.outcomes) {
    nlohmann::ordered_json e;
    e["name"] = oc.approach.name;
    e["status"] = oc.completed ? "completed" : "failed";
    if (oc.completed) e["records"] = oc.records.size();
    if (!oc.completed) e["error"] = oc.error;
    if (oc.faith_se_degenerate) e["faith_se_degenerate"] = true;
    arr.push_back(e);
  }
  meta["approaches"] = arr;
  write_text(cfg.out / "run_meta.json", meta.dump(2) + "\n");
  return out;
}

inline RunOutcome run_experiment(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) fail(Errc::config_invalid, "config names no model checkpoint");
  return run_experiment(cfg, adapter::make_local_handle(lm::load_checkpoint(cfg.checkpoint)));
}

// Re-derives summary.csv, pvalues.csv, and plot.svg from records.jsonl plus
// the config echo in run_meta.json, and reports any byte that disagrees.
inline std::vector<std::string> verify_run(const std::filesystem::path& dir) {
  std::vector<std::string> problems;
  const auto need = [&](const char* name) {
    if (!std::filesystem::exists(dir / name)) {
      problems.push_back(std::string(name) + ": missing");
      return false;
    }
    return true;
  };
  if (!need("records.jsonl") || !need("run_meta.json") || !need("summary.csv") ||
      !need("pvalues.csv") || !need("plot.svg"))
    return problems;

  nlohmann::json meta = nlohmann::json::parse(read_text(dir / "run_meta.json"), nullptr, false);
  if (meta.is_discarded() || !meta.contains("config")) {
    problems.push_back("run_meta.json: unreadable or missing config echo");
    return problems;
  }
  RunConfig cfg;
  std::string dataset;
  try {
    cfg = run_config_from_json(meta.at("config"));
    dataset = meta.value("dataset", std::string());
  } catch (const Error& e) {
    problems.push_back(std::string("run_meta.json: ") + e.what());
    return problems;
  }

  // Group records by approach, in first-appearance order.
  std::vector<ApproachOutcome> outcomes;
  std::map<std::string, size_t> slot;
  const std::string raw = read_text(dir / "records.jsonl");
  size_t begin = 0;
  int line_no = 0;
  while (begin < raw.size()) {
    size_t end = raw.find('\n', begin);
    if (end == std::string::npos) end = raw.size();
    const std::string line = raw.substr(begin, end - begin);
    begin = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    CoTRecord rec;
    try {
      rec = faith::record_from_jsonl(line);
    } catch (const Error& e) {
      problems.push_back("records.jsonl line " + std::to_string(line_no) + ": " + e.what());
      continue;
    }
    auto it = slot.find(rec.prov.strategy);
    if (it == slot.end()) {
      ApproachOutcome oc;
      try {
        oc.approach = parse_approach(rec.prov.strategy);
      } catch (const Error& e) {
        problems.push_back("records.jsonl line " + std::to_string(line_no) + ": " + e.what());
        continue;
      }
      oc.completed = true;
      it = slot.emplace(rec.prov.strategy, outcomes.size()).first;
      outcomes.push_back(std::move(oc));
    }
    outcomes[it->second].records.push_back(std::move(rec));
  }

  std::vector<SummaryRow> rows;
  for (const auto& oc : outcomes) rows.push_back(summarize(oc.approach.name, dataset, oc.records));

  const auto diff_lines = [&](const char* name, const std::string& expected,
                              const std::string& found) {
    if (expected == found) return;
    const auto split_all = [](const std::string& s) {
      std::vector<std::string> out;
      size_t b = 0;
      while (b <= s.size()) {
        size_t e = s.find('\n', b);
        if (e == std::string::npos) e = s.size();
        out.push_back(s.substr(b, e - b));
        b = e + 1;
      }
      return out;
    };
    const auto exp = split_all(expected), got = split_all(found);
    const size_t n = std::max(exp.size(), got.size());
    for (size_t i = 0; i < n; ++i) {
      const std::string e = i < exp.size() ? exp[i] : "<absent>";
      const std::string g = i < got.size() ? got[i] : "<absent>";
      if (e != g)
        problems.push_back(std::string(name) + " line " + std::to_string(i + 1) +
                           ": derived '" + e + "' but file holds '" + g + "'");
    }
  };

  diff_lines("summary.csv", summary_csv(rows), read_text(dir / "summary.csv"));
  diff_lines("pvalues.csv", pvalues_csv(cfg, outcomes, dataset), read_text(dir / "pvalues.csv"));
  diff_lines("plot.svg", plot_svg(rows), read_text(dir / "plot.svg"));
  return problems;
}

}  // namespace cotsteer::bench
