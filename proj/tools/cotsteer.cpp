// Command-line front end. Every subcommand reads the same structured config
// file (--config), with --seed and --out overriding the config's values.
//
//   generate-tasks  write train/probe/test question files
//   pretrain        build a planted-behavior corpus and train a checkpoint
//   run             evaluate the configured approaches, write the run dir
//   probe           fit per-head probes on the probe split, print the ranking
//   intervene       like run, but only INTERVENE(alpha,K) approaches
//   verify          re-derive summary/pvalues/plot from records and diff
//   plot            redraw plot.svg from an existing run directory
//
// Exit code 0 only when everything requested completed.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cotsteer/adapter/handle.hpp"
#include "cotsteer/bench/pretrain.hpp"
#include "cotsteer/bench/runner.hpp"
#include "cotsteer/bench/tasks.hpp"
#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/textio.hpp"
#include "cotsteer/faith/question.hpp"
#include "cotsteer/lm/checkpoint.hpp"
#include "cotsteer/probe/bundle.hpp"
#include "cotsteer/probe/steer.hpp"

namespace fs = std::filesystem;
using namespace cotsteer;

namespace {

struct Cli {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
};

bench::RunConfig load_cfg(const Cli& cli) {
  if (cli.config.empty()) fail(Errc::config_invalid, "--config is required");
  return bench::load_run_config(cli.config, cli.seed, cli.out);
}

// The run dir: --out wins, otherwise the config's out.
fs::path run_dir(const Cli& cli) {
  if (cli.out) return *cli.out;
  return load_cfg(cli).out;
}

bench::Splits load_splits(const bench::RunConfig& cfg) {
  if (cfg.task.family == bench::TaskFamily::file)
    return bench::load_dataset(cfg.dataset_path, cfg.dataset_format, cfg.task).splits;
  return bench::generate_tasks(cfg.task);
}

std::string dataset_tag(const bench::RunConfig& cfg) {
  if (cfg.task.family == bench::TaskFamily::file) return cfg.dataset_path.stem().string();
  return bench::detail::family_name(cfg.task.family);
}

void write_questions(const fs::path& path, const std::vector<Question>& qs) {
  std::string lines;
  for (const auto& q : qs) lines += faith::question_to_json(q).dump() + "\n";
  write_text(path, lines);
}

int cmd_generate_tasks(const Cli& cli) {
  const bench::RunConfig cfg = load_cfg(cli);
  const bench::Splits splits = bench::generate_tasks(cfg.task);
  fs::create_directories(cfg.out);
  write_questions(cfg.out / "train.jsonl", splits.train);
  write_questions(cfg.out / "probe.jsonl", splits.probe);
  write_questions(cfg.out / "test.jsonl", splits.test);
  std::printf("wrote %zu train / %zu probe / %zu test questions under %s\n", splits.train.size(),
              splits.probe.size(), splits.test.size(), cfg.out.string().c_str());
  return 0;
}

int cmd_pretrain(const Cli& cli) {
  const bench::RunConfig cfg = load_cfg(cli);
  const bench::Splits splits = load_splits(cfg);

  // The context-blind behavior memorizes every question it will ever be shown;
  // the reasoned behavior trains on the train split alone.
  std::vector<Question> qs = splits.train;
  if (cfg.corpus.variant == bench::PretrainVariant::blind) {
    qs.insert(qs.end(), splits.probe.begin(), splits.probe.end());
    qs.insert(qs.end(), splits.test.begin(), splits.test.end());
  }

  const bench::PretrainResult res = bench::pretrain(qs, cfg.corpus, cfg.model, cfg.train,
                                                   bench::family_format(cfg.task.family));
  const fs::path ckpt = cfg.checkpoint.empty() ? cfg.out / "model.ckpt" : cfg.checkpoint;
  if (!ckpt.parent_path().empty()) fs::create_directories(ckpt.parent_path());
  lm::save_checkpoint(ckpt, res.bundle.weights, res.bundle.tok);

  double head = 0, tail = 0;
  const size_t w = std::min<size_t>(20, res.losses.size());
  for (size_t i = 0; i < w; ++i) {
    head += res.losses[i] / double(w);
    tail += res.losses[res.losses.size() - 1 - i] / double(w);
  }
  std::printf("%s corpus: %zu questions\n", bench::variant_name(cfg.corpus.variant),
              qs.size());
  std::printf("trained %d steps: loss %.4f -> %.4f\n", cfg.train.steps, head, tail);
  std::printf("checkpoint: %s\n", ckpt.string().c_str());
  return 0;
}

int report_run(const bench::RunOutcome& out) {
  for (const auto& oc : out.outcomes) {
    if (oc.completed)
      std::printf("%s: completed (%zu records)\n", oc.approach.name.c_str(), oc.records.size());
    else
      std::printf("%s: failed (%s)\n", oc.approach.name.c_str(), oc.error.c_str());
  }
  std::printf("outputs under %s\n", out.dir.string().c_str());
  return out.all_completed ? 0 : 1;
}

int cmd_run(const Cli& cli) { return report_run(bench::run_experiment(load_cfg(cli))); }

int cmd_intervene(const Cli& cli) {
  const bench::RunConfig cfg = load_cfg(cli);
  if (cfg.approaches.empty()) fail(Errc::config_invalid, "no approaches requested");
  for (const auto& name : cfg.approaches)
    if (bench::parse_approach(name).kind != bench::ApproachKind::intervene)
      fail(Errc::config_invalid,
           "intervene runs INTERVENE(alpha,K) approaches only, got: " + name);
  return report_run(bench::run_experiment(cfg));
}

int cmd_probe(const Cli& cli) {
  const bench::RunConfig cfg = load_cfg(cli);
  if (cfg.checkpoint.empty()) fail(Errc::config_invalid, "config names no model checkpoint");
  const adapter::HandlePtr handle =
      adapter::make_local_handle(lm::load_checkpoint(cfg.checkpoint));
  const bench::Splits splits = load_splits(cfg);

  const bench::ProbeArtifacts arts =
      bench::fit_run_probes(*handle, splits.probe, cfg.seed, cfg.max_new_tokens,
                            dataset_tag(cfg), bench::family_format(cfg.task.family));
  fs::create_directories(cfg.out / "probes");
  probe::save_probe_bundle(cfg.out / "probes" / "bundle.bin", arts.bundle);
  write_text(cfg.out / "probes" / "heatmap.csv", probe::accuracy_heatmap_csv(arts.bundle));

  std::printf("probes fit on %d points\n", arts.bundle.n_points);
  const std::vector<probe::Probe> ranked = probe::rank_heads(arts.probes);
  const size_t show = std::min<size_t>(8, ranked.size());
  for (size_t i = 0; i < show; ++i)
    std::printf("layer %d head %d: val_accuracy %.3f sigma %.4f\n", ranked[i].layer,
                ranked[i].head, ranked[i].val_accuracy, ranked[i].sigma);
  std::printf("bundle: %s\n", (cfg.out / "probes" / "bundle.bin").string().c_str());
  return 0;
}

int cmd_verify(const Cli& cli) {
  const fs::path dir = run_dir(cli);
  const std::vector<std::string> problems = bench::verify_run(dir);
  for (const auto& p : problems) std::printf("%s\n", p.c_str());
  if (problems.empty()) {
    std::printf("verified: derived artifacts match records.jsonl\n");
    return 0;
  }
  return 1;
}

int cmd_plot(const Cli& cli) {
  const fs::path dir = run_dir(cli);
  const std::vector<bench::ApproachOutcome> groups =
      bench::load_run_records(dir / "records.jsonl");
  std::vector<bench::SummaryRow> rows;
  for (const auto& g : groups) {
    const std::string ds = g.records.empty() ? "" : g.records.front().prov.dataset;
    rows.push_back(bench::summarize(g.approach.name, ds, g.records));
  }
  write_text(dir / "plot.svg", bench::plot_svg(rows));
  std::printf("wrote %s\n", (dir / "plot.svg").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chain-of-thought faithfulness workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  Cli cli;
  std::string out_str;
  uint64_t seed_val = 0;
  auto* config_opt = app.add_option("--config", cli.config, "structured config file");
  auto* seed_opt = app.add_option("--seed", seed_val, "override the config seed");
  auto* out_opt = app.add_option("--out", out_str, "override the output directory");
  (void)config_opt;

  auto* sc_gen = app.add_subcommand("generate-tasks", "write question splits to files");
  auto* sc_pre = app.add_subcommand("pretrain", "train a model checkpoint from scratch");
  auto* sc_run = app.add_subcommand("run", "evaluate the configured approaches");
  auto* sc_probe = app.add_subcommand("probe", "fit per-head probes and print the ranking");
  auto* sc_int = app.add_subcommand("intervene", "run INTERVENE approaches only");
  auto* sc_verify = app.add_subcommand("verify", "re-derive run artifacts and diff");
  auto* sc_plot = app.add_subcommand("plot", "redraw plot.svg from a run directory");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count()) cli.seed = seed_val;
  if (out_opt->count()) cli.out = out_str;

  try {
    if (sc_gen->parsed()) return cmd_generate_tasks(cli);
    if (sc_pre->parsed()) return cmd_pretrain(cli);
    if (sc_run->parsed()) return cmd_run(cli);
    if (sc_probe->parsed()) return cmd_probe(cli);
    if (sc_int->parsed()) return cmd_intervene(cli);
    if (sc_verify->parsed()) return cmd_verify(cli);
    if (sc_plot->parsed()) return cmd_plot(cli);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
