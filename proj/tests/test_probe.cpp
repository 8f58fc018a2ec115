#include "cotsteer/probe/steer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "cotsteer/adapter/handle.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/lm/checkpoint.hpp"
#include "cotsteer/lm/model.hpp"
#include "cotsteer/lm/tokenizer.hpp"
#include "cotsteer/probe/bundle.hpp"
#include "cotsteer/probe/dataset.hpp"
#include "cotsteer/probe/logistic.hpp"

namespace cotsteer::probe {
namespace {

namespace fs = std::filesystem;

TEST(Binarize, ThresholdsStrictlyAboveTheLowerMedian) {
  EXPECT_EQ(binarize({0.1, 0.2, 0.3, 0.4}), (std::vector<int>{0, 0, 1, 1}));
  // n = 5: median is the middle element, so exactly two land above it.
  EXPECT_EQ(binarize({0.5, 0.1, 0.9, 0.3, 0.7}), (std::vector<int>{0, 0, 1, 0, 1}));
}

TEST(Binarize, RejectsDegenerateAndTinyInputs) {
  try {
    binarize({0.4, 0.4, 0.4, 0.4});
    FAIL() << "expected degenerate_labels";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::degenerate_labels);
  }
  EXPECT_THROW(binarize({0.1, 0.2, 0.3}), Error);
}

TEST(SplitDataset, FourToOneWithRoundingToNearest) {
  const auto sized = [](int n, uint64_t seed) {
    std::vector<int> labels(n, 0);
    for (int i = 0; i < n; i += 2) labels[i] = 1;
    return split_dataset(labels, seed);
  };
  EXPECT_EQ(sized(10, 1).val.size(), 2u);
  EXPECT_EQ(sized(10, 1).train.size(), 8u);
  EXPECT_EQ(sized(7, 1).val.size(), 1u);   // round(1.4)
  EXPECT_EQ(sized(13, 1).val.size(), 3u);  // round(2.6)

  const SplitIndices a = sized(40, 9), b = sized(40, 9), c = sized(40, 10);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_NE(a.train, c.train);

  std::set<int> seen(a.train.begin(), a.train.end());
  seen.insert(a.val.begin(), a.val.end());
  EXPECT_EQ(seen.size(), 40u);  // disjoint and complete
}

TEST(SplitDataset, TrainAlwaysSeesBothClasses) {
  std::vector<int> labels(10, 0);
  labels[3] = 1;  // a single positive that a plain shuffle often sends to val
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const SplitIndices s = split_dataset(labels, seed);
    bool has1 = false;
    for (int i : s.train) has1 = has1 || labels[i] == 1;
    EXPECT_TRUE(has1) << "seed " << seed;
  }
}

TEST(Logistic, GradientMatchesCentralDifferences) {
  Rng rng(77);
  const size_t n = 20, d = 5;
  std::vector<std::vector<double>> X(n, std::vector<double>(d));
  std::vector<int> y(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < d; ++j) X[i][j] = rng.next_normal();
    y[i] = int(rng.next_below(2));
  }
  std::vector<double> theta(d);
  for (auto& t : theta) t = 0.5 * rng.next_normal();
  double bias = 0.3;
  const double lambda = 1e-3;

  std::vector<double> grad;
  double grad_bias = 0.0;
  logistic_loss_grad(X, y, theta, bias, lambda, grad, grad_bias);

  std::vector<double> g_ignore;
  double gb_ignore = 0.0;
  const double h = 1e-6;
  const auto loss_at = [&](const std::vector<double>& th, double b) {
    return logistic_loss_grad(X, y, th, b, lambda, g_ignore, gb_ignore);
  };
  for (size_t j = 0; j <= d; ++j) {
    double analytic, numeric;
    if (j < d) {
      std::vector<double> hi = theta, lo = theta;
      hi[j] += h;
      lo[j] -= h;
      numeric = (loss_at(hi, bias) - loss_at(lo, bias)) / (2 * h);
      analytic = grad[j];
    } else {
      numeric = (loss_at(theta, bias + h) - loss_at(theta, bias - h)) / (2 * h);
      analytic = grad_bias;
    }
    const double rel = std::abs(numeric - analytic) / (std::abs(analytic) + 1e-12);
    EXPECT_LE(rel, 1e-4) << "param " << j;
  }
}

TEST(Logistic, FitsSeparableDataAndRejectsOneClass) {
  const std::vector<std::vector<double>> X = {{-2.0}, {-1.0}, {1.0}, {2.0}};
  const std::vector<int> y = {0, 0, 1, 1};
  const ProbeFit fit = train_probe(X, y);
  EXPECT_DOUBLE_EQ(probe_accuracy(X, y, fit), 1.0);
  EXPECT_GT(fit.theta[0], 0.0);

  try {
    train_probe(X, {1, 1, 1, 1});
    FAIL() << "expected single_class";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::single_class);
  }
}

TEST(Logistic, DecisionsAreScaleInvariant) {
  Rng rng(5);
  std::vector<std::vector<double>> X(30, std::vector<double>(3));
  std::vector<int> y(30);
  for (size_t i = 0; i < X.size(); ++i) {
    for (auto& v : X[i]) v = rng.next_normal();
    y[i] = int(rng.next_below(2));
  }
  ProbeFit fit = train_probe(X, y);
  const double base = probe_accuracy(X, y, fit);
  for (auto& t : fit.theta) t *= 37.0;
  fit.bias *= 37.0;
  EXPECT_DOUBLE_EQ(probe_accuracy(X, y, fit), base);
}

TEST(Sigma, PopulationStdOfUnitProjections) {
  EXPECT_DOUBLE_EQ(compute_sigma({{0.0}, {2.0}}, {5.0}), 1.0);
  EXPECT_DOUBLE_EQ(compute_sigma({{1.5, 2.5}, {1.5, 2.5}}, {1.0, 1.0}), 0.0);

  Rng rng(3);
  std::vector<std::vector<double>> X(25, std::vector<double>(4));
  for (auto& row : X)
    for (auto& v : row) v = rng.next_normal();
  std::vector<double> theta = {0.3, -1.2, 0.5, 2.0};
  const double base = compute_sigma(X, theta);
  for (auto& t : theta) t *= 10.0;
  EXPECT_NEAR(compute_sigma(X, theta), base, 1e-12);

  try {
    compute_sigma(X, {0.0, 0.0, 0.0, 0.0});
    FAIL() << "expected zero_direction";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::zero_direction);
  }
}

Probe quick_probe(int l, int h, double acc) {
  Probe p;
  p.layer = l;
  p.head = h;
  p.theta = {1.0, 0.0};
  p.val_accuracy = acc;
  p.sigma = 1.0;
  return p;
}

TEST(RankHeads, DescendingAccuracyWithLayerThenHeadTies) {
  const std::vector<Probe> probes = {quick_probe(0, 1, 0.6), quick_probe(1, 0, 0.9),
                                     quick_probe(0, 0, 0.9)};
  const std::vector<Probe> ranked = rank_heads(probes);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].layer, 0);
  EXPECT_EQ(ranked[0].head, 0);
  EXPECT_EQ(ranked[1].layer, 1);
  EXPECT_EQ(ranked[1].head, 0);
  EXPECT_EQ(ranked[2].val_accuracy, 0.6);

  // Input order is irrelevant and the output is a permutation.
  std::vector<Probe> shuffled = {probes[2], probes[0], probes[1]};
  const std::vector<Probe> again = rank_heads(shuffled);
  for (size_t i = 0; i < ranked.size(); ++i) {
    EXPECT_EQ(again[i].layer, ranked[i].layer);
    EXPECT_EQ(again[i].head, ranked[i].head);
  }
}

TEST(MakePlan, TopKUnitDirectionsAndScaledEdits) {
  std::vector<Probe> probes = {quick_probe(0, 0, 0.95), quick_probe(0, 1, 0.7),
                               quick_probe(1, 0, 0.8), quick_probe(1, 1, 0.5)};
  probes[0].theta = {3.0, 4.0};  // direction (0.6, 0.8)
  probes[0].sigma = 2.0;

  const InterventionPlan plan = make_plan(probes, 2, 0.5);
  ASSERT_EQ(plan.entries.size(), 2u);
  EXPECT_EQ(plan.entries[0].layer, 0);
  EXPECT_EQ(plan.entries[0].head, 0);
  EXPECT_EQ(plan.entries[1].layer, 1);
  EXPECT_EQ(plan.entries[1].head, 0);
  for (const auto& e : plan.entries) {
    double norm2 = 0.0;
    for (double d : e.direction) norm2 += d * d;
    EXPECT_NEAR(std::sqrt(norm2), 1.0, 1e-9);
  }
  EXPECT_NEAR(plan.entries[0].direction[0], 0.6, 1e-12);
  EXPECT_NEAR(plan.entries[0].direction[1], 0.8, 1e-12);

  const auto edits = to_edit_directives(plan);
  ASSERT_EQ(edits.size(), 2u);
  EXPECT_NEAR(edits[0].delta[0], 0.5 * 2.0 * 0.6, 1e-12);
  EXPECT_NEAR(edits[0].delta[1], 0.5 * 2.0 * 0.8, 1e-12);

  try {
    make_plan(probes, 5, 0.5);
    FAIL() << "expected k_too_large";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::k_too_large);
  }
  EXPECT_THROW(make_plan(probes, 0, 0.5), Error);
  EXPECT_THROW(make_plan(probes, 2, 0.0), Error);
}

// Synthetic activation table: head (0,0) carries a linear signal along a
// known direction; every other head is noise.
ActivationTable planted_table(int n, uint64_t seed, std::vector<double>& v_out,
                              std::vector<int>& labels_out, bool permute_labels = false) {
  const int L = 2, H = 4, d = 16;
  Rng rng(seed);

  std::vector<double> v(d);
  double norm2 = 0.0;
  for (auto& x : v) {
    x = rng.next_normal();
    norm2 += x * x;
  }
  for (auto& x : v) x /= std::sqrt(norm2);

  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % 2;
  rng.shuffle(y);

  ActivationTable t;
  t.n_layers = L;
  t.n_heads = H;
  t.d_head = d;
  for (int q = 0; q < n; ++q) {
    t.question_ids.push_back("q" + std::to_string(q));
    // Scores reproduce y under median binarization: all class-1 scores sit
    // strictly above every class-0 score.
    t.scores.push_back(y[q] ? 0.7 + 0.05 * rng.next_double() : 0.3 + 0.05 * rng.next_double());
    for (int l = 0; l < L; ++l)
      for (int h = 0; h < H; ++h)
        for (int j = 0; j < d; ++j) {
          double x = rng.next_normal();
          if (l == 0 && h == 0) {
            const double sign = y[q] ? 1.0 : -1.0;
            x = 0.35 * x + sign * 1.2 * v[j];
          }
          t.acts.push_back(x);
        }
  }
  if (permute_labels) {
    // Break the signal-label link by re-shuffling the scores.
    rng.shuffle(t.scores);
  }
  v_out = v;
  labels_out = y;
  return t;
}

TEST(FitProbes, RecoversAPlantedHeadAndItsDirection) {
  std::vector<double> v;
  std::vector<int> y;
  const ActivationTable table = planted_table(200, 42, v, y);

  const std::vector<Probe> probes = fit_probes(table, 7);
  ASSERT_EQ(probes.size(), 8u);
  const std::vector<Probe> ranked = rank_heads(probes);
  EXPECT_EQ(ranked[0].layer, 0);
  EXPECT_EQ(ranked[0].head, 0);
  EXPECT_GE(ranked[0].val_accuracy, 0.9);

  double dot = 0.0, norm2 = 0.0;
  for (size_t j = 0; j < v.size(); ++j) {
    dot += ranked[0].theta[j] * v[j];
    norm2 += ranked[0].theta[j] * ranked[0].theta[j];
  }
  EXPECT_GE(std::abs(dot) / std::sqrt(norm2), 0.9);
}

TEST(FitProbes, PermutedLabelsScoreNearChance) {
  std::vector<double> v;
  std::vector<int> y;
  const ActivationTable table = planted_table(200, 42, v, y, true);

  const std::vector<Probe> probes = fit_probes(table, 7);
  double mean = 0.0;
  for (const auto& p : probes) {
    EXPECT_GE(p.val_accuracy, 0.5 - 0.25);
    EXPECT_LE(p.val_accuracy, 0.5 + 0.25);
    mean += p.val_accuracy;
  }
  mean /= double(probes.size());
  EXPECT_NEAR(mean, 0.5, 0.07);
}

lm::LocalBundle probe_bundle_model() {
  lm::LocalBundle b;
  b.tok = lm::Tokenizer::from_words(lm::task_vocabulary());
  lm::ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.max_seq_len = 48;
  cfg.vocab_size = b.tok.vocab_size();
  cfg.seed = 21;
  b.weights = lm::init_model(cfg);
  return b;
}

std::vector<CoTRecord> scored_records() {
  std::vector<CoTRecord> recs;
  const std::vector<std::pair<std::string, double>> qs = {
      {"Compute 3 + 4", 0.1}, {"Compute 5 + 6", 0.3}, {"Compute 8 - 2", 0.6}, {"Compute 9 * 2", 0.8}};
  int i = 0;
  for (const auto& [text, score] : qs) {
    CoTRecord r;
    r.question_id = "q" + std::to_string(i++);
    r.question = text;
    r.options = {{"A", "5"}, {"B", "7"}};
    r.gold = "A";
    r.aoc = score;
    recs.push_back(std::move(r));
  }
  return recs;
}

TEST(CollectActivations, MatchesDirectForwardAtTheLastPromptToken) {
  const auto bundle = probe_bundle_model();
  const auto handle = adapter::make_local_handle(bundle);
  const auto recs = scored_records();

  const ActivationTable table = collect_activations(*handle, recs, 2, 2);
  EXPECT_EQ(table.count(), 4);
  EXPECT_EQ(table.d_head, 4);
  EXPECT_EQ(table.acts.size(), size_t(4 * 2 * 2 * 4));
  EXPECT_EQ(table.scores[2], 0.6);

  const ActivationTable again = collect_activations(*handle, recs, 2, 2);
  EXPECT_EQ(table.acts, again.acts);  // same seed, same table

  // Cross-check one entry against a raw forward capture.
  const std::string prompt = faith::cot_prompt(recs[1].question, recs[1].options, {});
  const std::vector<int> ids = bundle.tok.encode(prompt);
  const auto res = lm::forward(bundle.weights, ids, {{1, 0}});
  bool checked = false;
  for (const auto& a : res.captured) {
    if (a.position != int(ids.size()) - 1) continue;
    for (int j = 0; j < table.d_head; ++j) EXPECT_EQ(a.values[j], table.vec(1, 1, 0)[j]);
    checked = true;
  }
  EXPECT_TRUE(checked);
}

TEST(CollectActivations, RequiresTheActivationsCapability) {
  const auto recs = scored_records();
  // A remote-style handle never exposes captures; emulate with capability set.
  class NoCaps : public adapter::ModelHandle {
   public:
    std::string kind() const override { return "stub"; }
    const std::set<adapter::Capability>& capabilities() const override { return caps_; }
    std::string generate_text(const std::string&, const adapter::GenOptions&) const override {
      fail(Errc::capability_missing, "no");
    }
    std::vector<double> answer_probs(const std::string&,
                                     const std::vector<std::string>&) const override {
      fail(Errc::capability_missing, "no");
    }
    std::vector<lm::HeadActivation> capture_head_activations(
        const std::string&, const std::vector<lm::CaptureSpec>&) const override {
      fail(Errc::capability_missing, "no");
    }

   private:
    std::set<adapter::Capability> caps_ = {adapter::Capability::generate};
  } stub;

  try {
    collect_activations(stub, recs, 2, 2);
    FAIL() << "expected capability_missing";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::capability_missing);
  }

  // Records without scores are rejected up front.
  const auto bundle = probe_bundle_model();
  const auto handle = adapter::make_local_handle(bundle);
  auto unscored = recs;
  unscored[1].aoc.reset();
  EXPECT_THROW(collect_activations(*handle, unscored, 2, 2), Error);
}

TEST(Intervention, ShiftsOnlyTheTargetedHeadByAlphaSigma) {
  const auto bundle = probe_bundle_model();
  const auto base = adapter::make_local_handle(bundle);
  const std::string prompt = "Compute 3 + 4 ; A ) 5 B ) 7 ; Reason :";

  std::vector<Probe> probes;
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) {
      Probe p = quick_probe(l, h, l == 0 && h == 0 ? 0.9 : 0.5);
      p.theta = {1.0, 2.0, -2.0, 4.0};
      p.sigma = 0.8;
      probes.push_back(p);
    }
  const InterventionPlan plan = make_plan(probes, 1, 0.5);
  ASSERT_EQ(plan.entries[0].layer, 0);
  ASSERT_EQ(plan.entries[0].head, 0);
  const auto edits = to_edit_directives(plan);
  const auto edited = adapter::with_edits(base, edits);

  std::vector<lm::CaptureSpec> all;
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) all.push_back({l, h});
  const auto pre = base->capture_head_activations(prompt, all);
  const auto post = edited->capture_head_activations(prompt, all);
  ASSERT_EQ(pre.size(), post.size());

  int last = 0;
  for (const auto& a : pre) last = std::max(last, a.position);
  for (size_t i = 0; i < pre.size(); ++i) {
    ASSERT_EQ(pre[i].layer, post[i].layer);
    ASSERT_EQ(pre[i].position, post[i].position);
    const bool target = pre[i].layer == 0 && pre[i].head == 0 && pre[i].position == last;
    if (target) {
      double shift = 0.0;
      for (size_t j = 0; j < pre[i].values.size(); ++j) {
        EXPECT_NEAR(post[i].values[j] - pre[i].values[j], edits[0].delta[j], 1e-12);
        shift += (post[i].values[j] - pre[i].values[j]) * plan.entries[0].direction[j];
      }
      EXPECT_NEAR(shift, 0.5 * 0.8, 1e-9);  // alpha * sigma along the unit direction
    } else if (pre[i].layer == 0 || pre[i].position < last) {
      // Same layer, other heads and earlier positions: bit-identical.
      EXPECT_EQ(pre[i].values, post[i].values) << "layer " << pre[i].layer << " head "
                                               << pre[i].head << " pos " << pre[i].position;
    }
  }
}

TEST(Bundle, RoundTripsAndDetectsCorruption) {
  ProbeBundle b;
  b.n_layers = 2;
  b.n_heads = 2;
  b.d_head = 3;
  b.n_points = 40;
  b.seed = 99;
  double val = 0.1;
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) {
      Probe p;
      p.layer = l;
      p.head = h;
      p.theta = {val, -val * 3, 1.0 / (val + 1.0)};
      p.bias = val * 7;
      p.val_accuracy = 0.5 + val;
      p.sigma = val * 2;
      b.probes.push_back(p);
      val += 0.1;
    }

  const fs::path dir = fs::temp_directory_path() / "cotsteer-probe-test";
  fs::create_directories(dir);
  const fs::path path = dir / "probes.bin";
  save_probe_bundle(path, b);

  const ProbeBundle loaded = load_probe_bundle(path);
  EXPECT_EQ(loaded.n_layers, 2);
  EXPECT_EQ(loaded.n_points, 40);
  EXPECT_EQ(loaded.seed, 99u);
  ASSERT_EQ(loaded.probes.size(), 4u);
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(loaded.probes[i].theta, b.probes[i].theta);  // exact doubles
    EXPECT_EQ(loaded.probes[i].bias, b.probes[i].bias);
    EXPECT_EQ(loaded.probes[i].val_accuracy, b.probes[i].val_accuracy);
    EXPECT_EQ(loaded.probes[i].sigma, b.probes[i].sigma);
  }

  std::string raw = read_text(path);
  raw[raw.size() / 2] ^= 0x40;
  const fs::path bad = dir / "corrupt.bin";
  write_text(bad, raw);
  try {
    load_probe_bundle(bad);
    FAIL() << "expected checkpoint_format";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::checkpoint_format);
  }

  write_text(bad, read_text(path).substr(0, 30));
  EXPECT_THROW(load_probe_bundle(bad), Error);

  std::string wrong = read_text(path);
  wrong[0] = 'X';
  write_text(bad, wrong);
  EXPECT_THROW(load_probe_bundle(bad), Error);
  fs::remove_all(dir);
}

TEST(Bundle, HeatmapListsAccuracyByLayerAndHead) {
  ProbeBundle b;
  b.n_layers = 2;
  b.n_heads = 2;
  b.d_head = 1;
  b.n_points = 8;
  const double accs[2][2] = {{0.75, 0.5}, {0.625, 1.0}};
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) {
      Probe p;
      p.layer = l;
      p.head = h;
      p.theta = {1.0};
      p.val_accuracy = accs[l][h];
      b.probes.push_back(p);
    }
  EXPECT_EQ(accuracy_heatmap_csv(b),
            "layer,head_0,head_1\n"
            "0,0.750000,0.500000\n"
            "1,0.625000,1.000000\n");
}

}  // namespace
}  // namespace cotsteer::probe
