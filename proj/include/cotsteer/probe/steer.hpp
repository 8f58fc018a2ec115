#pragma once

// Head ranking and intervention planning: fit one probe per (layer, head),
// rank by validation accuracy, and turn the top-K probe directions into
// activation edits of magnitude alpha * sigma along each unit direction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/lm/model.hpp"
#include "cotsteer/probe/dataset.hpp"
#include "cotsteer/probe/logistic.hpp"

namespace cotsteer::probe {

struct Probe {
  int layer = 0;
  int head = 0;
  std::vector<double> theta;
  double bias = 0.0;
  double val_accuracy = 0.0;
  double sigma = 0.0;  // std of train projections onto theta-hat
};

// Population standard deviation of projections onto theta / ||theta||.
inline double compute_sigma(const std::vector<std::vector<double>>& X_train,
                            const std::vector<double>& theta) {
  if (X_train.empty()) fail(Errc::bad_request, "sigma needs at least one point");
  double norm2 = 0.0;
  for (double t : theta) norm2 += t * t;
  const double norm = std::sqrt(norm2);
  if (!(norm > 0.0)) fail(Errc::zero_direction, "cannot project onto a zero direction");

  std::vector<double> proj(X_train.size());
  double mean = 0.0;
  for (size_t i = 0; i < X_train.size(); ++i) {
    if (X_train[i].size() != theta.size()) fail(Errc::bad_request, "row width does not match theta");
    double z = 0.0;
    for (size_t j = 0; j < theta.size(); ++j) z += theta[j] * X_train[i][j];
    proj[i] = z / norm;
    mean += proj[i];
  }
  mean /= double(proj.size());
  double var = 0.0;
  for (double p : proj) var += (p - mean) * (p - mean);
  return std::sqrt(var / double(proj.size()));
}

// Descending validation accuracy; ties resolve to the lower layer, then the
// lower head index. A permutation of the input.
inline std::vector<Probe> rank_heads(std::vector<Probe> probes) {
  std::sort(probes.begin(), probes.end(), [](const Probe& a, const Probe& b) {
    if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.head < b.head;
  });
  return probes;
}

// Trains one probe per (layer, head) of the table against the binarized
// scores, evaluating on the held-out fold and computing each head's
// projection spread on the train fold.
inline std::vector<Probe> fit_probes(const ActivationTable& table, uint64_t seed,
                                     const ProbeHyper& hyper = {}) {
  const std::vector<int> labels = binarize(table.scores);
  const SplitIndices split = split_dataset(labels, seed);

  const auto slice = [&](const std::vector<int>& idx, int l, int h,
                         std::vector<std::vector<double>>& X, std::vector<int>& y) {
    X.clear();
    y.clear();
    for (int q : idx) {
      const double* v = table.vec(q, l, h);
      X.emplace_back(v, v + table.d_head);
      y.push_back(labels[q]);
    }
  };

  std::vector<Probe> probes;
  std::vector<std::vector<double>> X_train, X_val;
  std::vector<int> y_train, y_val;
  for (int l = 0; l < table.n_layers; ++l) {
    for (int h = 0; h < table.n_heads; ++h) {
      slice(split.train, l, h, X_train, y_train);
      slice(split.val, l, h, X_val, y_val);
      const ProbeFit fit = train_probe(X_train, y_train, hyper);
      Probe p;
      p.layer = l;
      p.head = h;
      p.theta = fit.theta;
      p.bias = fit.bias;
      p.val_accuracy = probe_accuracy(X_val, y_val, fit);
      p.sigma = compute_sigma(X_train, fit.theta);
      probes.push_back(std::move(p));
    }
  }
  return probes;
}

struct PlanEntry {
  int layer = 0;
  int head = 0;
  std::vector<double> direction;  // unit vector
  double sigma = 0.0;
};

struct InterventionPlan {
  double alpha = 0.0;
  std::vector<PlanEntry> entries;
};

// Top-K ranked heads, each with its unit probe direction and spread.
inline InterventionPlan make_plan(const std::vector<Probe>& probes, int k, double alpha) {
  if (!(alpha > 0.0)) fail(Errc::config_invalid, "alpha must be positive");
  if (k < 1 || size_t(k) > probes.size())
    fail(Errc::k_too_large, "k = " + std::to_string(k) + " with " +
                                std::to_string(probes.size()) + " probes");

  const std::vector<Probe> ranked = rank_heads(probes);
  InterventionPlan plan;
  plan.alpha = alpha;
  for (int i = 0; i < k; ++i) {
    const Probe& p = ranked[size_t(i)];
    double norm2 = 0.0;
    for (double t : p.theta) norm2 += t * t;
    const double norm = std::sqrt(norm2);
    if (!(norm > 0.0)) fail(Errc::zero_direction, "ranked probe has a zero direction");
    PlanEntry e;
    e.layer = p.layer;
    e.head = p.head;
    e.direction.resize(p.theta.size());
    for (size_t j = 0; j < p.theta.size(); ++j) e.direction[j] = p.theta[j] / norm;
    e.sigma = p.sigma;
    plan.entries.push_back(std::move(e));
  }
  return plan;
}

// Each planned head becomes an additive edit of alpha * sigma * direction.
inline std::vector<lm::EditDirective> to_edit_directives(const InterventionPlan& plan) {
  std::vector<lm::EditDirective> edits;
  for (const auto& e : plan.entries) {
    lm::EditDirective d;
    d.layer = e.layer;
    d.head = e.head;
    d.delta.resize(e.direction.size());
    for (size_t j = 0; j < e.direction.size(); ++j)
      d.delta[j] = plan.alpha * e.sigma * e.direction[j];
    edits.push_back(std::move(d));
  }
  return edits;
}

}  // namespace cotsteer::probe
