#pragma once

// L2-regularized logistic regression trained by full-batch gradient descent.
// Small and deterministic: zero init, fixed learning rate, gradient-norm
// stopping. The loss/gradient pair is exposed for finite-difference checks.

#include <cmath>
#include <vector>

#include "cotsteer/common/errors.hpp"

namespace cotsteer::probe {

struct ProbeHyper {
  double lr = 0.1;
  int max_iters = 2000;
  double lambda = 1e-3;  // applies to the weights, not the bias
  double grad_tol = 1e-6;
};

struct ProbeFit {
  std::vector<double> theta;
  double bias = 0.0;
};

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

// Mean logistic loss plus (lambda/2)*||theta||^2; fills the gradient.
inline double logistic_loss_grad(const std::vector<std::vector<double>>& X,
                                 const std::vector<int>& y, const std::vector<double>& theta,
                                 double bias, double lambda, std::vector<double>& grad_theta,
                                 double& grad_bias) {
  const size_t n = X.size(), d = theta.size();
  if (n == 0 || y.size() != n) fail(Errc::bad_request, "loss needs matching X and y");

  grad_theta.assign(d, 0.0);
  grad_bias = 0.0;
  double loss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (X[i].size() != d) fail(Errc::bad_request, "row width does not match theta");
    double z = bias;
    for (size_t j = 0; j < d; ++j) z += theta[j] * X[i][j];
    // -log p(y|x) = softplus(z) - y*z
    loss += detail::softplus(z) - double(y[i]) * z;
    const double r = detail::sigmoid(z) - double(y[i]);
    for (size_t j = 0; j < d; ++j) grad_theta[j] += r * X[i][j];
    grad_bias += r;
  }
  loss /= double(n);
  grad_bias /= double(n);
  double reg = 0.0;
  for (size_t j = 0; j < d; ++j) {
    grad_theta[j] = grad_theta[j] / double(n) + lambda * theta[j];
    reg += theta[j] * theta[j];
  }
  return loss + 0.5 * lambda * reg;
}

inline ProbeFit train_probe(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                            const ProbeHyper& hyper = {}) {
  if (X.empty() || y.size() != X.size()) fail(Errc::bad_request, "training needs matching X and y");
  bool has0 = false, has1 = false;
  for (int label : y) {
    if (label == 0) has0 = true;
    else if (label == 1) has1 = true;
    else fail(Errc::bad_request, "labels must be 0 or 1");
  }
  if (!has0 || !has1) fail(Errc::single_class, "training labels are all one class");

  ProbeFit fit;
  fit.theta.assign(X[0].size(), 0.0);
  std::vector<double> grad;
  double grad_bias = 0.0;
  for (int it = 0; it < hyper.max_iters; ++it) {
    logistic_loss_grad(X, y, fit.theta, fit.bias, hyper.lambda, grad, grad_bias);
    double inf = std::abs(grad_bias);
    for (double g : grad) inf = std::max(inf, std::abs(g));
    if (inf < hyper.grad_tol) break;
    for (size_t j = 0; j < grad.size(); ++j) fit.theta[j] -= hyper.lr * grad[j];
    fit.bias -= hyper.lr * grad_bias;
  }
  return fit;
}

// Fraction of points whose sign(theta.x + bias) matches the label.
inline double probe_accuracy(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                             const ProbeFit& fit) {
  if (X.empty() || y.size() != X.size()) fail(Errc::bad_request, "accuracy needs matching X and y");
  int hits = 0;
  for (size_t i = 0; i < X.size(); ++i) {
    double z = fit.bias;
    for (size_t j = 0; j < fit.theta.size(); ++j) z += fit.theta[j] * X[i][j];
    hits += int(z > 0) == y[i];
  }
  return double(hits) / double(X.size());
}

}  // namespace cotsteer::probe
