#include "vlfau/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vlfau {

ClassWeights compute_class_weights(std::span<const double> epsilon) {
  if (epsilon.empty()) throw std::domain_error("class weights need at least one occurrence rate");
  double total = 0;
  for (double e : epsilon) {
    if (!(e > 0) || !std::isfinite(e)) throw std::domain_error("occurrence rates must be positive and finite");
    total += 1.0 / e;
  }
  ClassWeights w;
  w.epsilon.assign(epsilon.begin(), epsilon.end());
  for (double e : epsilon) w.gamma.push_back((1.0 / e) / total);
  return w;
}

std::vector<double> pair_probabilities(std::span<const double> pair_logits) {
  if (pair_logits.size() % 2) throw ShapeError("pair logits must have even length");
  std::vector<double> p;
  for (std::size_t i = 0; i < pair_logits.size(); i += 2) {
    p.push_back(ad::sigmoid_scalar(pair_logits[i + 1] - pair_logits[i]));
  }
  return p;
}

namespace {

void check_fau_shapes(std::size_t probs, std::size_t labels, const ClassWeights& w) {
  if (probs != labels || probs != w.gamma.size() || probs == 0) {
    throw ShapeError("fau loss: " + std::to_string(probs) + " predictions, " + std::to_string(labels) +
                     " labels, " + std::to_string(w.gamma.size()) + " weights");
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

}  // namespace

double fau_loss(std::span<const double> probs, std::span<const int> labels, const ClassWeights& w) {
  check_fau_shapes(probs.size(), labels.size(), w);
  double s = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    s += w.gamma[i] * (labels[i] ? std::log(p) : std::log(1.0 - p));
  }
  return -s / static_cast<double>(probs.size());
}

double local_gen_loss(const std::vector<std::vector<double>>& per_branch_logprobs) {
  if (per_branch_logprobs.empty()) throw std::invalid_argument("generation loss needs at least one branch");
  double s = 0;
  for (const auto& b : per_branch_logprobs) {
    if (b.empty()) throw std::invalid_argument("generation loss: branch with no steps");
    double m = 0;
    for (double v : b) m += v;
    s += m / static_cast<double>(b.size());
  }
  return -s / static_cast<double>(per_branch_logprobs.size());
}

double global_gen_loss(std::span<const double> logprobs) {
  return local_gen_loss({std::vector<double>(logprobs.begin(), logprobs.end())});
}

double global_aux_au_loss(std::span<const double> avg_context, std::span<const int> labels,
                          const ClassWeights& w, std::span<const double> clf_weight,
                          std::span<const double> clf_bias) {
  const std::size_t d = avg_context.size();
  const std::size_t outputs = clf_bias.size();
  if (outputs != 2 * labels.size() || clf_weight.size() != outputs * d) {
    throw ShapeError("global AU classifier shape does not match " + std::to_string(labels.size()) + " AUs");
  }
  std::vector<double> logits(outputs);
  for (std::size_t o = 0; o < outputs; ++o) {
    double s = clf_bias[o];
    for (std::size_t j = 0; j < d; ++j) s += clf_weight[o * d + j] * avg_context[j];
    logits[o] = s;
  }
  const auto p = pair_probabilities(logits);
  return fau_loss(p, labels, w);
}

double joint_loss(double l_fau, double l_lgen, double l_ggen, double l_gau) {
  for (double v : {l_fau, l_lgen, l_ggen, l_gau}) {
    if (!std::isfinite(v)) throw NumericError("joint loss: non-finite component");
  }
  return l_fau + l_lgen + l_ggen + l_gau;
}

template <typename T>
ad::Var fau_loss(ad::Graph<T>& g, ad::Var pair_logits, std::span<const int> labels, std::span<const double> gamma) {
  const Tensor<T>& Z = g.value(pair_logits);
  const std::size_t n = labels.size();
  if (Z.size() != 2 * n || gamma.size() != n || n == 0) {
    throw ShapeError("fau loss: logits " + shape_str(Z.shape) + " for " + std::to_string(n) + " labels");
  }
  const T lo = T(kProbClamp), hi = T(1) - T(kProbClamp);
  std::vector<T> probs(n);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T p = ad::sigmoid_scalar(Z[2 * i + 1] - Z[2 * i]);
    probs[i] = p;
    const T pc = std::clamp(p, lo, hi);
    loss += T(gamma[i]) * (labels[i] ? std::log(pc) : std::log(T(1) - pc));
  }
  loss = -loss / T(n);
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<T> gm(gamma.begin(), gamma.end());
  return g.push(Tensor<T>({1}, loss), g.needs_grad(pair_logits),
                [pair_logits, probs, y, gm, lo, hi](ad::Graph<T>& g, ad::Var out) {
                  const T go = g.grad(out)[0];
                  Tensor<T>& gz = g.grad(pair_logits);
                  const T n = T(y.size());
                  for (std::size_t i = 0; i < y.size(); ++i) {
                    const T p = probs[i];
                    if (p < lo || p > hi) continue;  // clamped: flat
                    // d/dp of -(gamma/N)[y ln p + (1-y) ln(1-p)], times dp/dz = p(1-p)
                    const T dl_dp = -(T(gm[i]) / n) * (y[i] ? T(1) / p : T(-1) / (T(1) - p));
                    const T dz = go * dl_dp * p * (T(1) - p);
                    gz[2 * i + 1] += dz;
                    gz[2 * i] -= dz;
                  }
                });
}

template <typename T>
ad::Var generation_loss(ad::Graph<T>& g, const std::vector<std::vector<ad::Var>>& per_branch_logprobs) {
  if (per_branch_logprobs.empty()) throw std::invalid_argument("generation loss needs at least one branch");
  std::vector<ad::Var> means;
  for (const auto& b : per_branch_logprobs) {
    if (b.empty()) throw std::invalid_argument("generation loss: branch with no steps");
    means.push_back(ad::scale(g, ad::add_n(g, b), T(1) / T(b.size())));
  }
  return ad::scale(g, ad::add_n(g, means), T(-1) / T(per_branch_logprobs.size()));
}

template ad::Var fau_loss<float>(ad::Graph<float>&, ad::Var, std::span<const int>, std::span<const double>);
template ad::Var fau_loss<double>(ad::Graph<double>&, ad::Var, std::span<const int>, std::span<const double>);
template ad::Var generation_loss<float>(ad::Graph<float>&, const std::vector<std::vector<ad::Var>>&);
template ad::Var generation_loss<double>(ad::Graph<double>&, const std::vector<std::vector<ad::Var>>&);

}  // namespace vlfau
