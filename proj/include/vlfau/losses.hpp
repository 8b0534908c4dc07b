#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "vlfau/autodiff.hpp"

namespace vlfau {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logarithms.
inline constexpr double kProbClamp = 1e-7;

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Occurrence rates and their inverse-frequency balancing weights.
struct ClassWeights {
  std::vector<double> epsilon;
  std::vector<double> gamma;
};

/// gamma_i = (1 / eps_i) / sum_j (1 / eps_j). Throws std::domain_error on eps_i <= 0.
ClassWeights compute_class_weights(std::span<const double> epsilon);

/// Active-class probabilities from per-AU {inactive, active} logit pairs laid out as (N, 2).
std::vector<double> pair_probabilities(std::span<const double> pair_logits);

/// -(1/N) sum_i gamma_i [y_i ln p_i + (1 - y_i) ln(1 - p_i)] with clamped p.
double fau_loss(std::span<const double> probs, std::span<const int> labels, const ClassWeights& w);

/// -(1/N) sum_i mean_t logp[i][t]. Each branch needs at least one step.
double local_gen_loss(const std::vector<std::vector<double>>& per_branch_logprobs);

/// -mean_t logp[t].
double global_gen_loss(std::span<const double> logprobs);

/// Shared classifier (2N x d weight, 2N bias) on the averaged attention context,
/// per-AU two-way softmax, then the fau_loss form.
double global_aux_au_loss(std::span<const double> avg_context, std::span<const int> labels,
                          const ClassWeights& w, std::span<const double> clf_weight,
                          std::span<const double> clf_bias);

/// Unweighted sum of the four terms; throws NumericError on non-finite input.
double joint_loss(double l_fau, double l_lgen, double l_ggen, double l_gau);

// Graph versions used during training.

/// `pair_logits` is (N, 2); labels and gamma have N entries.
template <typename T>
ad::Var fau_loss(ad::Graph<T>& g, ad::Var pair_logits, std::span<const int> labels, std::span<const double> gamma);

/// Mean-of-means negative log-likelihood over branches of per-step (1) log-prob vars.
template <typename T>
ad::Var generation_loss(ad::Graph<T>& g, const std::vector<std::vector<ad::Var>>& per_branch_logprobs);

}  // namespace vlfau
