#pragma once

#include <span>
#include <string>
#include <vector>

#include "vlfau/model.hpp"

namespace vlfau {

inline constexpr double kDecisionThreshold = 0.5;

/// An AU counts as active when its probability exceeds the threshold.
AULabels decisions(const std::vector<double>& probs, double threshold = kDecisionThreshold);

struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

struct F1Result {
  std::vector<double> precision, recall, f1;
  std::vector<Confusion> counts;
  double average = 0;
};

/// Per-AU F1 over frames; F1 is 0 when precision + recall is 0.
F1Result f1_frame(const std::vector<AULabels>& preds, const std::vector<AULabels>& labels);

struct AccuracyResult {
  std::vector<double> per_au;
  double average = 0;
};

AccuracyResult accuracy(const std::vector<AULabels>& preds, const std::vector<AULabels>& labels);

/// Whether `gold` is among the k largest logits, ties going to the lower id.
bool in_top_k(std::span<const float> logits, int gold, int k);

/// Fraction of steps whose gold token is in the top k.
double topk_word_accuracy(const std::vector<Tensor<float>>& step_logits, const TokenSequence& gold, int k = 5);

struct EvalReport {
  int fold = -1;
  std::vector<int> au_codes;
  std::vector<double> f1, accuracy;
  std::vector<Confusion> counts;
  double f1_avg = 0, acc_avg = 0;
  double top5_local = 0, top5_global = 0;
  std::size_t samples = 0;

  std::string to_json() const;
  std::string to_csv() const;
};

/// Classification and teacher-forced word metrics over `indices` of `ds`.
/// Images are centre-cropped to `crop` first (0 keeps them whole).
EvalReport evaluate(const Model<float>& m, const Dataset& ds, const std::vector<int>& indices, int fold,
                    int crop = 0, int workers = 1);

/// One row per (sample, AU branch): sample_id, subject_id, gender, au_index, au_label, pooled feature.
std::string export_embeddings(const Model<float>& m, const Dataset& ds, const std::vector<int>& indices,
                              int crop = 0, int workers = 1);

/// Samples of `k` subjects chosen with `seed`, alternating genders where possible.
std::vector<int> balanced_subject_subset(const Dataset& ds, int k, std::uint64_t seed);

}  // namespace vlfau
