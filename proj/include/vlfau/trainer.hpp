#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vlfau/model.hpp"

namespace vlfau {

struct TrainConfig {
  int epochs = 15;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 5e-4;
  double adam_eps = 1e-8;
  int crop_size = 0;  ///< 0 means the full image
  double flip_prob = 0.5;
  double cutout_prob = 0.5;
  int cutout_size = 16;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;  ///< fold assignment, independent of the training seed
  LossToggles toggles;
  int folds = 3;
  int workers = 1;
  bool validate = true;  ///< evaluate the held-out fold after every epoch

  void validate_config() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Augmentation

Tensor<float> hflip(const Tensor<float>& image);
Tensor<float> crop(const Tensor<float>& image, int row0, int col0, int size);
/// Zeroes the size x size square at (row0, col0) in every channel.
void cutout(Tensor<float>& image, int row0, int col0, int size);
/// Centre crop to `size` (identity when size is 0 or the full extent).
Tensor<float> center_crop(const Tensor<float>& image, int size);

/// Random crop, horizontal flip and cutout. Always consumes the same number of draws.
Tensor<float> augment(const Tensor<float>& image, Rng& rng, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Optimisation

/// Decoupled weight decay Adam. Moments are aligned with the store's slots.
class AdamW {
 public:
  AdamW(const ParamStore<float>& store, const TrainConfig& cfg);
  void step(ParamStore<float>& store, const GradBuffer<float>& grads);
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, wd_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct LossBreakdown {
  double fau = 0, lgen = 0, ggen = 0, gau = 0, total = 0;
  LossBreakdown& operator+=(const LossBreakdown& o);
};

struct TrainItem {
  const Tensor<float>* image;
  const AULabels* labels;
  const CaptionTargets* targets;
};

/// Accumulates the mean-over-batch gradient into `grads` (zeroed first) and
/// returns the mean loss components. Throws NumericError on a non-finite loss.
LossBreakdown accumulate_gradients(const Model<float>& m, const std::vector<TrainItem>& batch,
                                   const std::vector<double>& gamma, const LossToggles& toggles,
                                   GradBuffer<float>& grads, int workers = 1);

/// One forward/backward pass over `batch` followed by an AdamW update.
LossBreakdown train_step(Model<float>& m, AdamW& opt, const std::vector<TrainItem>& batch,
                         const std::vector<double>& gamma, const LossToggles& toggles, int workers = 1);

struct EpochMetrics {
  int epoch = 0;
  LossBreakdown loss;  ///< means over the epoch's training samples
  double val_f1_avg = 0, val_acc_avg = 0, val_top5_local = 0, val_top5_global = 0;
};

std::string metrics_csv(const std::vector<EpochMetrics>& history);
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history);

struct FoldSplit {
  int fold = 0;
  int folds = 3;
  std::vector<int> train, held_out;
};

/// Subject-exclusive split with fold `fold` held out; fold -1 trains on every sample.
FoldSplit make_split(const Dataset& ds, int folds, int fold, std::uint64_t seed);

struct TrainResult {
  Model<float> model;
  std::vector<EpochMetrics> history;
  FoldSplit split;
  std::string rng_state;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

ModelConfig model_config_for(const Dataset& ds, ModelConfig base);

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& ds, int fold,
                  const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointMeta {
  TrainConfig train;
  int epoch = 0;
  int fold = -1;  ///< held-out fold, -1 when trained on everything
  std::string rng_state;
};

/// Directory of TEN1 files plus manifest.json and vocab.txt.
void save_checkpoint(const std::string& dir, const Model<float>& m, const Vocabulary& vocab,
                     const CheckpointMeta& meta);

struct Checkpoint {
  Model<float> model;
  Vocabulary vocab;
  CheckpointMeta meta;
};

Checkpoint load_checkpoint(const std::string& dir);

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0, numeric = 0;
  std::size_t checked = 0;
};

/// Relative errors use max(|a|, |n|, floor) as the denominator so that
/// gradients that vanish analytically are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-6;

using LossBuilder = std::function<ad::Var(Binder<double>&)>;
using GradCorruption = std::function<void(GradBuffer<double>&)>;

/// Central differences on every element of every parameter in `store`.
GradCheckReport grad_check(ParamStore<double>& store, const LossBuilder& loss, double eps = 1e-5,
                           double floor = kGradCheckFloor, const GradCorruption& corrupt = {});

struct GradCheckSample {
  Tensor<double> image;
  AULabels labels;
  CaptionTargets targets;
};

/// Full joint loss averaged over `batch`.
GradCheckReport grad_check_model(Model<double>& m, const std::vector<GradCheckSample>& batch,
                                 const std::vector<double>& gamma, const LossToggles& toggles, double eps = 1e-5,
                                 double floor = kGradCheckFloor, const GradCorruption& corrupt = {});

}  // namespace vlfau
