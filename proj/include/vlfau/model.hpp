#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vlfau/dair.hpp"
#include "vlfau/data_synth.hpp"
#include "vlfau/decoder.hpp"
#include "vlfau/losses.hpp"
#include "vlfau/stem.hpp"

namespace vlfau {

struct ModelConfig {
  int au_count = 8;
  int image_size = 64;
  StemConfig stem;
  int reduction = 4;
  int hidden = 32;
  int embed = 16;
  int vocab = 0;
  bool strict_decoder = false;
  int max_caption_len = 24;  ///< gold captions are truncated to this many tokens, EOS included
  double input_mean = 0.4;   ///< fixed pixel normalisation applied before the stem
  double input_std = 0.2;

  DecoderConfig decoder() const { return {stem.feature_dim, hidden, embed, vocab, strict_decoder}; }
  int regions() const { return (image_size / 16) * (image_size / 16); }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Which auxiliary objectives contribute to the joint loss. L_Fau is always on.
struct LossToggles {
  bool lgen = true;
  bool ggen = true;
  bool gau = true;

  bool fau_only() const { return !lgen && !ggen && !gau; }
};

/// Full parameter set: stem, MSC, one refinement branch per AU, the shared
/// classifier and the global and (branch-shared) local caption decoders.
template <typename T>
struct Model {
  ModelConfig cfg;
  ParamStore<T> store;
  StemParams stem;
  MscParams msc;
  std::vector<BranchParams> branches;
  int clf_weight = -1;  ///< (2N, d), rows 2i and 2i+1 are AU i's {inactive, active} logits
  int clf_bias = -1;    ///< (2N)
  DecoderParams global_decoder;
  DecoderParams local_decoder;

  static Model create(const ModelConfig& cfg, std::uint64_t seed);

  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.cfg = cfg;
    m.store = store.template cast<U>();
    m.stem = stem;
    m.msc = msc;
    m.branches = branches;
    m.clf_weight = clf_weight;
    m.clf_bias = clf_bias;
    m.global_decoder = global_decoder;
    m.local_decoder = local_decoder;
    return m;
  }
};

/// Training target for one image. Token sequences end with EOS.
struct CaptionTargets {
  TokenSequence global;
  std::vector<TokenSequence> locals;
};

/// Encodes, truncates to `max_len - 1` tokens and appends EOS.
TokenSequence caption_target(const Vocabulary& vocab, const std::string& text, int max_len);
CaptionTargets caption_targets(const Vocabulary& vocab, const Sample& s, int max_len);

struct LossVars {
  ad::Var total;
  ad::Var fau, lgen, ggen, gau;  ///< invalid when the term is switched off
};

/// Builds the joint per-sample objective on `bind`'s graph. Decoder passes whose
/// terms are switched off are not built.
template <typename T>
LossVars build_loss(Binder<T>& bind, const Model<T>& m, ad::Var image, const AULabels& labels,
                    const CaptionTargets& targets, const std::vector<double>& gamma, const LossToggles& toggles);

template <typename T>
struct Forward {
  Tensor<T> v;                     ///< (d, H/16, W/16)
  std::vector<Tensor<T>> refined;  ///< per branch, same shape as v
  std::vector<Tensor<T>> pooled;   ///< per branch, (d)
  std::vector<double> probs;       ///< per AU
};

/// Inference pass: fused features, per-branch refinements, pooled features and AU probabilities.
template <typename T>
Forward<T> forward(const Model<T>& m, const Tensor<T>& image);

/// Teacher-forced per-step logits of every decoder on one sample.
template <typename T>
struct TeacherForcedLogits {
  std::vector<std::vector<Tensor<T>>> local;  ///< [branch][step]
  std::vector<Tensor<T>> global;              ///< [step]
};

template <typename T>
TeacherForcedLogits<T> teacher_forced_all(const Model<T>& m, const Forward<T>& f, const CaptionTargets& t);

}  // namespace vlfau
