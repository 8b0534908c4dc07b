#pragma once

#include <vector>

#include "vlfau/params.hpp"
#include "vlfau/vocab.hpp"

namespace vlfau {

struct DecoderConfig {
  int feature_dim = 32;  ///< d
  int hidden = 32;       ///< h
  int embed = 16;        ///< e, width of the previous-token embedding
  int vocab = 0;
  /// When set, the cell input is [context; h_prev] only and the emitted token is not fed back.
  bool strict_input = false;

  int cell_input() const { return (strict_input ? 0 : embed) + feature_dim + hidden; }
};

/// Slots of one attention-LSTM caption decoder.
struct DecoderParams {
  int wv = -1;         ///< (d, d) region projection
  int wh = -1;         ///< (h, d) hidden-state projection
  int wa = -1;         ///< (d) attention scoring vector
  int cell_w = -1;     ///< (4h, cell_input) gates [i; f; g; o]
  int cell_b = -1;     ///< (4h)
  int ws = -1;         ///< (h, voc) output projection
  int embedding = -1;  ///< (voc, e); absent in strict mode
  DecoderConfig cfg;
};

template <typename T>
DecoderParams register_decoder(ParamStore<T>& store, const std::string& prefix, const DecoderConfig& cfg,
                               Rng& rng);

template <typename T>
struct DecoderState {
  Tensor<T> h;      ///< (h)
  Tensor<T> c;      ///< (h)
  Tensor<T> alpha;  ///< (L), weights used for the step that produced h
};

// ---------------------------------------------------------------------------
// Graph-level building blocks

/// Regions as a (d, L) matrix (columns are regions) plus Wv applied to them.
struct DecoderInput {
  ad::Var regions;
  ad::Var projected;
};

struct StepVars {
  ad::Var h, c, alpha, context, logits;
};

struct TeacherForcedVars {
  std::vector<ad::Var> logprobs;  ///< (1) each, one per gold token
  std::vector<ad::Var> contexts;  ///< (d) attention-weighted region feature per step
  std::vector<ad::Var> logits;    ///< (voc) per step
};

/// Accepts a (d, H, W) feature map or a (d, L) region matrix.
template <typename T>
DecoderInput prepare_regions(Binder<T>& bind, ad::Var regions, const DecoderParams& p);

template <typename T>
ad::Var attention_weights(Binder<T>& bind, const DecoderInput& in, ad::Var h_prev, const DecoderParams& p);

template <typename T>
StepVars decode_step(Binder<T>& bind, const DecoderInput& in, ad::Var h_prev, ad::Var c_prev, int prev_token,
                     const DecoderParams& p);

/// Step t is fed BOS followed by gold[0..t-1] and scores gold[t].
template <typename T>
TeacherForcedVars teacher_forced(Binder<T>& bind, const DecoderInput& in, const TokenSequence& gold,
                                 const DecoderParams& p);

// ---------------------------------------------------------------------------
// Value-level operations. `regions` is (d, L) or (d, H, W).

template <typename T>
DecoderState<T> initial_state(const DecoderParams& p, int regions);

template <typename T>
Tensor<T> soft_attention(const Tensor<T>& regions, const Tensor<T>& h_prev, const ParamStore<T>& store,
                         const DecoderParams& p);

template <typename T>
struct StepResult {
  DecoderState<T> state;
  Tensor<T> logits;
};

template <typename T>
StepResult<T> decode_step(const DecoderState<T>& state, int prev_token, const Tensor<T>& regions,
                          const ParamStore<T>& store, const DecoderParams& p);

template <typename T>
std::vector<T> teacher_forced_logprobs(const Tensor<T>& regions, const TokenSequence& gold,
                                       const ParamStore<T>& store, const DecoderParams& p);

/// Teacher-forced logits, one (voc) tensor per gold token.
template <typename T>
std::vector<Tensor<T>> teacher_forced_logits(const Tensor<T>& regions, const TokenSequence& gold,
                                             const ParamStore<T>& store, const DecoderParams& p);

template <typename T>
struct Decoded {
  TokenSequence tokens;    ///< includes the terminating EOS when one was emitted
  std::vector<T> logprobs;  ///< per emitted token
  T score = T(0);           ///< sum of logprobs
};

/// Argmax decoding; ties go to the lowest token id.
template <typename T>
Decoded<T> greedy_decode(const Tensor<T>& regions, const ParamStore<T>& store, const DecoderParams& p,
                         int max_len);

/// Beam search over raw log-probability sums. Hypotheses ending in EOS are
/// frozen; ties are broken by lexicographic token order.
template <typename T>
Decoded<T> beam_decode(const Tensor<T>& regions, const ParamStore<T>& store, const DecoderParams& p, int width,
                       int max_len);

/// log softmax(logits) computed exactly as the graph op does.
template <typename T>
std::vector<T> log_softmax_values(const Tensor<T>& logits);

}  // namespace vlfau
