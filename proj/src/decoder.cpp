#include "vlfau/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vlfau {

template <typename T>
DecoderParams register_decoder(ParamStore<T>& store, const std::string& prefix, const DecoderConfig& cfg,
                               Rng& rng) {
  if (cfg.vocab < kReservedTokens) throw VocabularyError("decoder vocabulary must hold the 4 reserved tokens");
  const int d = cfg.feature_dim, h = cfg.hidden;
  DecoderParams p;
  p.cfg = cfg;
  p.wv = store.add(prefix + ".wv", kaiming_uniform<T>({d, d}, d, rng, 0.5));
  p.wh = store.add(prefix + ".wh", kaiming_uniform<T>({h, d}, h, rng, 0.5));
  p.wa = store.add(prefix + ".wa", kaiming_uniform<T>({d}, d, rng, 0.5));
  p.cell_w = store.add(prefix + ".cell_w", kaiming_uniform<T>({4 * h, cfg.cell_input()}, cfg.cell_input(), rng, 0.5));
  Tensor<T> bias({4 * h});
  for (int j = h; j < 2 * h; ++j) bias[static_cast<std::size_t>(j)] = T(1);  // forget gate
  p.cell_b = store.add(prefix + ".cell_b", std::move(bias));
  p.ws = store.add(prefix + ".ws", kaiming_uniform<T>({h, cfg.vocab}, h, rng, 0.5));
  if (!cfg.strict_input) {
    p.embedding = store.add(prefix + ".embedding", kaiming_uniform<T>({cfg.vocab, cfg.embed}, 3, rng, 0.5));
  }
  return p;
}

template <typename T>
DecoderInput prepare_regions(Binder<T>& bind, ad::Var regions, const DecoderParams& p) {
  auto& g = bind.graph();
  const Shape& s = g.shape(regions);
  ad::Var r = regions;
  if (s.size() == 3) {
    r = ad::reshape(g, regions, Shape{s[0], s[1] * s[2]});
  } else if (s.size() != 2) {
    throw ShapeError("decoder regions must be (d, L) or (d, H, W), got " + shape_str(s));
  }
  if (g.shape(r)[0] != p.cfg.feature_dim || g.shape(r)[1] < 1) {
    throw ShapeError("decoder expects " + std::to_string(p.cfg.feature_dim) + "-dim regions, got " +
                     shape_str(g.shape(r)));
  }
  return {r, ad::matmul(g, bind(p.wv), r)};
}

template <typename T>
ad::Var attention_weights(Binder<T>& bind, const DecoderInput& in, ad::Var h_prev, const DecoderParams& p) {
  auto& g = bind.graph();
  const ad::Var hproj = ad::matmul(g, h_prev, bind(p.wh));  // (d)
  const ad::Var hidden = ad::relu(g, ad::add_row_bias(g, in.projected, hproj));
  return ad::softmax(g, ad::matmul(g, bind(p.wa), hidden));
}

template <typename T>
StepVars decode_step(Binder<T>& bind, const DecoderInput& in, ad::Var h_prev, ad::Var c_prev, int prev_token,
                     const DecoderParams& p) {
  auto& g = bind.graph();
  if (prev_token < 0 || prev_token >= p.cfg.vocab) {
    throw VocabularyError("token id " + std::to_string(prev_token) + " outside vocabulary of " +
                          std::to_string(p.cfg.vocab));
  }
  StepVars s;
  s.alpha = attention_weights(bind, in, h_prev, p);
  s.context = ad::matmul(g, in.regions, s.alpha);
  std::vector<ad::Var> parts;
  if (!p.cfg.strict_input) parts.push_back(ad::row(g, bind(p.embedding), prev_token));
  parts.push_back(s.context);
  parts.push_back(h_prev);
  const ad::Var gates = ad::add(g, ad::matmul(g, bind(p.cell_w), ad::concat(g, parts)), bind(p.cell_b));
  const ad::Var hc = ad::lstm_cell(g, gates, c_prev);
  const int h = p.cfg.hidden;
  s.h = ad::slice(g, hc, 0, h);
  s.c = ad::slice(g, hc, h, h);
  s.logits = ad::matmul(g, s.h, bind(p.ws));
  return s;
}

template <typename T>
TeacherForcedVars teacher_forced(Binder<T>& bind, const DecoderInput& in, const TokenSequence& gold,
                                 const DecoderParams& p) {
  if (gold.empty()) throw std::invalid_argument("teacher forcing needs a non-empty gold sequence");
  auto& g = bind.graph();
  ad::Var h = g.constant(Tensor<T>({p.cfg.hidden}));
  ad::Var c = g.constant(Tensor<T>({p.cfg.hidden}));
  TeacherForcedVars out;
  int prev = kBos;
  for (int target : gold) {
    if (target < 0 || target >= p.cfg.vocab) {
      throw VocabularyError("gold token " + std::to_string(target) + " outside vocabulary");
    }
    const StepVars s = decode_step(bind, in, h, c, prev, p);
    out.logprobs.push_back(ad::log_softmax_at(g, s.logits, target));
    out.contexts.push_back(s.context);
    out.logits.push_back(s.logits);
    h = s.h;
    c = s.c;
    prev = target;
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> log_softmax_values(const Tensor<T>& logits) {
  const T mx = *std::max_element(logits.data.begin(), logits.data.end());
  T s = 0;
  for (T v : logits.data) s += std::exp(v - mx);
  const T lse = mx + std::log(s);
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

namespace {

/// Holds the region projection so repeated steps over one image reuse it.
template <typename T>
class StepRunner {
 public:
  StepRunner(const Tensor<T>& regions, const ParamStore<T>& store, const DecoderParams& p)
      : store_(store), p_(p) {
    ad::Graph<T> g(false);
    Binder<T> bind(g, store);
    const DecoderInput in = prepare_regions(bind, g.constant_ref(regions), p);
    regions_ = g.value(in.regions);
    projected_ = g.value(in.projected);
  }

  int length() const { return regions_.dim(1); }

  StepResult<T> step(const DecoderState<T>& state, int prev_token) const {
    ad::Graph<T> g(false);
    Binder<T> bind(g, store_);
    const DecoderInput in{g.constant_ref(regions_), g.constant_ref(projected_)};
    if (state.h.size() != static_cast<std::size_t>(p_.cfg.hidden) || state.c.size() != state.h.size()) {
      throw ShapeError("decoder state does not match hidden size " + std::to_string(p_.cfg.hidden));
    }
    const StepVars s = decode_step(bind, in, g.constant_ref(state.h), g.constant_ref(state.c), prev_token, p_);
    return {DecoderState<T>{g.value(s.h), g.value(s.c), g.value(s.alpha)}, g.value(s.logits)};
  }

 private:
  const ParamStore<T>& store_;
  const DecoderParams& p_;
  Tensor<T> regions_;
  Tensor<T> projected_;
};

}  // namespace

template <typename T>
DecoderState<T> initial_state(const DecoderParams& p, int regions) {
  DecoderState<T> s{Tensor<T>({p.cfg.hidden}), Tensor<T>({p.cfg.hidden}), Tensor<T>({regions})};
  for (auto& a : s.alpha.data) a = T(1) / T(regions);
  return s;
}

template <typename T>
Tensor<T> soft_attention(const Tensor<T>& regions, const Tensor<T>& h_prev, const ParamStore<T>& store,
                         const DecoderParams& p) {
  ad::Graph<T> g(false);
  Binder<T> bind(g, store);
  const DecoderInput in = prepare_regions(bind, g.constant_ref(regions), p);
  return g.value(attention_weights(bind, in, g.constant_ref(h_prev), p));
}

template <typename T>
StepResult<T> decode_step(const DecoderState<T>& state, int prev_token, const Tensor<T>& regions,
                          const ParamStore<T>& store, const DecoderParams& p) {
  return StepRunner<T>(regions, store, p).step(state, prev_token);
}

template <typename T>
std::vector<Tensor<T>> teacher_forced_logits(const Tensor<T>& regions, const TokenSequence& gold,
                                             const ParamStore<T>& store, const DecoderParams& p) {
  ad::Graph<T> g(false);
  Binder<T> bind(g, store);
  const DecoderInput in = prepare_regions(bind, g.constant_ref(regions), p);
  const TeacherForcedVars tf = teacher_forced(bind, in, gold, p);
  std::vector<Tensor<T>> out;
  for (ad::Var v : tf.logits) out.push_back(g.value(v));
  return out;
}

template <typename T>
std::vector<T> teacher_forced_logprobs(const Tensor<T>& regions, const TokenSequence& gold,
                                       const ParamStore<T>& store, const DecoderParams& p) {
  ad::Graph<T> g(false);
  Binder<T> bind(g, store);
  const DecoderInput in = prepare_regions(bind, g.constant_ref(regions), p);
  const TeacherForcedVars tf = teacher_forced(bind, in, gold, p);
  std::vector<T> out;
  for (ad::Var v : tf.logprobs) out.push_back(g.value(v)[0]);
  return out;
}

template <typename T>
Decoded<T> greedy_decode(const Tensor<T>& regions, const ParamStore<T>& store, const DecoderParams& p,
                         int max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  const StepRunner<T> runner(regions, store, p);
  DecoderState<T> state = initial_state<T>(p, runner.length());
  Decoded<T> out;
  int prev = kBos;
  for (int t = 0; t < max_len; ++t) {
    StepResult<T> r = runner.step(state, prev);
    const std::vector<T> lp = log_softmax_values(r.logits);
    // max_element returns the first maximum, i.e. the lowest id on ties
    const int tok = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    out.tokens.push_back(tok);
    out.logprobs.push_back(lp[static_cast<std::size_t>(tok)]);
    out.score += lp[static_cast<std::size_t>(tok)];
    state = std::move(r.state);
    prev = tok;
    if (tok == kEos) break;
  }
  return out;
}

template <typename T>
Decoded<T> beam_decode(const Tensor<T>& regions, const ParamStore<T>& store, const DecoderParams& p, int width,
                       int max_len) {
  if (width < 1) throw std::invalid_argument("beam width must be at least 1, got " + std::to_string(width));
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  const StepRunner<T> runner(regions, store, p);

  struct Hyp {
    Decoded<T> seq;
    DecoderState<T> state;
  };
  struct Candidate {
    std::size_t parent;
    int token;
    T score;
  };

  std::vector<Hyp> beam;
  beam.push_back({Decoded<T>{}, initial_state<T>(p, runner.length())});
  std::vector<Decoded<T>> completed;

  auto better = [](T sa, const TokenSequence& a, T sb, const TokenSequence& b) {
    if (sa != sb) return sa > sb;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  };

  for (int t = 0; t < max_len && !beam.empty(); ++t) {
    std::vector<StepResult<T>> steps;
    std::vector<std::vector<T>> logps;
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < beam.size(); ++i) {
      const int prev = beam[i].seq.tokens.empty() ? kBos : beam[i].seq.tokens.back();
      steps.push_back(runner.step(beam[i].state, prev));
      logps.push_back(log_softmax_values(steps.back().logits));
      for (int tok = 0; tok < p.cfg.vocab; ++tok) {
        cands.push_back({i, tok, beam[i].seq.score + logps.back()[static_cast<std::size_t>(tok)]});
      }
    }
    // Parents are ordered by the same comparator, so (parent, token) order is
    // lexicographic sequence order among candidates of equal score.
    std::stable_sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.parent != b.parent) {
        const auto& ta = beam[a.parent].seq.tokens;
        const auto& tb = beam[b.parent].seq.tokens;
        if (ta != tb) return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
      }
      return a.token < b.token;
    });
    if (cands.size() > static_cast<std::size_t>(width)) cands.resize(static_cast<std::size_t>(width));

    std::vector<Hyp> next;
    for (const Candidate& c : cands) {
      Decoded<T> seq = beam[c.parent].seq;
      seq.tokens.push_back(c.token);
      seq.logprobs.push_back(logps[c.parent][static_cast<std::size_t>(c.token)]);
      seq.score = c.score;
      if (c.token == kEos || t + 1 == max_len) {
        completed.push_back(std::move(seq));
      } else {
        next.push_back({std::move(seq), steps[c.parent].state});
      }
    }
    beam = std::move(next);
  }

  auto best = std::min_element(completed.begin(), completed.end(), [&](const Decoded<T>& a, const Decoded<T>& b) {
    return better(a.score, a.tokens, b.score, b.tokens);
  });
  return *best;
}

#define VLFAU_INSTANTIATE(T)                                                                                 \
  template DecoderParams register_decoder<T>(ParamStore<T>&, const std::string&, const DecoderConfig&, Rng&); \
  template DecoderInput prepare_regions<T>(Binder<T>&, ad::Var, const DecoderParams&);                       \
  template ad::Var attention_weights<T>(Binder<T>&, const DecoderInput&, ad::Var, const DecoderParams&);     \
  template StepVars decode_step<T>(Binder<T>&, const DecoderInput&, ad::Var, ad::Var, int, const DecoderParams&); \
  template TeacherForcedVars teacher_forced<T>(Binder<T>&, const DecoderInput&, const TokenSequence&,        \
                                               const DecoderParams&);                                        \
  template DecoderState<T> initial_state<T>(const DecoderParams&, int);                                      \
  template Tensor<T> soft_attention<T>(const Tensor<T>&, const Tensor<T>&, const ParamStore<T>&,             \
                                       const DecoderParams&);                                                \
  template StepResult<T> decode_step<T>(const DecoderState<T>&, int, const Tensor<T>&, const ParamStore<T>&, \
                                        const DecoderParams&);                                               \
  template std::vector<T> teacher_forced_logprobs<T>(const Tensor<T>&, const TokenSequence&,                 \
                                                     const ParamStore<T>&, const DecoderParams&);            \
  template std::vector<Tensor<T>> teacher_forced_logits<T>(const Tensor<T>&, const TokenSequence&,           \
                                                           const ParamStore<T>&, const DecoderParams&);      \
  template Decoded<T> greedy_decode<T>(const Tensor<T>&, const ParamStore<T>&, const DecoderParams&, int);   \
  template Decoded<T> beam_decode<T>(const Tensor<T>&, const ParamStore<T>&, const DecoderParams&, int, int); \
  template std::vector<T> log_softmax_values<T>(const Tensor<T>&);

VLFAU_INSTANTIATE(float)
VLFAU_INSTANTIATE(double)

}  // namespace vlfau
