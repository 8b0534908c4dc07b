#include "vlfau/model.hpp"

namespace vlfau {

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  need(au_count >= 1, "au_count must be positive");
  need(image_size >= 16 && image_size % 16 == 0, "image_size must be a positive multiple of 16");
  need(stem.in_channels >= 1 && stem.base_channels >= 1 && stem.msc_width >= 1 && stem.feature_dim >= 1,
       "stem widths must be positive");
  need(reduction >= 1 && stem.feature_dim % reduction == 0, "reduction must divide feature_dim");
  need(hidden >= 1 && embed >= 1, "decoder widths must be positive");
  need(vocab >= kReservedTokens + 1, "vocabulary needs at least one non-reserved token");
  need(max_caption_len >= 2, "max_caption_len must be at least 2");
  need(input_std > 0, "input_std must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"au_count", c.au_count},
          {"image_size", c.image_size},
          {"in_channels", c.stem.in_channels},
          {"base_channels", c.stem.base_channels},
          {"msc_width", c.stem.msc_width},
          {"feature_dim", c.stem.feature_dim},
          {"reduction", c.reduction},
          {"hidden", c.hidden},
          {"embed", c.embed},
          {"vocab", c.vocab},
          {"strict_decoder", c.strict_decoder},
          {"max_caption_len", c.max_caption_len},
          {"input_mean", c.input_mean},
          {"input_std", c.input_std}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.au_count = j.value("au_count", c.au_count);
  c.image_size = j.value("image_size", c.image_size);
  c.stem.in_channels = j.value("in_channels", c.stem.in_channels);
  c.stem.base_channels = j.value("base_channels", c.stem.base_channels);
  c.stem.msc_width = j.value("msc_width", c.stem.msc_width);
  c.stem.feature_dim = j.value("feature_dim", c.stem.feature_dim);
  c.reduction = j.value("reduction", c.reduction);
  c.hidden = j.value("hidden", c.hidden);
  c.embed = j.value("embed", c.embed);
  c.vocab = j.value("vocab", c.vocab);
  c.strict_decoder = j.value("strict_decoder", c.strict_decoder);
  c.max_caption_len = j.value("max_caption_len", c.max_caption_len);
  c.input_mean = j.value("input_mean", c.input_mean);
  c.input_std = j.value("input_std", c.input_std);
  return c;
}

template <typename T>
Model<T> Model<T>::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(seed);
  m.stem = register_stem(m.store, cfg.stem, rng);
  m.msc = register_msc(m.store, cfg.stem, rng);
  for (int i = 0; i < cfg.au_count; ++i) {
    m.branches.push_back(register_branch(m.store, i, cfg.stem.feature_dim, cfg.reduction, rng));
  }
  const int d = cfg.stem.feature_dim;
  m.clf_weight = m.store.add("classifier.weight", kaiming_uniform<T>({2 * cfg.au_count, d}, d, rng, 1.0 / std::sqrt(3.0)));
  m.clf_bias = m.store.add("classifier.bias", Tensor<T>({2 * cfg.au_count}));
  m.global_decoder = register_decoder(m.store, "global_decoder", cfg.decoder(), rng);
  m.local_decoder = register_decoder(m.store, "local_decoder", cfg.decoder(), rng);
  return m;
}

TokenSequence caption_target(const Vocabulary& vocab, const std::string& text, int max_len) {
  TokenSequence ids = vocab.encode(text);
  if (static_cast<int>(ids.size()) > max_len - 1) ids.resize(static_cast<std::size_t>(max_len - 1));
  ids.push_back(kEos);
  return ids;
}

CaptionTargets caption_targets(const Vocabulary& vocab, const Sample& s, int max_len) {
  CaptionTargets t;
  t.global = caption_target(vocab, s.global_caption, max_len);
  for (const auto& l : s.local_captions) t.locals.push_back(caption_target(vocab, l, max_len));
  return t;
}

namespace {

template <typename T>
struct BranchVars {
  ad::Var v;
  std::vector<ad::Var> refined, pooled;
  ad::Var pair_logits;  ///< (2N)
};

template <typename T>
ad::Var classify(Binder<T>& bind, const Model<T>& m, ad::Var feature, int au) {
  auto& g = bind.graph();
  const ad::Var w = ad::slice(g, bind(m.clf_weight), 2 * au, 2);
  const ad::Var b = ad::slice(g, bind(m.clf_bias), 2 * au, 2);
  return ad::add(g, ad::matmul(g, w, feature), b);
}

template <typename T>
BranchVars<T> encode(Binder<T>& bind, const Model<T>& m, ad::Var image) {
  auto& g = bind.graph();
  BranchVars<T> out;
  Tensor<T> shift(g.shape(image));
  std::fill(shift.data.begin(), shift.data.end(), T(-m.cfg.input_mean));
  const ad::Var x = ad::scale(g, ad::add(g, image, g.constant(std::move(shift))), T(1 / m.cfg.input_std));
  out.v = msc_fuse(bind, encode_stages(bind, x, m.stem), m.msc);
  std::vector<ad::Var> logits;
  for (int i = 0; i < m.cfg.au_count; ++i) {
    const ad::Var r = refine(bind, out.v, m.branches[static_cast<std::size_t>(i)]);
    const ad::Var pooled = ad::mean_over_rest(g, r);
    out.refined.push_back(r);
    out.pooled.push_back(pooled);
    logits.push_back(classify(bind, m, pooled, i));
  }
  out.pair_logits = ad::concat(g, logits);
  return out;
}

}  // namespace

template <typename T>
LossVars build_loss(Binder<T>& bind, const Model<T>& m, ad::Var image, const AULabels& labels,
                    const CaptionTargets& targets, const std::vector<double>& gamma, const LossToggles& toggles) {
  auto& g = bind.graph();
  const int n = m.cfg.au_count;
  if (static_cast<int>(labels.size()) != n || static_cast<int>(gamma.size()) != n) {
    throw ShapeError("model has " + std::to_string(n) + " AUs, got " + std::to_string(labels.size()) +
                     " labels and " + std::to_string(gamma.size()) + " weights");
  }
  const BranchVars<T> b = encode(bind, m, image);
  LossVars out;
  out.fau = fau_loss(g, b.pair_logits, labels, gamma);
  std::vector<ad::Var> terms{out.fau};

  if (toggles.lgen) {
    if (static_cast<int>(targets.locals.size()) != n) throw ShapeError("need one local caption per AU");
    std::vector<std::vector<ad::Var>> per_branch;
    for (int i = 0; i < n; ++i) {
      const DecoderInput in = prepare_regions(bind, b.refined[static_cast<std::size_t>(i)], m.local_decoder);
      per_branch.push_back(teacher_forced(bind, in, targets.locals[static_cast<std::size_t>(i)], m.local_decoder).logprobs);
    }
    out.lgen = generation_loss(g, per_branch);
    terms.push_back(out.lgen);
  }
  if (toggles.ggen || toggles.gau) {
    const DecoderInput in = prepare_regions(bind, b.v, m.global_decoder);
    const TeacherForcedVars tf = teacher_forced(bind, in, targets.global, m.global_decoder);
    if (toggles.ggen) {
      out.ggen = generation_loss(g, {tf.logprobs});
      terms.push_back(out.ggen);
    }
    if (toggles.gau) {
      const ad::Var avg = ad::scale(g, ad::add_n(g, tf.contexts), T(1) / T(tf.contexts.size()));
      const ad::Var z = ad::add(g, ad::matmul(g, bind(m.clf_weight), avg), bind(m.clf_bias));
      out.gau = fau_loss(g, z, labels, gamma);
      terms.push_back(out.gau);
    }
  }
  out.total = ad::add_n(g, terms);
  return out;
}

template <typename T>
Forward<T> forward(const Model<T>& m, const Tensor<T>& image) {
  validate_image(image);
  ad::Graph<T> g(false);
  Binder<T> bind(g, m.store);
  const BranchVars<T> b = encode(bind, m, g.constant_ref(image));
  Forward<T> f;
  f.v = g.value(b.v);
  for (std::size_t i = 0; i < b.refined.size(); ++i) {
    f.refined.push_back(g.value(b.refined[i]));
    f.pooled.push_back(g.value(b.pooled[i]));
  }
  const Tensor<T>& z = g.value(b.pair_logits);
  std::vector<double> zd(z.data.begin(), z.data.end());
  f.probs = pair_probabilities(zd);
  return f;
}

template <typename T>
TeacherForcedLogits<T> teacher_forced_all(const Model<T>& m, const Forward<T>& f, const CaptionTargets& t) {
  TeacherForcedLogits<T> out;
  if (t.locals.size() != f.refined.size()) throw ShapeError("need one local caption per AU");
  for (std::size_t i = 0; i < f.refined.size(); ++i) {
    out.local.push_back(teacher_forced_logits(f.refined[i], t.locals[i], m.store, m.local_decoder));
  }
  out.global = teacher_forced_logits(f.v, t.global, m.store, m.global_decoder);
  return out;
}

#define VLFAU_INSTANTIATE(T)                                                                                  \
  template struct Model<T>;                                                                                   \
  template LossVars build_loss<T>(Binder<T>&, const Model<T>&, ad::Var, const AULabels&, const CaptionTargets&, \
                                  const std::vector<double>&, const LossToggles&);                            \
  template Forward<T> forward<T>(const Model<T>&, const Tensor<T>&);                                          \
  template TeacherForcedLogits<T> teacher_forced_all<T>(const Model<T>&, const Forward<T>&, const CaptionTargets&);

VLFAU_INSTANTIATE(float)
VLFAU_INSTANTIATE(double)

}  // namespace vlfau
