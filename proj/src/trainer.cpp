#include "vlfau/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vlfau/eval.hpp"
#include "vlfau/parallel.hpp"

namespace vlfau {

namespace fs = std::filesystem;
using json = nlohmann::json;

void TrainConfig::validate_config() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  need(epochs >= 1, "epochs must be at least 1");
  need(batch_size >= 1, "batch_size must be at least 1");
  need(lr >= 0 && std::isfinite(lr), "lr must be finite and non-negative");
  need(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
  need(weight_decay >= 0, "weight_decay must be non-negative");
  need(adam_eps > 0, "adam_eps must be positive");
  need(crop_size >= 0 && crop_size % 16 == 0, "crop_size must be 0 or a multiple of 16");
  need(flip_prob >= 0 && flip_prob <= 1 && cutout_prob >= 0 && cutout_prob <= 1, "probabilities must lie in [0, 1]");
  need(cutout_size >= 0, "cutout_size must be non-negative");
  need(folds >= 1, "folds must be at least 1");
  need(workers >= 1, "workers must be at least 1");
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"adam_eps", c.adam_eps},
          {"crop_size", c.crop_size},
          {"flip_prob", c.flip_prob},
          {"cutout_prob", c.cutout_prob},
          {"cutout_size", c.cutout_size},
          {"seed", c.seed},
          {"split_seed", c.split_seed},
          {"lgen", c.toggles.lgen},
          {"ggen", c.toggles.ggen},
          {"gau", c.toggles.gau},
          {"folds", c.folds},
          {"workers", c.workers},
          {"validate", c.validate}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.crop_size = j.value("crop_size", c.crop_size);
  c.flip_prob = j.value("flip_prob", c.flip_prob);
  c.cutout_prob = j.value("cutout_prob", c.cutout_prob);
  c.cutout_size = j.value("cutout_size", c.cutout_size);
  c.seed = j.value("seed", c.seed);
  c.split_seed = j.value("split_seed", c.split_seed);
  c.toggles.lgen = j.value("lgen", c.toggles.lgen);
  c.toggles.ggen = j.value("ggen", c.toggles.ggen);
  c.toggles.gau = j.value("gau", c.toggles.gau);
  c.folds = j.value("folds", c.folds);
  c.workers = j.value("workers", c.workers);
  c.validate = j.value("validate", c.validate);
  return c;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

void require_chw(const Tensor<float>& image) {
  if (image.rank() != 3) throw ShapeError("expected a (C, H, W) image, got " + shape_str(image.shape));
}

}  // namespace

Tensor<float> hflip(const Tensor<float>& image) {
  require_chw(image);
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor<float> out(image.shape);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y) {
      const std::size_t row = (static_cast<std::size_t>(c) * H + y) * W;
      for (int x = 0; x < W; ++x) out[row + x] = image[row + (W - 1 - x)];
    }
  return out;
}

Tensor<float> crop(const Tensor<float>& image, int row0, int col0, int size) {
  require_chw(image);
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (size < 1 || size > H || size > W) {
    throw ConfigError("crop of " + std::to_string(size) + " does not fit a " + std::to_string(H) + "x" +
                      std::to_string(W) + " image");
  }
  if (row0 < 0 || col0 < 0 || row0 + size > H || col0 + size > W) throw ShapeError("crop window outside image");
  Tensor<float> out({C, size, size});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        out[(static_cast<std::size_t>(c) * size + y) * size + x] =
            image[(static_cast<std::size_t>(c) * H + row0 + y) * W + col0 + x];
  return out;
}

void cutout(Tensor<float>& image, int row0, int col0, int size) {
  require_chw(image);
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (row0 < 0 || col0 < 0 || row0 + size > H || col0 + size > W) throw ShapeError("cutout square outside image");
  for (int c = 0; c < C; ++c)
    for (int y = row0; y < row0 + size; ++y)
      for (int x = col0; x < col0 + size; ++x) image[(static_cast<std::size_t>(c) * H + y) * W + x] = 0.0f;
}

Tensor<float> center_crop(const Tensor<float>& image, int size) {
  require_chw(image);
  const int H = image.dim(1), W = image.dim(2);
  if (size == 0 || (size == H && size == W)) return image;
  return crop(image, (H - size) / 2, (W - size) / 2, size);
}

Tensor<float> augment(const Tensor<float>& image, Rng& rng, const TrainConfig& cfg) {
  require_chw(image);
  const int H = image.dim(1), W = image.dim(2);
  const int size = cfg.crop_size ? cfg.crop_size : std::min(H, W);
  if (size > H || size > W) {
    throw ConfigError("crop size " + std::to_string(size) + " exceeds image " + std::to_string(H) + "x" +
                      std::to_string(W));
  }
  if (cfg.cutout_size > size) throw ConfigError("cutout size exceeds crop size");
  std::uniform_int_distribution<int> row(0, H - size), col(0, W - size);
  std::uniform_int_distribution<int> cut(0, size - cfg.cutout_size);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int r0 = row(rng), c0 = col(rng);
  const bool flip = u(rng) < cfg.flip_prob;
  const bool cut_on = u(rng) < cfg.cutout_prob;
  const int cr = cut(rng), cc = cut(rng);
  Tensor<float> out = (size == H && size == W) ? image : crop(image, r0, c0, size);
  if (flip) out = hflip(out);
  if (cut_on && cfg.cutout_size > 0) cutout(out, cr, cc, cfg.cutout_size);
  return out;
}

// ---------------------------------------------------------------------------
// Optimisation

AdamW::AdamW(const ParamStore<float>& store, const TrainConfig& cfg)
    : lr_(cfg.lr), b1_(cfg.beta1), b2_(cfg.beta2), wd_(cfg.weight_decay), eps_(cfg.adam_eps) {
  for (int s = 0; s < store.size(); ++s) {
    m_.emplace_back(store.at(s).size(), 0.0);
    v_.emplace_back(store.at(s).size(), 0.0);
  }
}

void AdamW::step(ParamStore<float>& store, const GradBuffer<float>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (int s = 0; s < store.size(); ++s) {
    Tensor<float>& p = store.at(s);
    const Tensor<float>& g = grads.grads[static_cast<std::size_t>(s)];
    auto& m = m_[static_cast<std::size_t>(s)];
    auto& v = v_[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = b1_ * m[i] + (1 - b1_) * gi;
      v[i] = b2_ * v[i] + (1 - b2_) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + wd_ * p[i];
      p[i] = static_cast<float>(p[i] - lr_ * update);
    }
  }
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  fau += o.fau;
  lgen += o.lgen;
  ggen += o.ggen;
  gau += o.gau;
  total += o.total;
  return *this;
}

namespace {

template <typename T>
double scalar(const ad::Graph<T>& g, ad::Var v) {
  return v.valid() ? static_cast<double>(g.value(v)[0]) : 0.0;
}

}  // namespace

LossBreakdown accumulate_gradients(const Model<float>& m, const std::vector<TrainItem>& batch,
                                   const std::vector<double>& gamma, const LossToggles& toggles,
                                   GradBuffer<float>& grads, int workers) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), batch.size());
  std::vector<GradBuffer<float>> partial(chunks, GradBuffer<float>(m.store));
  std::vector<LossBreakdown> losses(batch.size());
  parallel_chunks(batch.size(), static_cast<int>(chunks), [&](int w, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const TrainItem& item = batch[k];
      ad::Graph<float> g;
      Binder<float> bind(g, m.store);
      const LossVars l = build_loss(bind, m, g.constant_ref(*item.image), *item.labels, *item.targets, gamma, toggles);
      LossBreakdown& b = losses[k];
      b = {scalar(g, l.fau), scalar(g, l.lgen), scalar(g, l.ggen), scalar(g, l.gau), scalar(g, l.total)};
      if (!std::isfinite(b.total)) {
        char buf[192];
        std::snprintf(buf, sizeof buf,
                      "non-finite loss on batch item %zu: fau=%g lgen=%g ggen=%g gau=%g", k, b.fau, b.lgen,
                      b.ggen, b.gau);
        throw NumericError(buf);
      }
      g.backward(l.total);
      partial[static_cast<std::size_t>(w)].accumulate(g);
    }
  });
  grads.zero();
  for (const auto& p : partial) grads.add(p);
  grads.scale(1.0f / static_cast<float>(batch.size()));
  LossBreakdown mean;
  for (const auto& l : losses) mean += l;
  const double inv = 1.0 / static_cast<double>(batch.size());
  mean.fau *= inv;
  mean.lgen *= inv;
  mean.ggen *= inv;
  mean.gau *= inv;
  mean.total *= inv;
  return mean;
}

LossBreakdown train_step(Model<float>& m, AdamW& opt, const std::vector<TrainItem>& batch,
                         const std::vector<double>& gamma, const LossToggles& toggles, int workers) {
  GradBuffer<float> grads(m.store);
  const LossBreakdown l = accumulate_gradients(m, batch, gamma, toggles, grads, workers);
  opt.step(m.store, grads);
  return l;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream s;
  s << "epoch,l_fau,l_lgen,l_ggen,l_gau,total,val_f1_avg,val_acc_avg,val_top5_local,val_top5_global\n";
  char buf[320];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.loss.fau,
                  e.loss.lgen, e.loss.ggen, e.loss.gau, e.loss.total, e.val_f1_avg, e.val_acc_avg, e.val_top5_local,
                  e.val_top5_global);
    s << buf;
  }
  return s.str();
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write metrics to " + path);
  f << metrics_csv(history);
}

FoldSplit make_split(const Dataset& ds, int folds, int fold, std::uint64_t seed) {
  FoldSplit s;
  s.fold = fold;
  s.folds = folds;
  if (fold == -1) {
    s.train.resize(ds.samples.size());
    std::iota(s.train.begin(), s.train.end(), 0);
    return s;
  }
  if (fold < 0 || fold >= folds) {
    throw ConfigError("fold " + std::to_string(fold) + " outside [0, " + std::to_string(folds) + ")");
  }
  const auto parts = split_folds(ds.subject_of_samples(), folds, seed);
  for (int k = 0; k < folds; ++k) {
    auto& dst = k == fold ? s.held_out : s.train;
    dst.insert(dst.end(), parts[static_cast<std::size_t>(k)].begin(), parts[static_cast<std::size_t>(k)].end());
  }
  std::sort(s.train.begin(), s.train.end());
  return s;
}

ModelConfig model_config_for(const Dataset& ds, ModelConfig base) {
  base.au_count = ds.manifest.au_count;
  base.image_size = ds.manifest.height;
  base.stem.in_channels = ds.manifest.channels;
  base.vocab = ds.vocab.size();
  return base;
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& ds, int fold,
                  const EpochCallback& on_epoch) {
  cfg.validate_config();
  if (ds.samples.empty() || ds.samples.front().image.data.empty()) {
    throw std::invalid_argument("training needs a dataset loaded with images");
  }
  TrainResult r{Model<float>::create(model_cfg, mix_seed(cfg.seed, 0x30DE1)), {}, make_split(ds, cfg.folds, fold, cfg.split_seed), {}};
  Model<float>& model = r.model;
  const FoldSplit& split = r.split;

  std::vector<AULabels> train_labels;
  std::vector<CaptionTargets> targets(ds.samples.size());
  for (int i : split.train) {
    const Sample& s = ds.samples[static_cast<std::size_t>(i)];
    train_labels.push_back(s.labels);
    targets[static_cast<std::size_t>(i)] = caption_targets(ds.vocab, s, model_cfg.max_caption_len);
  }
  const std::vector<double> gamma = compute_class_weights(occurrence_rates(train_labels)).gamma;

  AdamW opt(model.store, cfg);
  Rng rng(cfg.seed);
  std::vector<int> order = split.train;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor<float>> images(e - b);
      parallel_for(e - b, cfg.workers, [&](std::size_t k) {
        const int idx = order[b + k];
        Rng aug(mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(idx)));
        images[k] = augment(ds.samples[static_cast<std::size_t>(idx)].image, aug, cfg);
      });
      std::vector<TrainItem> batch;
      for (std::size_t k = b; k < e; ++k) {
        const auto idx = static_cast<std::size_t>(order[k]);
        batch.push_back({&images[k - b], &ds.samples[idx].labels, &targets[idx]});
      }
      LossBreakdown l = train_step(model, opt, batch, gamma, cfg.toggles, cfg.workers);
      const double n = static_cast<double>(batch.size());
      sum += LossBreakdown{l.fau * n, l.lgen * n, l.ggen * n, l.gau * n, l.total * n};
    }
    const double inv = 1.0 / static_cast<double>(order.size());
    EpochMetrics em;
    em.epoch = epoch;
    em.loss = {sum.fau * inv, sum.lgen * inv, sum.ggen * inv, sum.gau * inv, sum.total * inv};
    if (cfg.validate && !split.held_out.empty()) {
      const EvalReport rep = evaluate(model, ds, split.held_out, fold, cfg.crop_size, cfg.workers);
      em.val_f1_avg = rep.f1_avg;
      em.val_acc_avg = rep.acc_avg;
      em.val_top5_local = rep.top5_local;
      em.val_top5_global = rep.top5_global;
    }
    r.history.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  std::ostringstream st;
  st << rng;
  r.rng_state = st.str();
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& dir, const Model<float>& m, const Vocabulary& vocab,
                     const CheckpointMeta& meta) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "params", ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir + ": " + ec.message());
  json tensors = json::object();
  for (int s = 0; s < m.store.size(); ++s) {
    const std::string file = "params/" + m.store.name(s) + ".ten";
    write_ten1((root / file).string(), m.store.at(s));
    tensors[m.store.name(s)] = file;
  }
  vocab.save((root / "vocab.txt").string());
  const json manifest = {{"format", "vlfau-checkpoint-v1"},
                         {"model", to_json(m.cfg)},
                         {"train", to_json(meta.train)},
                         {"vocabulary", "vocab.txt"},
                         {"epoch", meta.epoch},
                         {"fold", meta.fold},
                         {"rng_state", meta.rng_state},
                         {"tensors", tensors}};
  std::ofstream f(root / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream f(root / "manifest.json", std::ios::binary);
  if (!f) throw IoError("no checkpoint manifest in " + dir);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  try {
    const ModelConfig cfg = model_config_from_json(j.at("model"));
    Checkpoint c{Model<float>::create(cfg, 0), Vocabulary::load((root / j.at("vocabulary").get<std::string>()).string()),
                 {}};
    c.meta.train = train_config_from_json(j.at("train"));
    c.meta.epoch = j.at("epoch");
    c.meta.fold = j.at("fold");
    c.meta.rng_state = j.at("rng_state");
    const json& tensors = j.at("tensors");
    if (static_cast<int>(tensors.size()) != c.model.store.size()) {
      throw IoError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                    std::to_string(c.model.store.size()));
    }
    for (int s = 0; s < c.model.store.size(); ++s) {
      const std::string& name = c.model.store.name(s);
      if (!tensors.contains(name)) throw IoError("checkpoint lacks tensor " + name);
      Tensor<float> t = read_ten1((root / tensors.at(name).get<std::string>()).string());
      if (t.shape != c.model.store.at(s).shape) {
        throw IoError("tensor " + name + " has shape " + shape_str(t.shape) + ", expected " +
                      shape_str(c.model.store.at(s).shape));
      }
      c.model.store.at(s) = std::move(t);
    }
    if (c.vocab.size() != cfg.vocab) throw IoError("checkpoint vocabulary size disagrees with its model");
    return c;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Gradient verification

GradCheckReport grad_check(ParamStore<double>& store, const LossBuilder& loss, double eps, double floor,
                           const GradCorruption& corrupt) {
  GradBuffer<double> analytic(store);
  {
    ad::Graph<double> g;
    Binder<double> bind(g, store);
    const ad::Var l = loss(bind);
    g.backward(l);
    analytic.accumulate(g);
  }
  if (corrupt) corrupt(analytic);
  auto evaluate_loss = [&] {
    ad::Graph<double> g(false);
    Binder<double> bind(g, store);
    return g.value(loss(bind))[0];
  };
  GradCheckReport r;
  for (int s = 0; s < store.size(); ++s) {
    Tensor<double>& p = store.at(s);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double up = evaluate_loss();
      p[i] = saved - eps;
      const double down = evaluate_loss();
      p[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic.grads[static_cast<std::size_t>(s)][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++r.checked;
      if (rel > r.max_rel_error || r.checked == 1) {
        r.max_rel_error = rel;
        r.worst_param = store.name(s);
        r.worst_index = i;
        r.analytic = a;
        r.numeric = numeric;
      }
    }
  }
  return r;
}

GradCheckReport grad_check_model(Model<double>& m, const std::vector<GradCheckSample>& batch,
                                 const std::vector<double>& gamma, const LossToggles& toggles, double eps,
                                 double floor, const GradCorruption& corrupt) {
  if (batch.empty()) throw std::invalid_argument("gradient check needs at least one sample");
  const LossBuilder loss = [&](Binder<double>& bind) {
    auto& g = bind.graph();
    std::vector<ad::Var> totals;
    for (const auto& s : batch) {
      totals.push_back(build_loss(bind, m, g.constant_ref(s.image), s.labels, s.targets, gamma, toggles).total);
    }
    return ad::scale(g, ad::add_n(g, totals), 1.0 / static_cast<double>(batch.size()));
  };
  return grad_check(m.store, loss, eps, floor, corrupt);
}

}  // namespace vlfau
