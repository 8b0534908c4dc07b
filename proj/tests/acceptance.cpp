// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <unistd.h>

#include "vlfau/eval.hpp"
#include "vlfau/trainer.hpp"

using namespace vlfau;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

bool g_all_pass = true;

void report(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (secs > budget_s) {
    o.pass = false;
    o.detail += "; over the " + std::to_string(static_cast<int>(budget_s)) + " s budget";
  }
  g_all_pass = g_all_pass && o.pass;
  std::printf("[%s] %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Tensor<double> uniform_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// ---------------------------------------------------------------------------

Outcome class_weights() {
  const auto w = compute_class_weights(std::vector<double>{0.5, 0.25, 0.25});
  const double want[3] = {0.2, 0.4, 0.4};
  double worst = 0;
  for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(w.gamma[static_cast<std::size_t>(i)] - want[i]));
  Rng rng(101);
  std::uniform_real_distribution<double> u(1e-3, 1.0);
  double sum_err = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> eps(1 + trial % 16);
    for (auto& e : eps) e = u(rng);
    const auto g = compute_class_weights(eps).gamma;
    sum_err = std::max(sum_err, std::abs(std::accumulate(g.begin(), g.end(), 0.0) - 1.0));
  }
  return {worst <= 1e-12 && sum_err <= 1e-12, fmt("max |gamma - [0.2,0.4,0.4]| = %.2e, max |sum - 1| = %.2e", worst, sum_err)};
}

Outcome closed_form_losses() {
  double worst_fau = 0, worst_gen = 0;
  Rng rng(102);
  for (int n = 1; n <= 16; ++n) {
    std::vector<double> eps(static_cast<std::size_t>(n));
    for (auto& e : eps) e = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    const double l = fau_loss(std::vector<double>(static_cast<std::size_t>(n), 0.5), y, compute_class_weights(eps));
    worst_fau = std::max(worst_fau, std::abs(l - std::log(2.0) / n));
  }
  // uniform decoders: zero output projection makes every logit equal
  for (int voc : {4, 10, 37, 200}) {
    DecoderConfig cfg{6, 5, 3, voc, false};
    ParamStore<double> store;
    Rng r(static_cast<std::uint64_t>(voc));
    const DecoderParams p = register_decoder(store, "dec", cfg, r);
    std::fill(store.at(p.ws).data.begin(), store.at(p.ws).data.end(), 0.0);
    const auto regions = uniform_tensor({6, 4}, r);
    std::vector<std::vector<double>> branches;
    for (int b = 0; b < 3; ++b) {
      TokenSequence gold;
      for (int t = 0; t <= b + 1; ++t) gold.push_back(static_cast<int>(r() % static_cast<std::uint64_t>(voc)));
      gold.push_back(kEos);
      branches.push_back(teacher_forced_logprobs(regions, gold, store, p));
    }
    worst_gen = std::max(worst_gen, std::abs(local_gen_loss(branches) - std::log(voc)));
    worst_gen = std::max(worst_gen, std::abs(global_gen_loss(branches[2]) - std::log(voc)));
  }
  return {worst_fau <= 1e-9 && worst_gen <= 1e-9,
          fmt("max |L_Fau - ln2/N| = %.2e, max |L_gen - ln(voc)| = %.2e", worst_fau, worst_gen)};
}

Outcome attention_normalisation() {
  Rng rng(103);
  double worst_sum = 0, min_alpha = INFINITY;
  for (int draw = 0; draw < 1000; ++draw) {
    const int d = 2 + static_cast<int>(rng() % 15), h = 2 + static_cast<int>(rng() % 15);
    const int L = 1 + static_cast<int>(rng() % 32);
    ParamStore<double> store;
    const DecoderParams p = register_decoder(store, "dec", DecoderConfig{d, h, 4, 12, draw % 2 == 1}, rng);
    // widen the parameters so some draws produce sharply peaked weights
    const double scale = std::uniform_real_distribution<double>(0.1, 20.0)(rng);
    for (int s : {p.wv, p.wh, p.wa})
      for (auto& v : store.at(s).data) v *= scale;
    const auto alpha = soft_attention(uniform_tensor({d, L}, rng, -3, 3), uniform_tensor({h}, rng), store, p);
    double sum = 0;
    for (double a : alpha.data) {
      sum += a;
      min_alpha = std::min(min_alpha, a);
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  return {worst_sum <= 1e-6 && min_alpha >= 0.0, fmt("max |sum alpha - 1| = %.2e, min alpha = %.2e", worst_sum, min_alpha)};
}

Outcome gradient_oracle() {
  ModelConfig cfg;
  cfg.au_count = 3;
  cfg.image_size = 16;
  cfg.stem = {3, 4, 4, 8};
  cfg.reduction = 4;
  cfg.hidden = 8;
  cfg.embed = 4;
  cfg.vocab = 10;
  cfg.max_caption_len = 6;
  Model<double> m = Model<double>::create(cfg, 104);
  Rng rng(105);
  std::vector<GradCheckSample> batch;
  for (int i = 0; i < 2; ++i) {
    GradCheckSample s;
    s.image = uniform_tensor({3, 16, 16}, rng, 0, 1);
    s.labels = {i, 1 - i, 1};
    auto caption = [&](int len) {
      TokenSequence t;
      for (int k = 0; k < len; ++k) t.push_back(kReservedTokens + static_cast<int>(rng() % 6));
      t.push_back(kEos);
      return t;
    };
    s.targets.global = caption(4);
    for (int a = 0; a < 3; ++a) s.targets.locals.push_back(caption(1 + a));
    batch.push_back(std::move(s));
  }
  const auto r = grad_check_model(m, batch, {0.5, 0.3, 0.2}, {}, 1e-5);
  return {r.max_rel_error < 1e-4 && r.checked == m.store.element_count(),
          fmt("max relative error %.3e over %.0f parameters", r.max_rel_error, static_cast<double>(r.checked)) +
              " (worst " + r.worst_param + ")"};
}

// Best sequence by enumeration: sequences end at their first EOS or at max_len.
TokenSequence exhaustive_best(const Tensor<double>& regions, const ParamStore<double>& store, const DecoderParams& p,
                              int max_len) {
  TokenSequence best;
  double best_s = -INFINITY;
  std::vector<TokenSequence> frontier{{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<TokenSequence> next;
    for (const auto& prefix : frontier)
      for (int tok = 0; tok < p.cfg.vocab; ++tok) {
        TokenSequence seq = prefix;
        seq.push_back(tok);
        if (tok != kEos && len < max_len) {
          next.push_back(std::move(seq));
          continue;
        }
        const auto lp = teacher_forced_logprobs(regions, seq, store, p);
        const double s = std::accumulate(lp.begin(), lp.end(), 0.0);
        if (s > best_s || (s == best_s && seq < best)) {
          best_s = s;
          best = seq;
        }
      }
    frontier = std::move(next);
  }
  return best;
}

Outcome beam_oracle() {
  int exact = 0, greedy_eq = 0;
  Rng rng(106);
  for (int seed = 0; seed < 200; ++seed) {
    ParamStore<double> store;
    Rng r(static_cast<std::uint64_t>(seed));
    const DecoderParams p = register_decoder(store, "dec", DecoderConfig{4, 4, 3, 4, false}, r);
    const auto regions = uniform_tensor({4, 3}, rng);
    exact += beam_decode(regions, store, p, 64, 3).tokens == exhaustive_best(regions, store, p, 3);
  }
  for (int seed = 0; seed < 100; ++seed) {
    ParamStore<double> store;
    Rng r(static_cast<std::uint64_t>(5000 + seed));
    const DecoderParams p = register_decoder(store, "dec", DecoderConfig{4, 6, 3, 9, false}, r);
    const auto regions = uniform_tensor({4, 4}, rng);
    greedy_eq += beam_decode(regions, store, p, 1, 8).tokens == greedy_decode(regions, store, p, 8).tokens;
  }
  return {exact == 200 && greedy_eq == 100,
          fmt("width 64 == exhaustive on %.0f/200 seeds, width 1 == greedy on %.0f/100", exact, greedy_eq)};
}

Outcome fold_protocol() {
  Rng rng(107);
  int ok = 0;
  for (int config = 0; config < 100; ++config) {
    const int subjects = 3 + static_cast<int>(rng() % 40);
    const int samples = subjects + static_cast<int>(rng() % 400);
    // every subject appears at least once, the rest are assigned at random
    std::vector<int> subject_of(static_cast<std::size_t>(samples));
    for (int i = 0; i < samples; ++i)
      subject_of[static_cast<std::size_t>(i)] = i < subjects ? i : static_cast<int>(rng() % static_cast<std::uint64_t>(subjects));
    std::shuffle(subject_of.begin(), subject_of.end(), rng);
    const auto folds = split_folds(subject_of, 3, rng());
    bool good = folds.size() == 3;
    std::vector<int> seen(static_cast<std::size_t>(samples), 0);
    std::vector<std::set<int>> fold_subjects(3);
    for (std::size_t f = 0; f < folds.size() && good; ++f)
      for (int i : folds[f]) {
        ++seen[static_cast<std::size_t>(i)];
        fold_subjects[f].insert(subject_of[static_cast<std::size_t>(i)]);
      }
    for (int s : seen) good = good && s == 1;
    for (int a = 0; a < 3 && good; ++a)
      for (int b = a + 1; b < 3; ++b)
        for (int s : fold_subjects[static_cast<std::size_t>(a)]) good = good && !fold_subjects[static_cast<std::size_t>(b)].count(s);
    ok += good;
  }
  return {ok == 100, fmt("%.0f/100 configurations subject-exclusive, covering and disjoint", ok)};
}

// ---------------------------------------------------------------------------
// Training-based criteria share the default dataset.

struct FoldRun {
  double f1 = 0, top5_local = 0, top5_global = 0, seconds = 0;
};

FoldRun run_fold(const Dataset& ds, int fold, std::uint64_t seed, bool full) {
  const auto t0 = Clock::now();
  TrainConfig tc;
  tc.seed = seed;
  tc.validate = false;
  if (!full) tc.toggles = {false, false, false};
  const TrainResult r = train(model_config_for(ds, ModelConfig{}), tc, ds, fold);
  const EvalReport e = evaluate(r.model, ds, r.split.held_out, fold, tc.crop_size);
  return {e.f1_avg, e.top5_local, e.top5_global, std::chrono::duration<double>(Clock::now() - t0).count()};
}

std::vector<std::vector<FoldRun>> g_full(3), g_fau(3);  // [fold][seed]

Outcome end_to_end(const Dataset& ds) {
  bool pass = true;
  std::string detail;
  for (int fold = 0; fold < 3; ++fold) {
    const FoldRun r = run_fold(ds, fold, 0, true);
    g_full[static_cast<std::size_t>(fold)].push_back(r);
    const bool ok = r.f1 >= 0.85 && r.top5_local >= 0.90 && r.seconds <= 1800;
    pass = pass && ok;
    detail += fmt("fold %.0f F1 %.4f top5-local %.4f (%.0f s)", fold, r.f1, r.top5_local, r.seconds) +
              (fold < 2 ? "; " : "");
  }
  return {pass, detail};
}

Outcome ablation(const Dataset& ds) {
  int wins = 0;
  std::string detail;
  for (int fold = 0; fold < 3; ++fold) {
    auto& full = g_full[static_cast<std::size_t>(fold)];
    auto& fau = g_fau[static_cast<std::size_t>(fold)];
    for (std::uint64_t seed = full.size(); seed < 3; ++seed) full.push_back(run_fold(ds, fold, seed, true));
    for (std::uint64_t seed = 0; seed < 3; ++seed) fau.push_back(run_fold(ds, fold, seed, false));
    auto mean = [](const std::vector<FoldRun>& v) {
      double s = 0;
      for (const auto& r : v) s += r.f1;
      return s / static_cast<double>(v.size());
    };
    const double a = mean(full), b = mean(fau);
    wins += a >= b;
    detail += fmt("fold %.0f full %.4f vs L_Fau-only %.4f", fold, a, b) + (fold < 2 ? "; " : "");
  }
  return {wins >= 2, fmt("full >= L_Fau-only on %.0f/3 folds: ", wins) + detail};
}

Outcome reproducibility(const std::string& root) {
  SynthConfig s;
  s.subjects = 6;
  s.samples_per_subject = 20;
  s.image_size = 32;
  generate_dataset(s, 7, root);
  const Dataset ds = load_dataset(root);
  ModelConfig mc;
  mc.hidden = 16;
  mc.embed = 8;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  tc.cutout_size = 8;
  tc.seed = 3;
  tc.workers = 1;
  const auto a = train(model_config_for(ds, mc), tc, ds, 0);
  const auto b = train(model_config_for(ds, mc), tc, ds, 0);
  const bool csv_same = metrics_csv(a.history) == metrics_csv(b.history);

  const std::string ck = root + "/checkpoint";
  save_checkpoint(ck, a.model, ds.vocab, {tc, tc.epochs, 0, a.rng_state});
  const Checkpoint c = load_checkpoint(ck);
  int identical = 0;
  for (int i : a.split.held_out) {
    const auto& img = ds.samples[static_cast<std::size_t>(i)].image;
    const auto x = forward(a.model, img), y = forward(c.model, img);
    bool same = x.probs == y.probs && x.v == y.v;
    for (std::size_t k = 0; k < x.pooled.size(); ++k) same = same && x.pooled[k] == y.pooled[k];
    identical += same;
  }
  const int n = static_cast<int>(a.split.held_out.size());
  return {csv_same && identical == n,
          std::string("metrics CSV ") + (csv_same ? "identical" : "DIFFERENT") +
              fmt(", forward bit-identical after reload on %.0f/%.0f held-out images", identical, n)};
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / ("vlfau_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(scratch);

  report(1, "class-weight formula", 1, class_weights);
  report(2, "closed-form losses", 1, closed_form_losses);
  report(3, "attention normalisation", 5, attention_normalisation);
  report(4, "gradient oracle", 300, gradient_oracle);
  report(5, "beam-search oracle", 60, beam_oracle);
  report(6, "fold protocol", 5, fold_protocol);

  generate_dataset(SynthConfig{}, 0, (scratch / "default").string());
  const Dataset ds = load_dataset((scratch / "default").string());
  report(7, "end-to-end synthetic training", 3 * 1800, [&] { return end_to_end(ds); });
  report(8, "ablation direction", 1e9, [&] { return ablation(ds); });
  report(9, "reproducibility", 600, [&] { return reproducibility((scratch / "repro").string()); });

  fs::remove_all(scratch);
  std::printf("%s\n", g_all_pass ? "ALL CRITERIA PASS" : "SOME CRITERIA FAIL");
  return g_all_pass ? 0 : 1;
}
