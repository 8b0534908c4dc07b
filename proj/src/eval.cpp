#include "vlfau/eval.hpp"

#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "vlfau/parallel.hpp"
#include "vlfau/trainer.hpp"

namespace vlfau {

AULabels decisions(const std::vector<double>& probs, double threshold) {
  AULabels y;
  y.reserve(probs.size());
  for (double p : probs) y.push_back(p > threshold ? 1 : 0);
  return y;
}

namespace {

void check_label_shapes(const std::vector<AULabels>& preds, const std::vector<AULabels>& labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw ShapeError("metrics need equal, non-zero frame counts; got " + std::to_string(preds.size()) + " and " +
                     std::to_string(labels.size()));
  }
  for (std::size_t f = 0; f < preds.size(); ++f) {
    if (preds[f].size() != labels[0].size() || labels[f].size() != labels[0].size()) {
      throw ShapeError("frame " + std::to_string(f) + " has a different AU count");
    }
  }
}

std::vector<Confusion> confusions(const std::vector<AULabels>& preds, const std::vector<AULabels>& labels) {
  check_label_shapes(preds, labels);
  std::vector<Confusion> c(labels[0].size());
  for (std::size_t f = 0; f < preds.size(); ++f)
    for (std::size_t i = 0; i < c.size(); ++i) {
      const bool p = preds[f][i] != 0, y = labels[f][i] != 0;
      if (p && y) ++c[i].tp;
      else if (p) ++c[i].fp;
      else if (y) ++c[i].fn;
      else ++c[i].tn;
    }
  return c;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

F1Result f1_frame(const std::vector<AULabels>& preds, const std::vector<AULabels>& labels) {
  F1Result r;
  r.counts = confusions(preds, labels);
  for (const Confusion& c : r.counts) {
    const double p = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    const double q = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    r.precision.push_back(p);
    r.recall.push_back(q);
    r.f1.push_back(p + q > 0 ? 2 * p * q / (p + q) : 0.0);
  }
  r.average = mean(r.f1);
  return r;
}

AccuracyResult accuracy(const std::vector<AULabels>& preds, const std::vector<AULabels>& labels) {
  AccuracyResult r;
  for (const Confusion& c : confusions(preds, labels)) {
    r.per_au.push_back(static_cast<double>(c.tp + c.tn) / static_cast<double>(preds.size()));
  }
  r.average = mean(r.per_au);
  return r;
}

bool in_top_k(std::span<const float> logits, int gold, int k) {
  const int voc = static_cast<int>(logits.size());
  if (k < 1 || k > voc) {
    throw std::invalid_argument("top-k needs 1 <= k <= vocabulary size (" + std::to_string(voc) + "), got " +
                                std::to_string(k));
  }
  if (gold < 0 || gold >= voc) throw VocabularyError("gold token outside vocabulary");
  const float g = logits[static_cast<std::size_t>(gold)];
  int ahead = 0;
  for (int j = 0; j < voc; ++j) {
    const float v = logits[static_cast<std::size_t>(j)];
    if (v > g || (v == g && j < gold)) ++ahead;
  }
  return ahead < k;
}

double topk_word_accuracy(const std::vector<Tensor<float>>& step_logits, const TokenSequence& gold, int k) {
  if (step_logits.size() != gold.size() || gold.empty()) {
    throw ShapeError("top-k accuracy needs one logit vector per gold step");
  }
  long hits = 0;
  for (std::size_t t = 0; t < gold.size(); ++t) hits += in_top_k(step_logits[t].data, gold[t], k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

std::string EvalReport::to_json() const {
  nlohmann::json per_au = nlohmann::json::array();
  for (std::size_t i = 0; i < f1.size(); ++i) {
    per_au.push_back({{"au", au_codes.empty() ? static_cast<int>(i) : au_codes[i]},
                      {"f1", f1[i]},
                      {"accuracy", accuracy[i]},
                      {"tp", counts[i].tp},
                      {"fp", counts[i].fp},
                      {"fn", counts[i].fn},
                      {"tn", counts[i].tn}});
  }
  const nlohmann::json j = {{"fold", fold},
                            {"samples", samples},
                            {"per_au", per_au},
                            {"f1_avg", f1_avg},
                            {"accuracy_avg", acc_avg},
                            {"top5_local", top5_local},
                            {"top5_global", top5_global}};
  return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream s;
  char buf[64];
  s << "au,f1,accuracy,tp,fp,fn,tn\n";
  for (std::size_t i = 0; i < f1.size(); ++i) {
    s << (au_codes.empty() ? static_cast<int>(i) : au_codes[i]);
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f", f1[i], accuracy[i]);
    s << buf << "," << counts[i].tp << "," << counts[i].fp << "," << counts[i].fn << "," << counts[i].tn << "\n";
  }
  std::snprintf(buf, sizeof buf, "average,%.6f,%.6f,,,,\n", f1_avg, acc_avg);
  s << buf;
  return s.str();
}

EvalReport evaluate(const Model<float>& m, const Dataset& ds, const std::vector<int>& indices, int fold, int crop,
                    int workers) {
  if (indices.empty()) throw std::invalid_argument("evaluation over an empty sample set");
  const std::size_t n = indices.size();
  std::vector<AULabels> preds(n), labels(n);
  std::vector<double> local_hits(n), local_steps(n), global_hits(n), global_steps(n);
  parallel_for(n, workers, [&](std::size_t k) {
    const Sample& s = ds.samples.at(static_cast<std::size_t>(indices[k]));
    const Forward<float> f = forward(m, center_crop(s.image, crop));
    preds[k] = decisions(f.probs);
    labels[k] = s.labels;
    const CaptionTargets t = caption_targets(ds.vocab, s, m.cfg.max_caption_len);
    const TeacherForcedLogits<float> tf = teacher_forced_all(m, f, t);
    for (std::size_t i = 0; i < tf.local.size(); ++i) {
      local_hits[k] += topk_word_accuracy(tf.local[i], t.locals[i], 5) * static_cast<double>(t.locals[i].size());
      local_steps[k] += static_cast<double>(t.locals[i].size());
    }
    global_hits[k] = topk_word_accuracy(tf.global, t.global, 5) * static_cast<double>(t.global.size());
    global_steps[k] = static_cast<double>(t.global.size());
  });
  EvalReport r;
  r.fold = fold;
  r.samples = n;
  for (const auto& a : ds.aus) r.au_codes.push_back(a.code);
  const F1Result f1 = f1_frame(preds, labels);
  const AccuracyResult acc = accuracy(preds, labels);
  r.f1 = f1.f1;
  r.counts = f1.counts;
  r.f1_avg = f1.average;
  r.accuracy = acc.per_au;
  r.acc_avg = acc.average;
  auto sum = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };
  r.top5_local = sum(local_hits) / sum(local_steps);
  r.top5_global = sum(global_hits) / sum(global_steps);
  return r;
}

std::string export_embeddings(const Model<float>& m, const Dataset& ds, const std::vector<int>& indices, int crop,
                              int workers) {
  const std::size_t n = indices.size();
  std::vector<std::string> rows(n);
  parallel_for(n, workers, [&](std::size_t k) {
    const Sample& s = ds.samples.at(static_cast<std::size_t>(indices[k]));
    const Forward<float> f = forward(m, center_crop(s.image, crop));
    std::ostringstream o;
    char buf[32];
    for (std::size_t i = 0; i < f.pooled.size(); ++i) {
      o << s.id << "," << s.subject << "," << s.gender << "," << i << "," << s.labels[i];
      for (float v : f.pooled[i].data) {
        std::snprintf(buf, sizeof buf, ",%.8g", static_cast<double>(v));
        o << buf;
      }
      o << "\n";
    }
    rows[k] = o.str();
  });
  std::ostringstream out;
  out << "sample_id,subject_id,gender,au_index,au_label";
  for (int j = 0; j < m.cfg.stem.feature_dim; ++j) out << ",f" << j;
  out << "\n";
  for (const auto& r : rows) out << r;
  return out.str();
}

std::vector<int> balanced_subject_subset(const Dataset& ds, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("subject count must be positive");
  std::map<std::string, std::vector<int>> by_gender;
  for (std::size_t i = 0; i < ds.manifest.subjects.size(); ++i) {
    by_gender[ds.manifest.genders[i]].push_back(ds.manifest.subjects[i]);
  }
  Rng rng(seed);
  for (auto& [g, subjects] : by_gender) std::shuffle(subjects.begin(), subjects.end(), rng);
  std::vector<int> chosen;
  for (std::size_t round = 0; static_cast<int>(chosen.size()) < k; ++round) {
    bool any = false;
    for (auto& [g, subjects] : by_gender) {
      if (round < subjects.size() && static_cast<int>(chosen.size()) < k) {
        chosen.push_back(subjects[round]);
        any = true;
      }
    }
    if (!any) break;
  }
  if (static_cast<int>(chosen.size()) < k) {
    throw ConfigError("dataset has only " + std::to_string(chosen.size()) + " subjects");
  }
  std::vector<int> out;
  for (const auto& s : ds.samples)
    if (std::find(chosen.begin(), chosen.end(), s.subject) != chosen.end()) out.push_back(s.id);
  return out;
}

}  // namespace vlfau
