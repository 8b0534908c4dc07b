// vlfau: synthesise data, train, evaluate, describe faces and export embeddings.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "vlfau/config.hpp"
#include "vlfau/eval.hpp"
#include "vlfau/parallel.hpp"
#include "vlfau/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vlfau;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  int workers = 1;
  bool json_out = false;
  bool print_config = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file ({synth, model, train} sections)");
  app->add_option("--set", c.sets, "Override a config key, e.g. --set train.lr=0.002");
  app->add_option("--seed", c.seed, "Random seed")->each([&c](const std::string&) { c.seed_given = true; });
  app->add_option("--out", c.out, "Output path");
  app->add_option("--workers", c.workers, "Worker threads (results are reproducible only with 1)")
      ->check(CLI::PositiveNumber);
  app->add_flag("--json", c.json_out, "Machine-readable output");
  app->add_flag("--print-config", c.print_config, "Print the effective configuration and exit");
}

int capped_workers(int requested) {
  if (const char* env = std::getenv("AU_DESCRIBE_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1) throw UsageError("AU_DESCRIBE_THREADS must be a positive integer");
    return std::min<int>(requested, static_cast<int>(cap));
  }
  return requested;
}

RunConfig resolve(const Common& c, std::vector<std::string> extra) {
  std::vector<std::string> sets = c.sets;
  sets.insert(sets.end(), extra.begin(), extra.end());
  return resolve_config(c.config, sets);
}

bool maybe_print_config(const Common& c, const RunConfig& rc) {
  if (c.print_config) std::cout << to_json(rc).dump(2) << "\n";
  return c.print_config;
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int au_count = 0, subjects = 0, samples_per_subject = 0, image_size = 0;
};

int cmd_synth(const Common& c, const SynthArgs& a) {
  std::vector<std::string> extra;
  if (a.au_count) extra.push_back("synth.au_count=" + std::to_string(a.au_count));
  if (a.subjects) extra.push_back("synth.subjects=" + std::to_string(a.subjects));
  if (a.samples_per_subject) extra.push_back("synth.samples_per_subject=" + std::to_string(a.samples_per_subject));
  if (a.image_size) extra.push_back("synth.image_size=" + std::to_string(a.image_size));
  const RunConfig rc = resolve(c, extra);
  if (maybe_print_config(c, rc)) return kOk;
  if (c.out.empty()) throw UsageError("synth needs --out");
  const DatasetManifest m = generate_dataset(rc.synth, c.seed, c.out);
  if (c.json_out) {
    std::cout << m.to_json();
  } else {
    std::cout << "wrote " << m.sample_count << " samples, " << m.au_count << " AUs, " << m.subjects.size()
              << " subjects, " << m.height << "x" << m.width << " images to " << c.out << "\n";
  }
  return kOk;
}

struct TrainArgs {
  std::string data;
  int fold = -2;  // -2: every fold
  int epochs = 0;
  std::string ablate;
};

std::vector<std::string> ablation_overrides(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  for (std::string term; std::getline(ss, term, ',');) {
    if (term.empty()) continue;
    if (term != "lgen" && term != "ggen" && term != "gau") {
      throw UsageError("--ablate accepts lgen, ggen and gau, got '" + term + "'");
    }
    out.push_back("train." + term + "=false");
  }
  return out;
}

int cmd_train(const Common& c, const TrainArgs& a) {
  std::vector<std::string> extra = ablation_overrides(a.ablate);
  if (a.epochs) extra.push_back("train.epochs=" + std::to_string(a.epochs));
  if (c.seed_given) extra.push_back("train.seed=" + std::to_string(c.seed));
  extra.push_back("train.workers=" + std::to_string(c.workers));
  const RunConfig rc = resolve(c, extra);
  if (maybe_print_config(c, rc)) return kOk;
  if (a.data.empty()) throw UsageError("train needs --data");
  if (c.out.empty()) throw UsageError("train needs --out");
  rc.train.validate_config();
  const Dataset ds = load_dataset(a.data);
  const ModelConfig mc = model_config_for(ds, rc.model);

  std::vector<int> folds;
  if (a.fold == -2) {
    for (int k = 0; k < rc.train.folds; ++k) folds.push_back(k);
  } else {
    folds.push_back(a.fold);
  }
  json summary = json::array();
  for (int fold : folds) {
    const fs::path dir = fs::path(c.out) / (fold < 0 ? std::string("all") : "fold" + std::to_string(fold));
    const TrainResult r = train(mc, rc.train, ds, fold, [&](const EpochMetrics& e) {
      if (!c.json_out) {
        std::cerr << "fold " << fold << " epoch " << e.epoch << " total " << e.loss.total << " val_f1 "
                  << e.val_f1_avg << "\n";
      }
    });
    fs::create_directories(dir);
    write_metrics_csv((dir / "metrics.csv").string(), r.history);
    save_checkpoint((dir / "checkpoint").string(), r.model, ds.vocab,
                    {rc.train, rc.train.epochs, fold, r.rng_state});
    json entry = {{"fold", fold}, {"checkpoint", (dir / "checkpoint").string()}};
    if (!r.split.held_out.empty()) {
      const EvalReport rep = evaluate(r.model, ds, r.split.held_out, fold, rc.train.crop_size, c.workers);
      write_file(dir / "report.json", rep.to_json());
      write_file(dir / "report.csv", rep.to_csv());
      entry["f1_avg"] = rep.f1_avg;
      entry["top5_local"] = rep.top5_local;
    }
    summary.push_back(entry);
  }
  if (c.json_out) std::cout << summary.dump(2) << "\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data;
  int fold = -2;  // -2: the checkpoint's held-out fold
  bool allow_train_eval = false;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  if (a.checkpoint.empty() || a.data.empty()) throw UsageError("eval needs --checkpoint and --data");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset(a.data);
  if (!(ck.vocab == ds.vocab)) {
    throw UsageError("checkpoint vocabulary (" + std::to_string(ck.vocab.size()) +
                     " tokens) does not match the dataset vocabulary (" + std::to_string(ds.vocab.size()) + ")");
  }
  if (ck.model.cfg.au_count != ds.manifest.au_count) throw UsageError("checkpoint and dataset disagree on AU count");
  const int fold = a.fold == -2 ? ck.meta.fold : a.fold;
  std::vector<int> indices;
  if (fold == -1) {
    indices = make_split(ds, ck.meta.train.folds, -1, ck.meta.train.split_seed).train;
  } else {
    indices = make_split(ds, ck.meta.train.folds, fold, ck.meta.train.split_seed).held_out;
  }
  if ((ck.meta.fold == -1 || fold != ck.meta.fold) && !a.allow_train_eval) {
    throw UsageError("fold " + std::to_string(fold) + " was part of this checkpoint's training data; pass " +
                     "--allow-train-eval to evaluate it anyway");
  }
  const EvalReport rep = evaluate(ck.model, ds, indices, fold, ck.meta.train.crop_size, c.workers);
  if (!c.out.empty()) {
    write_file(c.out + ".json", rep.to_json());
    write_file(c.out + ".csv", rep.to_csv());
  }
  if (c.json_out) {
    std::cout << rep.to_json();
  } else {
    std::cout << rep.to_csv();
    std::cout << "top5_local " << rep.top5_local << "\ntop5_global " << rep.top5_global << "\n";
  }
  return kOk;
}

struct DescribeArgs {
  std::string checkpoint, image, data;
  int sample = -1;
  int beam = 3;
  int max_len = 0;
};

int cmd_describe(const Common& c, const DescribeArgs& a) {
  if (a.checkpoint.empty()) throw UsageError("describe needs --checkpoint");
  if (a.image.empty() == (a.sample < 0)) throw UsageError("describe needs exactly one of --image or --sample");
  if (a.beam < 1) throw UsageError("--beam must be at least 1");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  Tensor<float> image;
  if (!a.image.empty()) {
    image = read_ten1(a.image);
  } else {
    if (a.data.empty()) throw UsageError("--sample needs --data");
    const Dataset ds = load_dataset(a.data, false);
    if (a.sample >= static_cast<int>(ds.samples.size())) throw UsageError("sample id out of range");
    char name[32];
    std::snprintf(name, sizeof name, "%06d.ten", a.sample);
    image = read_ten1((fs::path(a.data) / "images" / name).string());
  }
  const Model<float>& m = ck.model;
  const Forward<float> f = forward(m, center_crop(image, ck.meta.train.crop_size));
  const auto aus = au_set(m.cfg.au_count);
  const int max_len = a.max_len > 0 ? a.max_len : m.cfg.max_caption_len;
  const int n = m.cfg.au_count;
  std::vector<std::string> local(static_cast<std::size_t>(n));
  std::string global;
  parallel_for(static_cast<std::size_t>(n + 1), capped_workers(c.workers), [&](std::size_t i) {
    if (static_cast<int>(i) == n) {
      global = ck.vocab.decode(beam_decode(f.v, m.store, m.global_decoder, a.beam, max_len).tokens);
    } else {
      local[i] = ck.vocab.decode(beam_decode(f.refined[i], m.store, m.local_decoder, a.beam, max_len).tokens);
    }
  });
  const AULabels active = decisions(f.probs);
  if (c.json_out) {
    json entries = json::array();
    for (int i = 0; i < n; ++i) {
      entries.push_back({{"au", aus[static_cast<std::size_t>(i)].code},
                         {"probability", f.probs[static_cast<std::size_t>(i)]},
                         {"active", active[static_cast<std::size_t>(i)] != 0},
                         {"description", local[static_cast<std::size_t>(i)]}});
    }
    std::cout << json{{"local", entries}, {"global_description", global}}.dump(2) << "\n";
  } else {
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      char buf[96];
      std::snprintf(buf, sizeof buf, "AU%-3d %-22s p=%.3f %s", aus[k].code, aus[k].name.c_str(), f.probs[k],
                    active[k] ? "active  " : "inactive");
      std::cout << buf << "  " << local[k] << "\n";
    }
    std::cout << "global: " << global << "\n";
  }
  return kOk;
}

struct ExportArgs {
  std::string checkpoint, data;
  int subjects = 0;
};

int cmd_export(const Common& c, const ExportArgs& a) {
  if (a.checkpoint.empty() || a.data.empty()) throw UsageError("export-embeddings needs --checkpoint and --data");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset(a.data);
  if (ck.model.cfg.au_count != ds.manifest.au_count) throw UsageError("checkpoint and dataset disagree on AU count");
  std::vector<int> indices;
  if (a.subjects > 0) {
    indices = balanced_subject_subset(ds, a.subjects, c.seed);
  } else {
    for (const auto& s : ds.samples) indices.push_back(s.id);
  }
  const std::string csv = export_embeddings(ck.model, ds, indices, ck.meta.train.crop_size, c.workers);
  if (c.out.empty()) {
    std::cout << csv;
  } else {
    write_file(c.out, csv);
    std::cerr << "wrote " << indices.size() * static_cast<std::size_t>(ck.model.cfg.au_count) << " rows to "
              << c.out << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explainable facial action unit recognition with joint vision-language learning"};
  app.require_subcommand(1);

  Common common;
  SynthArgs synth_args;
  TrainArgs train_args;
  EvalArgs eval_args;
  DescribeArgs describe_args;
  ExportArgs export_args;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic AU dataset");
  add_common(synth, common);
  synth->add_option("--au-count", synth_args.au_count, "Number of AUs (8: DISFA set, 12: BP4D set)");
  synth->add_option("--subjects", synth_args.subjects, "Number of subjects");
  synth->add_option("--samples-per-subject", synth_args.samples_per_subject, "Images per subject");
  synth->add_option("--image-size", synth_args.image_size, "Image side length (multiple of 16)");

  auto* train_cmd = app.add_subcommand("train", "Train on the subject-exclusive folds");
  add_common(train_cmd, common);
  train_cmd->add_option("--data", train_args.data, "Dataset directory");
  train_cmd->add_option("--fold", train_args.fold, "Held-out fold (default: every fold; -1 trains on all data)");
  train_cmd->add_option("--epochs", train_args.epochs, "Epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--ablate", train_args.ablate, "Comma list of loss terms to disable: lgen,ggen,gau");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on its held-out fold");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint directory");
  eval_cmd->add_option("--data", eval_args.data, "Dataset directory");
  eval_cmd->add_option("--fold", eval_args.fold, "Fold to evaluate (default: the checkpoint's held-out fold)");
  eval_cmd->add_flag("--allow-train-eval", eval_args.allow_train_eval, "Permit evaluating training folds");

  auto* describe = app.add_subcommand("describe", "Predict AUs and generate local and global descriptions");
  add_common(describe, common);
  describe->add_option("--checkpoint", describe_args.checkpoint, "Checkpoint directory");
  describe->add_option("--image", describe_args.image, "TEN1 image file");
  describe->add_option("--data", describe_args.data, "Dataset directory (with --sample)");
  describe->add_option("--sample", describe_args.sample, "Dataset sample id");
  describe->add_option("--beam", describe_args.beam, "Beam width (1 is greedy decoding)");
  describe->add_option("--max-len", describe_args.max_len, "Maximum description length");

  auto* export_cmd = app.add_subcommand("export-embeddings", "Write pooled per-branch features as CSV");
  add_common(export_cmd, common);
  export_cmd->add_option("--checkpoint", export_args.checkpoint, "Checkpoint directory");
  export_cmd->add_option("--data", export_args.data, "Dataset directory");
  export_cmd->add_option("--subjects", export_args.subjects, "Restrict to K gender-balanced subjects");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(common, synth_args);
    if (*train_cmd) return cmd_train(common, train_args);
    if (*eval_cmd) return cmd_eval(common, eval_args);
    if (*describe) return cmd_describe(common, describe_args);
    if (*export_cmd) return cmd_export(common, export_args);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
