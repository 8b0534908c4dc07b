#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vlfau/config.hpp"
#include "vlfau/eval.hpp"
#include "vlfau/trainer.hpp"

namespace py = pybind11;
using namespace vlfau;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  FloatArray out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

py::dict history_row(const EpochMetrics& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["l_fau"] = e.loss.fau;
  d["l_lgen"] = e.loss.lgen;
  d["l_ggen"] = e.loss.ggen;
  d["l_gau"] = e.loss.gau;
  d["total"] = e.loss.total;
  d["val_f1_avg"] = e.val_f1_avg;
  d["val_top5_local"] = e.val_top5_local;
  return d;
}

// Thin handle over a loaded checkpoint.
struct Recognizer {
  Checkpoint ck;

  std::vector<double> probabilities(const FloatArray& image) const {
    return forward(ck.model, center_crop(to_tensor(image), ck.meta.train.crop_size)).probs;
  }

  py::dict describe(const FloatArray& image, int beam, int max_len) const {
    if (beam < 1) throw std::invalid_argument("beam width must be at least 1");
    const Model<float>& m = ck.model;
    const Forward<float> f = forward(m, center_crop(to_tensor(image), ck.meta.train.crop_size));
    if (max_len <= 0) max_len = m.cfg.max_caption_len;
    const auto aus = au_set(m.cfg.au_count);
    const AULabels active = decisions(f.probs);
    py::list local;
    for (std::size_t i = 0; i < f.refined.size(); ++i) {
      py::dict e;
      e["au"] = aus[i].code;
      e["probability"] = f.probs[i];
      e["active"] = active[i] != 0;
      e["description"] = ck.vocab.decode(beam_decode(f.refined[i], m.store, m.local_decoder, beam, max_len).tokens);
      local.append(e);
    }
    py::dict out;
    out["local"] = local;
    out["global_description"] = ck.vocab.decode(beam_decode(f.v, m.store, m.global_decoder, beam, max_len).tokens);
    return out;
  }
};

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "Facial action unit recognition with joint caption generation";

  py::register_exception<ConfigError>(mod, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(mod, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(mod, "NumericError", PyExc_ArithmeticError);

  mod.def("compute_class_weights",
          [](const std::vector<double>& eps) { return compute_class_weights(eps).gamma; }, py::arg("rates"));

  mod.def(
      "fau_loss",
      [](const std::vector<double>& probs, const std::vector<int>& labels, const std::vector<double>& gamma) {
        return fau_loss(probs, labels, ClassWeights{{}, gamma});
      },
      py::arg("probs"), py::arg("labels"), py::arg("gamma"));

  mod.def(
      "f1_frame",
      [](const std::vector<AULabels>& preds, const std::vector<AULabels>& labels) {
        const F1Result r = f1_frame(preds, labels);
        py::dict d;
        d["precision"] = r.precision;
        d["recall"] = r.recall;
        d["f1"] = r.f1;
        d["average"] = r.average;
        return d;
      },
      py::arg("preds"), py::arg("labels"));

  mod.def(
      "in_top_k",
      [](const std::vector<float>& logits, int gold, int k) { return in_top_k(logits, gold, k); },
      py::arg("logits"), py::arg("gold"), py::arg("k") = 5);

  mod.def(
      "resolve_config",
      [](const std::string& file, const std::vector<std::string>& overrides) {
        return to_json(resolve_config(file, overrides)).dump();
      },
      py::arg("file") = "", py::arg("overrides") = std::vector<std::string>{},
      "Effective configuration as a JSON string.");

  mod.def(
      "synthesize",
      [](const std::string& out_dir, std::uint64_t seed, const std::vector<std::string>& overrides) {
        const RunConfig rc = resolve_config("", overrides);
        py::gil_scoped_release release;
        return generate_dataset(rc.synth, seed, out_dir).to_json();
      },
      py::arg("out_dir"), py::arg("seed") = 0, py::arg("overrides") = std::vector<std::string>{},
      "Writes a synthetic dataset and returns its manifest as a JSON string.");

  mod.def(
      "load_image",
      [](const std::string& path) { return to_array(read_ten1(path)); }, py::arg("path"));

  mod.def(
      "train",
      [](const std::string& data, int fold, const std::string& checkpoint_dir,
         const std::vector<std::string>& overrides) {
        const RunConfig rc = resolve_config("", overrides);
        std::vector<EpochMetrics> history;
        {
          py::gil_scoped_release release;
          const Dataset ds = load_dataset(data);
          TrainResult r = train(model_config_for(ds, rc.model), rc.train, ds, fold);
          if (!checkpoint_dir.empty()) {
            save_checkpoint(checkpoint_dir, r.model, ds.vocab, {rc.train, rc.train.epochs, fold, r.rng_state});
          }
          history = std::move(r.history);
        }
        py::list rows;
        for (const auto& e : history) rows.append(history_row(e));
        return rows;
      },
      py::arg("data"), py::arg("fold") = 0, py::arg("checkpoint_dir") = "",
      py::arg("overrides") = std::vector<std::string>{},
      "Trains on a dataset directory; returns per-epoch metrics and optionally saves a checkpoint.");

  py::class_<Recognizer>(mod, "Recognizer")
      .def(py::init([](const std::string& dir) { return Recognizer{load_checkpoint(dir)}; }), py::arg("checkpoint"))
      .def_property_readonly("au_codes",
                             [](const Recognizer& r) {
                               std::vector<int> codes;
                               for (const auto& a : au_set(r.ck.model.cfg.au_count)) codes.push_back(a.code);
                               return codes;
                             })
      .def("probabilities", &Recognizer::probabilities, py::arg("image"))
      .def("describe", &Recognizer::describe, py::arg("image"), py::arg("beam") = 3, py::arg("max_len") = 0);
}
