#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sleepguard/attacks.hpp"
#include "sleepguard/augment.hpp"
#include "sleepguard/dataset.hpp"
#include "sleepguard/harness.hpp"
#include "sleepguard/model_io.hpp"
#include "sleepguard/nn.hpp"

namespace py = pybind11;
using namespace sleepguard;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  d["f1"] = m.f1;
  d["tp"] = m.tp;
  d["fp"] = m.fp;
  d["tn"] = m.tn;
  d["fn"] = m.fn;
  return d;
}

py::dict result_dict(const AttackResult& r) {
  py::dict d;
  d["adversarial"] = to_array(r.adversarial);
  d["perturbation_norm"] = r.perturbation_norm;
  d["iterations"] = r.iterations;
  d["label_flipped"] = r.label_flipped;
  d["original_prediction"] = r.original_prediction;
  d["adversarial_prediction"] = r.adversarial_prediction;
  d["adversarial_loss"] = r.adversarial_loss;
  return d;
}

AttackConfig attack_config(const std::string& family, double epsilon, std::optional<double> alpha,
                           std::optional<int> steps, std::optional<std::string> norm, bool random_start,
                           double overshoot, bool clip) {
  AttackConfig c = AttackConfig::defaults(parse_attack_family(family), epsilon);
  if (alpha) c.alpha = *alpha;
  if (steps) c.steps = *steps;
  if (norm) c.norm = parse_norm(*norm);
  c.random_start = random_start;
  c.overshoot = overshoot;
  c.clip = clip;
  c.validate();
  return c;
}

Dataset make_dataset(const std::vector<Array>& images, const std::vector<int>& labels,
                     std::optional<std::vector<std::string>> ids) {
  if (images.size() != labels.size()) throw std::invalid_argument("images and labels differ in length");
  if (ids && ids->size() != images.size()) throw std::invalid_argument("ids and images differ in length");
  Dataset d;
  for (std::size_t i = 0; i < images.size(); ++i) {
    d.records.push_back({ids ? (*ids)[i] : label_name(labels[i]) + "/" + std::to_string(i),
                         to_tensor(images[i]), labels[i]});
  }
  d.validate();
  return d;
}

std::vector<py::dict> history_list(const std::vector<EpochStats>& h) {
  std::vector<py::dict> out;
  for (const auto& s : h) {
    py::dict d;
    d["epoch"] = s.epoch;
    d["train_loss"] = s.train_loss;
    d["train_accuracy"] = s.train_accuracy;
    d["val_loss"] = s.val_loss;
    d["val_accuracy"] = s.val_accuracy;
    out.push_back(d);
  }
  return out;
}

py::dict row_dict(const ReportRow& r) {
  py::dict d;
  d["config_hash"] = r.config_hash;
  d["name"] = r.name;
  d["model"] = r.model_tag;
  d["augmented"] = r.augmented;
  d["attack"] = r.attack;
  d["status"] = r.status;
  d["error"] = r.error;
  d["clean"] = r.status == "ok" ? py::object(metrics_dict(r.clean)) : py::none();
  d["before"] = r.before ? py::object(metrics_dict(*r.before)) : py::none();
  d["after"] = r.after ? py::object(metrics_dict(*r.after)) : py::none();
  d["defended_clean"] = r.defended_clean ? py::object(metrics_dict(*r.defended_clean)) : py::none();
  d["success_rate_before"] = r.success_before;
  d["success_rate_after"] = r.success_after;
  return d;
}

ExperimentConfig config_from(const py::dict& d) {
  const auto json_mod = py::module_::import("json");
  return ExperimentConfig::from_json(nlohmann::json::parse(py::str(json_mod.attr("dumps")(d)).cast<std::string>()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Eye-closedness CNN training, adversarial attacks and robustness experiments";

  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ModelFormatError>(m, "ModelFormatError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<Model>(m, "Model")
      .def_property_readonly("input_shape", &Model::input_shape)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def("output_shapes", &Model::output_shapes)
      .def("predict", [](const Model& model, const Array& x) { return predict(model, to_tensor(x)); },
           py::arg("image"))
      .def("logit", [](const Model& model, const Array& x) { return forward(model, to_tensor(x)).logit; },
           py::arg("image"))
      .def("input_gradient",
           [](const Model& model, const Array& x, int label) {
             const auto g = input_gradient(model, to_tensor(x), label);
             return py::make_tuple(to_array(g.gradient), g.loss);
           },
           py::arg("image"), py::arg("label"), "Gradient of the BCE loss with respect to the image, and the loss")
      .def("save", [](const Model& model, const std::filesystem::path& p) { save_model(model, p); })
      .def("to_bytes", [](const Model& model) { return py::bytes(serialize_model(model)); })
      .def_static("from_bytes", [](const py::bytes& b) { return deserialize_model(std::string(b)); })
      .def("copy", [](const Model& model) { return Model(model); });

  m.def("build_paper_model",
        [](std::size_t h, std::size_t w, std::uint64_t seed, const std::string& hidden) {
          return build_paper_model(h, w, seed, parse_activation(hidden));
        },
        py::arg("height") = 100, py::arg("width") = 100, py::arg("seed") = 0, py::arg("hidden") = "relu");
  m.def("load_model", [](const std::filesystem::path& p) { return load_model(p); }, py::arg("path"));

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("images"), py::arg("labels"), py::arg("ids") = py::none())
      .def("__len__", &Dataset::size)
      .def_property_readonly("labels", &Dataset::labels)
      .def_property_readonly("ids",
                             [](const Dataset& d) {
                               std::vector<std::string> ids;
                               for (const auto& r : d.records) ids.push_back(r.id);
                               return ids;
                             })
      .def("image", [](const Dataset& d, std::size_t i) { return to_array(d.records.at(i).pixels); })
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { write_directory(d, p); });

  m.def("load_directory",
        [](const std::filesystem::path& p, std::size_t h, std::size_t w, int threads) {
          LoadOptions o;
          o.height = h;
          o.width = w;
          o.threads = threads;
          return load_directory(p, o);
        },
        py::arg("path"), py::arg("height") = 100, py::arg("width") = 100, py::arg("threads") = 1);
  m.def("generate_synthetic",
        [](std::size_t n_per_class, const std::string& style, std::uint64_t seed, double noise) {
          SyntheticConfig c;
          c.style = parse_synthetic_style(style);
          c.seed = seed;
          c.noise = noise;
          return generate_synthetic(c, n_per_class);
        },
        py::arg("n_per_class"), py::arg("style") = "eye", py::arg("seed") = 0, py::arg("noise") = 0.06);
  m.def("split_dataset",
        [](const Dataset& d, double train, double val, double test, std::uint64_t seed) {
          auto s = split_dataset(d, {train, val, test}, seed);
          return py::make_tuple(s.train, s.val, s.test);
        },
        py::arg("data"), py::arg("train") = 3108.0 / 4846.0, py::arg("val") = 776.0 / 4846.0,
        py::arg("test") = 962.0 / 4846.0, py::arg("seed") = 0);

  m.def("compute_metrics",
        [](const std::vector<double>& p, const std::vector<int>& y) { return metrics_dict(compute_metrics(p, y)); },
        py::arg("predictions"), py::arg("labels"), "Closed (1) is the positive class; 0.5 counts as closed");
  m.def("evaluate", [](const Model& model, const Dataset& d, int threads) { return metrics_dict(evaluate(model, d, threads)); },
        py::arg("model"), py::arg("data"), py::arg("threads") = 1);

  m.def("train",
        [](Model& model, const Dataset& tr, const Dataset& va, std::size_t epochs, std::size_t batch_size, double lr,
           bool augment, std::uint64_t seed, int threads) {
          TrainConfig c;
          c.epochs = epochs;
          c.batch_size = batch_size;
          c.adam.lr = lr;
          c.augment = augment;
          c.augment_config.seed = seed;
          c.seed = seed;
          c.threads = threads;
          return history_list(train(model, tr, va, c));
        },
        py::arg("model"), py::arg("train"), py::arg("val"), py::arg("epochs") = 30, py::arg("batch_size") = 32,
        py::arg("lr") = 1e-3, py::arg("augment") = false, py::arg("seed") = 0, py::arg("threads") = 1,
        "Trains in place and returns the per-epoch history");

  m.def("attack",
        [](const Model& model, const Array& x, int label, const std::string& family, double epsilon,
           std::optional<double> alpha, std::optional<int> steps, std::optional<std::string> norm, bool random_start,
           double overshoot, bool clip, std::uint64_t seed) {
          const auto c = attack_config(family, epsilon, alpha, steps, norm, random_start, overshoot, clip);
          return result_dict(run_attack(model, to_tensor(x), label, c, seed, 0));
        },
        py::arg("model"), py::arg("image"), py::arg("label"), py::arg("family") = "fgsm", py::arg("epsilon") = 0.1,
        py::arg("alpha") = py::none(), py::arg("steps") = py::none(), py::arg("norm") = py::none(),
        py::arg("random_start") = true, py::arg("overshoot") = 0.02, py::arg("clip") = true, py::arg("seed") = 0,
        "Epsilon and alpha are in normalized pixel units (images on [0,1])");
  m.def("attack_dataset",
        [](const Model& model, const Dataset& d, const std::string& family, double epsilon, std::uint64_t seed,
           int threads) {
          const auto c = AttackConfig::defaults(parse_attack_family(family), epsilon);
          auto a = attack_dataset(model, d, c, seed, threads);
          py::dict out;
          out["success_rate"] = a.success_rate;
          out["mean_adversarial_loss"] = a.mean_adversarial_loss;
          out["adversarial"] = std::move(a.adversarial);
          return out;
        },
        py::arg("model"), py::arg("data"), py::arg("family") = "fgsm", py::arg("epsilon") = 0.1, py::arg("seed") = 0,
        py::arg("threads") = 1);

  m.def("augment",
        [](const Array& x, double rotation, double shift_x, double shift_y, double shear, double zoom, bool flip) {
          AugmentParams p{rotation, shift_x, shift_y, shear, zoom, flip};
          return to_array(apply_augment(to_tensor(x), p));
        },
        py::arg("image"), py::arg("rotation") = 0.0, py::arg("shift_x") = 0.0, py::arg("shift_y") = 0.0,
        py::arg("shear") = 0.0, py::arg("zoom") = 1.0, py::arg("flip") = false,
        "Rotation in degrees, shifts in pixels, shear as a factor, zoom as a scale");
  m.def("random_augment",
        [](const Array& x, std::uint64_t seed) {
          AugmentConfig c;
          Rng rng(seed);
          return to_array(random_augment(to_tensor(x), c, rng));
        },
        py::arg("image"), py::arg("seed") = 0, "One draw from the default augmentation ranges");

  m.def("config_hash", [](const py::dict& d) { return config_from(d).hash(); }, py::arg("config"));
  m.def("run_experiment",
        [](const py::dict& d, const std::filesystem::path& out) { return row_dict(run_experiment(config_from(d), out).row); },
        py::arg("config"), py::arg("out_dir") = std::filesystem::path(),
        "Runs one flat config (same keys as the command line config files)");
  m.def("run_grid",
        [](const std::vector<py::dict>& configs, const std::filesystem::path& out, int row_threads) {
          std::vector<ExperimentConfig> cs;
          for (const auto& d : configs) cs.push_back(config_from(d));
          GridOptions o;
          o.row_threads = row_threads;
          const auto rep = run_grid(cs, out, o);
          py::list rows;
          for (const auto& r : rep.rows) rows.append(row_dict(r));
          return py::make_tuple(rows, report_markdown(rep));
        },
        py::arg("configs"), py::arg("out_dir") = std::filesystem::path(), py::arg("row_threads") = 1);
}
