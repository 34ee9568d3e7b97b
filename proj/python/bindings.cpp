#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "voxcast/checkpoint.hpp"
#include "voxcast/eval.hpp"
#include "voxcast/gradcheck.hpp"
#include "voxcast/runtime.hpp"
#include "voxcast/train.hpp"

namespace py = pybind11;
using namespace voxcast;

namespace {

struct Windows {
  std::vector<WindowSample> samples;
};

std::vector<PlaceholderType> types_arg(const std::string& s) { return parse_types(s); }

py::array_t<bool> grid_array(const OccupancyGrid& g) {
  const auto& r = g.spec().resolution;
  py::array_t<bool> out({r[0], r[1], r[2]});
  auto v = out.mutable_unchecked<3>();
  for (std::size_t i = 0; i < r[0]; ++i)
    for (std::size_t j = 0; j < r[1]; ++j)
      for (std::size_t k = 0; k < r[2]; ++k) v(i, j, k) = g.get(i, j, k);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "voxcast core bindings";
  tune_allocator();

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::MissingFile || e.kind() == ErrorKind::MissingCheckpoint)
        PyErr_SetString(PyExc_FileNotFoundError, e.what());
      else
        PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("default_grid_spec_bounds", [](const std::string& type) {
    const auto s = default_grid_spec(parse_type(type));
    return py::make_tuple(s.bounds.min, s.bounds.max, s.resolution);
  });

  m.def(
      "voxelize",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> points, const std::string& type) {
        if (points.ndim() != 2 || points.shape(1) != 3) throw py::value_error("points must be an (n, 3) array");
        PointCloud cloud;
        auto p = points.unchecked<2>();
        for (py::ssize_t i = 0; i < p.shape(0); ++i) cloud.points.push_back({p(i, 0), p(i, 1), p(i, 2)});
        return grid_array(voxelize(cloud, default_grid_spec(parse_type(type))));
      },
      py::arg("points"), py::arg("type"), "Occupancy grid (32, 32, 64) of a point cloud in a type's scan box.");

  py::class_<GridStore>(m, "GridStore")
      .def("__len__", &GridStore::size)
      .def("types", [](const GridStore& s) {
        std::string out;
        for (auto t : s.types()) out += type_letter(t);
        return out;
      })
      .def("class_counts", [](const GridStore& s, const std::string& t) { return s.class_counts(parse_type(t)); })
      .def("grid", [](const GridStore& s, std::size_t i) { return grid_array(s.records.at(i).grid); })
      .def("label", [](const GridStore& s, std::size_t i) { return s.records.at(i).class_index(); })
      .def("row", [](const GridStore& s, std::size_t i) { return s.records.at(i).row; })
      .def("only", [](const GridStore& s, const std::string& t) { return s.only(parse_type(t)); })
      .def("save", [](const GridStore& s, const std::filesystem::path& dir) { save_store(dir, s); })
      .def_readonly("meta", &GridStore::meta);

  m.def(
      "gen_dataset",
      [](const std::string& types, std::size_t augment, std::uint64_t seed, double noise) {
        DatasetManifest man;
        man.types = types_arg(types);
        man.augment_count = augment;
        man.noise_amplitude = noise;
        man.validate();
        py::gil_scoped_release release;
        return gen_dataset(man, seed);
      },
      py::arg("types") = "all", py::arg("augment") = 100, py::arg("seed") = 0, py::arg("noise") = 0.05);
  m.def(
      "load_store",
      [](const std::filesystem::path& dir, const std::string& types) { return load_store(dir, types_arg(types)); },
      py::arg("dir"), py::arg("types") = "all");
  m.def("split_rows", &split_rows, py::arg("store"), py::arg("test_row") = 3);

  py::class_<Windows>(m, "Windows")
      .def("__len__", [](const Windows& w) { return w.samples.size(); })
      .def("sample", [](const Windows& w, std::size_t i) {
        const auto& s = w.samples.at(i);
        return py::dict(py::arg("inputs") = s.inputs, py::arg("target") = s.target, py::arg("window") = s.window,
                        py::arg("target_label") = s.target_label);
      });
  m.def(
      "make_windows",
      [](const GridStore& store, std::size_t per_window, std::uint64_t seed) {
        return Windows{make_windows(store, per_window, seed)};
      },
      py::arg("store"), py::arg("per_window"), py::arg("seed") = 0);

  py::class_<ClassifierConfig>(m, "ClassifierConfig")
      .def(py::init<>())
      .def_static("reduced", &ClassifierConfig::reduced)
      .def_readwrite("channels", &ClassifierConfig::channels)
      .def_readwrite("fc_hidden", &ClassifierConfig::fc_hidden)
      .def_readwrite("leaky_slope", &ClassifierConfig::leaky_slope);

  py::class_<SimulatorConfig>(m, "SimulatorConfig")
      .def(py::init<>())
      .def_static("reduced", &SimulatorConfig::reduced)
      .def_readwrite("encoder_channels", &SimulatorConfig::encoder_channels)
      .def_readwrite("decoder_channels", &SimulatorConfig::decoder_channels)
      .def_readwrite("tied_encoders", &SimulatorConfig::tied_encoders)
      .def_readwrite("output_shift", &SimulatorConfig::output_shift)
      .def("encoded_dims", &SimulatorConfig::encoded_dims)
      .def("output_dims", &SimulatorConfig::output_dims);

  py::class_<TrainPlan>(m, "TrainPlan")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainPlan::epochs)
      .def_readwrite("batch", &TrainPlan::batch)
      .def_readwrite("seed", &TrainPlan::seed)
      .def_readwrite("alpha", &TrainPlan::alpha)
      .def_readwrite("select_best", &TrainPlan::select_best)
      .def_readwrite("label", &TrainPlan::label)
      .def_readwrite("out_dir", &TrainPlan::out_dir)
      .def_property(
          "lr", [](const TrainPlan& p) { return p.adam.lr; }, [](TrainPlan& p, double v) { p.adam.lr = v; });

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("kind", [](const Checkpoint& c) { return to_string(c.kind); })
      .def_property_readonly("type", [](const Checkpoint& c) { return std::string(1, type_letter(c.type)); })
      .def_readonly("config", &Checkpoint::config)
      .def_readonly("meta", &Checkpoint::meta)
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_readonly("seed", &Checkpoint::seed)
      .def("to_bytes", [](const Checkpoint& c) {
        const auto b = checkpoint_bytes(c);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      })
      .def("__eq__", [](const Checkpoint& a, const Checkpoint& b) { return a == b; });
  m.def("load_checkpoint", &load_checkpoint);
  m.def("save_checkpoint", &save_checkpoint);

  m.def(
      "train_classifier",
      [](const GridStore& train, const GridStore& test, const std::string& type, const ClassifierConfig& cfg,
         const TrainPlan& plan) {
        py::gil_scoped_release release;
        return train_classifier<float>(train, test, parse_type(type), cfg, plan).checkpoint;
      },
      py::arg("train"), py::arg("test"), py::arg("type"), py::arg("config"), py::arg("plan"));
  m.def(
      "train_simulator",
      [](const GridStore& store, const Windows& w, const Checkpoint& clf, const SimulatorConfig& cfg,
         const TrainPlan& plan) {
        py::gil_scoped_release release;
        return train_simulator<float>(store, w.samples, clf, cfg, plan).checkpoint;
      },
      py::arg("store"), py::arg("windows"), py::arg("classifier"), py::arg("config"), py::arg("plan"));

  py::class_<MetricReport>(m, "MetricReport")
      .def_readonly("type", &MetricReport::type)
      .def_readonly("label", &MetricReport::label)
      .def_readonly("classes", &MetricReport::classes)
      .def_readonly("precision", &MetricReport::precision)
      .def_readonly("recall", &MetricReport::recall)
      .def_readonly("f_score", &MetricReport::f_score)
      .def_readonly("mean_late", &MetricReport::mean_late)
      .def_readonly("mean_all", &MetricReport::mean_all)
      .def_readonly("accuracy", &MetricReport::accuracy);

  py::class_<EvalResult>(m, "EvalResult")
      .def_readonly("report", &EvalResult::report)
      .def_property_readonly("confusion", [](const EvalResult& r) {
        py::array_t<std::uint64_t> a({kNumClasses, kNumClasses});
        auto v = a.mutable_unchecked<2>();
        for (std::size_t i = 0; i < kNumClasses; ++i)
          for (std::size_t j = 0; j < kNumClasses; ++j) v(i, j) = r.confusion.counts[i][j];
        return a;
      });

  m.def(
      "prf",
      [](py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast> counts, std::vector<std::size_t> classes) {
        if (counts.ndim() != 2 || counts.shape(0) != py::ssize_t(kNumClasses) || counts.shape(1) != py::ssize_t(kNumClasses))
          throw py::value_error("confusion matrix must be 9 x 9");
        ConfusionMatrix cm;
        auto v = counts.unchecked<2>();
        for (std::size_t i = 0; i < kNumClasses; ++i)
          for (std::size_t j = 0; j < kNumClasses; ++j) cm.counts[i][j] = v(i, j);
        return prf(cm, std::move(classes));
      },
      py::arg("counts"), py::arg("classes") = std::vector<std::size_t>{});
  m.def(
      "eval_classifier",
      [](const Checkpoint& c, const GridStore& test) {
        py::gil_scoped_release release;
        return eval_classifier(c, test);
      },
      py::arg("checkpoint"), py::arg("test"));
  m.def(
      "eval_simulation",
      [](const Checkpoint& sim, const Checkpoint& clf, const GridStore& store, const Windows& w, bool binarize) {
        py::gil_scoped_release release;
        return eval_simulation(sim, clf, store, w.samples, EvalOptions{32, binarize});
      },
      py::arg("simulator"), py::arg("classifier"), py::arg("store"), py::arg("windows"), py::arg("binarize") = false);
  m.def("render_table", &render_table);
  m.def("render_csv", &render_csv);

  m.def(
      "run_gradient_suite",
      [](std::uint64_t seed, std::size_t trials, const std::string& inject_fault) {
        SuiteOptions o;
        o.seed = seed;
        o.trials = trials;
        o.inject_fault = inject_fault;
        py::list out;
        for (const auto& c : run_gradient_suite(o))
          out.append(py::dict(py::arg("layer") = c.layer, py::arg("worst_error") = c.worst_error,
                              py::arg("passed") = c.passed, py::arg("detail") = c.detail));
        return out;
      },
      py::arg("seed") = 1, py::arg("trials") = 10, py::arg("inject_fault") = "");
  m.def(
      "run_adjoint_suite",
      [](std::size_t cases, std::uint64_t seed) {
        const auto r = run_adjoint_suite(cases, seed);
        return py::dict(py::arg("cases") = r.cases, py::arg("worst_error") = r.worst_error, py::arg("passed") = r.passed);
      },
      py::arg("cases") = 100, py::arg("seed") = 1);
  m.def("arch_label", &arch_label);
}
