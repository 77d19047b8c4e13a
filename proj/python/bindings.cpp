#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "vidflow/checkpoint.hpp"
#include "vidflow/config.hpp"
#include "vidflow/pipeline.hpp"

namespace py = pybind11;
using namespace vidflow;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

TensorF to_tensor(const Array& a) {
  const std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
  return TensorF(Shape(dims), std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const TensorF& t) {
  Array out(std::vector<py::ssize_t>(t.shape().dims().begin(), t.shape().dims().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// [clips, frames, C, H, W]
Array dataset_array(const Dataset& d) {
  Array out({d.clips.size(), d.frames_per_clip, d.channels, d.height, d.width});
  float* p = out.mutable_data();
  for (const auto& clip : d.clips) {
    for (const auto& f : clip) p = std::copy(f.data().begin(), f.data().end(), p);
  }
  return out;
}

std::vector<TensorF> frames_from(const Array& a) {
  if (a.ndim() != 4) throw std::invalid_argument("expected frames as [n, C, H, W]");
  std::vector<TensorF> out;
  const std::size_t per = static_cast<std::size_t>(a.size() / a.shape(0));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    out.emplace_back(Shape{static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(2)),
                           static_cast<std::size_t>(a.shape(3))},
                     std::vector<float>(a.data() + i * per, a.data() + (i + 1) * per));
  }
  return out;
}

Array stack(const std::vector<TensorF>& frames, const Shape& s) {
  Array out({frames.size(), s[0], s[1], s[2]});
  float* p = out.mutable_data();
  for (const auto& f : frames) p = std::copy(f.data().begin(), f.data().end(), p);
  return out;
}

}  // namespace

PYBIND11_MODULE(vidflow, m) {
  m.doc() = "flow-matching video prediction (C++ core)";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ModeMismatch>(m, "ModeMismatch", PyExc_ValueError);
  py::register_exception<FileError>(m, "FileError", PyExc_OSError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_FloatingPointError);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", &RunConfig::parse)
      .def("set", &RunConfig::set)
      .def("get", &RunConfig::get)
      .def("to_text", &RunConfig::to_text)
      .def("validate", &RunConfig::validate)
      .def_static("keys", &RunConfig::keys)
      .def_readwrite("seed", &RunConfig::seed)
      .def("param_count", [](const RunConfig& c) { return param_count(c.model_config()); })
      .def("__eq__", [](const RunConfig& a, const RunConfig& b) { return a == b; });

  m.def("generate_data", [](const RunConfig& cfg) {
    const GeneratedData d = generate_data(cfg);
    return py::make_tuple(dataset_array(d.train), dataset_array(d.test));
  }, "(train, test) pixel clips as float32 [clips, frames, C, H, W]");

  m.def("psnr", [](const Array& a, const Array& b, double max_val) { return psnr(to_tensor(a), to_tensor(b), max_val); },
        py::arg("a"), py::arg("b"), py::arg("max_val") = 1.0);
  m.def("ssim", [](const Array& a, const Array& b, double max_val) { return ssim(to_tensor(a), to_tensor(b), max_val); },
        py::arg("a"), py::arg("b"), py::arg("max_val") = 1.0);
  m.def("steps_for", &steps_for);
  m.def("time_grid", &make_time_grid);
  m.def("target_field", [](double t, const Array& x, const Array& x1, double sigma_min) {
    return to_array(target_field(t, to_tensor(x), to_tensor(x1), PathParams{sigma_min}));
  }, py::arg("t"), py::arg("x"), py::arg("x1"), py::arg("sigma_min") = 1e-7);

  m.def("train", [](const RunConfig& cfg, const std::string& checkpoint_path) {
    std::vector<double> losses;
    TrainState st;
    {
      py::gil_scoped_release nogil;
      st = train_from_config(cfg, {[&](std::size_t, const StepResult& r) { losses.push_back(r.loss); }, {}});
    }
    save_checkpoint(checkpoint_path, cfg, st);
    return losses;
  }, py::arg("config"), py::arg("checkpoint_path"), "trains, writes the checkpoint, returns per-iteration losses");

  m.def("load_config", [](const std::string& path) { return load_checkpoint(path).config; });
  m.def("checkpoint_step", [](const std::string& path) { return load_checkpoint(path).state.opt.step; });

  m.def("rollout", [](const std::string& checkpoint_path, const Array& context, std::size_t n_future,
                      std::uint64_t seed) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const FlowModel model = network_model(ck.config.model_config(), ck.state.params);
    SampleConfig sc = ck.config.sample_config();
    Rng rng(seed);
    const Rollout r = rollout(frames_from(context), n_future, model, sc, rng);
    return stack(r.frames, model.cfg.latent_shape());
  }, py::arg("checkpoint_path"), py::arg("context"), py::arg("n_future"), py::arg("seed") = 0,
        "latent context [n, C, H, W] -> n_future latent frames");

  m.def("evaluate", [](const std::string& checkpoint_path) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const RunConfig& cfg = ck.config;
    const FlowModel model = network_model(cfg.model_config(), ck.state.params);
    const EvalReport rep =
        evaluate(generate_data(cfg).test, *cfg.codec(), rollout_predictor(model, cfg.sample_config()), cfg.eval_config());
    py::dict d;
    d["psnr"] = rep.aggregate.psnr;
    d["ssim"] = rep.aggregate.ssim;
    d["baseline_psnr"] = rep.baseline.psnr;
    d["baseline_ssim"] = rep.baseline.ssim;
    return d;
  }, "rollout scores on the held-out split regenerated from the checkpoint's config");
}
