#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "saenet/checks.hpp"
#include "saenet/dataio.hpp"
#include "saenet/gradcheck.hpp"
#include "saenet/kernels.hpp"
#include "saenet/model.hpp"
#include "saenet/optim.hpp"

namespace py = pybind11;
using namespace saenet;

namespace {

template <typename T>
using c_array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> tensor_from(const c_array<T>& a) {
  Shape shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  std::vector<T> data(a.data(), a.data() + a.size());
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
py::array_t<T> array_from(const Tensor<T>& t) {
  py::array_t<T> out(t.shape());
  std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
  return out;
}

ConvSpec spec_from(const Tensor<double>& input, const Tensor<double>& weight, int64_t stride,
                   int64_t padding, int64_t groups) {
  if (input.rank() != 4) {
    throw DimensionError("conv2d input must be rank 4 (N,C,H,W), got rank " +
                         std::to_string(input.rank()));
  }
  if (weight.rank() != 4) {
    throw DimensionError("conv2d weight must be rank 4 (O,I,kh,kw), got rank " +
                         std::to_string(weight.rank()));
  }
  ConvSpec spec;
  spec.in_channels = input.dim(1);
  spec.out_channels = weight.dim(0);
  spec.kh = weight.dim(2);
  spec.kw = weight.dim(3);
  spec.stride = stride;
  spec.padding = padding;
  spec.groups = groups;
  return spec;
}

// Flattened copy of GradCheckReport with python-friendly entry tuples.
struct CheckResult {
  bool passed = false;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  int resamples = 0;
  std::string failure;
  std::vector<std::pair<std::string, double>> entries;
};

CheckResult run_check(const std::string& name, double tol, uint64_t seed) {
  Rng rng(seed);
  CheckTarget<double> target = named_check(name, rng);
  GradCheckReport<double> report = grad_check(target, tol, rng);
  CheckResult out;
  out.passed = report.pass;
  out.max_rel_err = report.max_rel_err;
  out.tolerance = report.tolerance;
  out.resamples = report.resamples;
  out.failure = report.failure;
  for (const auto& e : report.entries) out.entries.emplace_back(e.name, e.max_rel_err);
  return out;
}

} // namespace

PYBIND11_MODULE(_saenet, m) {
  m.doc() = "Python surface of the saenet C++ core.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const NumericError& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    } catch (const DegenerateBatchError& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    } catch (const Error& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def(
      "conv2d",
      [](const c_array<double>& input, const c_array<double>& weight,
         std::optional<c_array<double>> bias, int64_t stride, int64_t padding, int64_t groups) {
        Tensor<double> x = tensor_from(input);
        Tensor<double> w = tensor_from(weight);
        ConvSpec spec = spec_from(x, w, stride, padding, groups);
        if (bias) {
          Tensor<double> b = tensor_from(*bias);
          return array_from(conv2d(x, w, &b, spec));
        }
        return array_from(conv2d(x, w, nullptr, spec));
      },
      py::arg("input"), py::arg("weight"), py::arg("bias") = py::none(), py::kw_only(),
      py::arg("stride") = 1, py::arg("padding") = 0, py::arg("groups") = 1,
      "2d convolution, NCHW input and OIHW weight.");

  m.def(
      "maxpool2d",
      [](const c_array<double>& input, int64_t kernel, int64_t stride, int64_t padding) {
        return array_from(maxpool2d(tensor_from(input), kernel, stride, padding));
      },
      py::arg("input"), py::arg("kernel"), py::arg("stride"), py::arg("padding") = 0,
      "Max pooling; ties pick the lowest-index element of the window.");

  m.def(
      "global_avg_pool",
      [](const c_array<double>& input) { return array_from(global_avg_pool(tensor_from(input))); },
      py::arg("input"), "(N,C,H,W) -> (N,C) spatial mean.");

  m.def(
      "relu", [](const c_array<double>& x) { return array_from(relu(tensor_from(x))); },
      py::arg("x"));

  m.def(
      "sigmoid", [](const c_array<double>& x) { return array_from(sigmoid(tensor_from(x))); },
      py::arg("x"));

  m.def(
      "softmax", [](const c_array<double>& x) { return array_from(softmax_rows(tensor_from(x))); },
      py::arg("x"), "Row-wise softmax with max subtraction.");

  m.def(
      "channel_scale",
      [](const c_array<double>& input, const c_array<double>& gates) {
        return array_from(channel_scale(tensor_from(input), tensor_from(gates)));
      },
      py::arg("input"), py::arg("gates"), "out[n,c,h,w] = input[n,c,h,w] * gates[n,c].");

  m.def(
      "metrics",
      [](const c_array<double>& logits, const std::vector<int64_t>& labels) {
        Metrics r = metrics_from_logits(tensor_from(logits), labels);
        py::dict d;
        d["top1"] = r.top1;
        d["top5"] = r.top5;
        d["mean_loss"] = r.mean_loss;
        return d;
      },
      py::arg("logits"), py::arg("labels"),
      "top1/top5 fractions plus mean cross-entropy over logits (N,K).");

  m.def(
      "lr_at_epoch",
      [](int64_t epoch, double lr0, double decay, int64_t step_epochs) {
        TrainConfig cfg;
        cfg.lr0 = lr0;
        cfg.decay = decay;
        cfg.step_epochs = step_epochs;
        return lr_at_epoch(cfg, epoch);
      },
      py::arg("epoch"), py::kw_only(), py::arg("lr0") = 0.01, py::arg("decay") = 0.1,
      py::arg("step_epochs") = 15, "Step-decay learning rate at a given epoch.");

  m.def("preset_names", &preset_names, "Named model architectures.");
  m.def("check_names", &check_names, "Named finite-difference gradient targets.");

  py::class_<CheckResult>(m, "CheckResult")
      .def_readonly("passed", &CheckResult::passed)
      .def_readonly("max_rel_err", &CheckResult::max_rel_err)
      .def_readonly("tolerance", &CheckResult::tolerance)
      .def_readonly("resamples", &CheckResult::resamples)
      .def_readonly("failure", &CheckResult::failure)
      .def_readonly("entries", &CheckResult::entries)
      .def("__repr__", [](const CheckResult& r) {
        return "CheckResult(passed=" + std::string(r.passed ? "True" : "False") +
               ", max_rel_err=" + std::to_string(r.max_rel_err) + ")";
      });

  m.def("grad_check", &run_check, py::arg("name"), py::kw_only(), py::arg("tol") = 1e-4,
        py::arg("seed") = 0,
        "Central-difference check of one named target; 64-bit throughout.");

  m.def(
      "make_synthetic",
      [](int64_t classes, int64_t per_class, int64_t side, uint64_t seed, int64_t noise) {
        Dataset ds = synthetic_dataset(classes, per_class, {3, side, side}, seed, noise);
        py::array_t<uint8_t> images({ds.n, ds.c, ds.h, ds.w}, ds.images.data());
        py::array_t<int64_t> labels(std::vector<py::ssize_t>{ds.n}, ds.labels.data());
        return py::make_tuple(images, labels);
      },
      py::arg("classes"), py::arg("per_class"), py::kw_only(), py::arg("side") = 32,
      py::arg("seed") = 0, py::arg("noise") = 12,
      "Balanced synthetic corpus: (uint8 images (N,3,side,side), int64 labels).");

  py::class_<Model<float>>(m, "Model")
      .def(py::init([](const std::string& name, uint64_t seed) {
             return Model<float>(preset(name), seed);
           }),
           py::arg("preset"), py::arg("seed") = 0)
      .def_property_readonly("name", [](Model<float>& m_) { return m_.arch.name; })
      .def_property_readonly("num_classes", [](Model<float>& m_) { return m_.arch.num_classes; })
      .def("param_count", &Model<float>::param_count)
      .def(
          "forward",
          [](Model<float>& m_, const c_array<float>& x) {
            Pass<float> pass(false);
            Var<float> logits = m_.forward(pass, Var<float>::leaf(tensor_from(x), false));
            return array_from(logits.value());
          },
          py::arg("x"), "Eval-mode pass: (N,3,H,W) float32 -> logits (N,num_classes).")
      .def(
          "summary_csv",
          [](Model<float>& m_, int64_t side) {
            if (side == 0) side = m_.arch.stem.maxpool ? 224 : 32;
            return summarize(m_, side, side).to_csv();
          },
          py::arg("side") = 0, "Per-layer output shapes and parameter counts.");
}
