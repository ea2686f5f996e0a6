// Python bindings for the hybrid-attention sleep staging core: synthetic
// data, dataset I/O, model init/encode/train/predict, metrics, gradcheck.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "hass/dataset.hpp"
#include "hass/errors.hpp"
#include "hass/metrics.hpp"
#include "hass/model.hpp"
#include "hass/rng.hpp"

namespace py = pybind11;
using namespace hass;

namespace {

Tensor tensor_from_2d(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw ShapeError("expected a 2-D array (C x T)");
  const std::size_t c = static_cast<std::size_t>(arr.shape(0));
  const std::size_t t = static_cast<std::size_t>(arr.shape(1));
  std::vector<double> data(arr.data(), arr.data() + c * t);
  return Tensor({c, t, 1}, std::move(data));
}

py::array_t<double> array_from_signal(const Tensor& signal) {
  const std::size_t c = signal.extent(0), t = signal.extent(1);
  py::array_t<double> out({c, t});
  std::copy(signal.data(), signal.data() + signal.size(), out.mutable_data());
  return out;
}

std::vector<EpochRecord> records_from_arrays(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& signals,
    const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& labels) {
  if (signals.ndim() != 3) throw ShapeError("signals must be a 3-D array (n x C x T)");
  if (labels.ndim() != 1 || labels.shape(0) != signals.shape(0)) {
    throw ShapeError("labels must be a 1-D array matching the record count");
  }
  const std::size_t n = static_cast<std::size_t>(signals.shape(0));
  const std::size_t c = static_cast<std::size_t>(signals.shape(1));
  const std::size_t t = static_cast<std::size_t>(signals.shape(2));
  std::vector<EpochRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> data(signals.data() + i * c * t, signals.data() + (i + 1) * c * t);
    records[i].signal = Tensor({c, t, 1}, std::move(data));
    const std::uint8_t lab = labels.data()[i];
    if (lab > 4) throw ConfigError("label " + std::to_string(lab) + " out of range");
    records[i].label = static_cast<SleepStage>(lab);
  }
  return records;
}

py::tuple arrays_from_records(const std::vector<EpochRecord>& records) {
  if (records.empty()) throw ConfigError("no records");
  const std::size_t n = records.size();
  const std::size_t c = records.front().signal.extent(0);
  const std::size_t t = records.front().signal.extent(1);
  py::array_t<double> signals({n, c, t});
  py::array_t<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(records[i].signal.data(), records[i].signal.data() + c * t,
              signals.mutable_data() + i * c * t);
    labels.mutable_data()[i] = static_cast<std::uint8_t>(records[i].label);
  }
  return py::make_tuple(signals, labels);
}

std::vector<SleepStage> stages_from_array(
    const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& labels) {
  std::vector<SleepStage> out;
  out.reserve(labels.shape(0));
  for (py::ssize_t i = 0; i < labels.shape(0); ++i) {
    const std::uint8_t lab = labels.data()[i];
    if (lab > 4) throw ConfigError("label " + std::to_string(lab) + " out of range");
    out.push_back(static_cast<SleepStage>(lab));
  }
  return out;
}

py::dict dict_from_report(const MetricsReport& r) {
  py::dict d;
  d["accuracy"] = r.accuracy;
  d["overall_f1"] = r.overall_f1;
  d["n_epochs"] = r.n_epochs;
  py::dict f1;
  for (std::size_t k = 0; k < kStageCount; ++k) f1[kStageNames[k]] = r.per_stage_f1[k];
  d["f1"] = f1;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hass, m) {
  m.doc() = "hybrid-attention sleep staging core";
  m.attr("__version__") = "1.0.0";
  m.attr("STAGES") = py::make_tuple("W", "N1", "N2", "N3", "REM");

  py::class_<StagingModel>(m, "Model")
      .def_readonly("channels", &StagingModel::channels)
      .def_readonly("timesteps", &StagingModel::timesteps)
      .def_property_readonly("use_hass",
                             [](const StagingModel& m) { return m.encoder.has_value(); })
      .def_property_readonly("head_kind",
                             [](const StagingModel& m) {
                               return m.head.kind == HeadKind::TinyConv ? "tinyconv" : "linear";
                             })
      .def("encode",
           [](const StagingModel& model, const py::array_t<double, py::array::c_style |
                                                                       py::array::forcecast>& x) {
             if (!model.encoder) throw ConfigError("model has no encoder");
             return array_from_signal(encode(tensor_from_2d(x), *model.encoder));
           },
           py::arg("signal"), "Apply the hybrid-attention encoder to one C x T signal")
      .def("logits",
           [](const StagingModel& model, const py::array_t<double, py::array::c_style |
                                                                       py::array::forcecast>& x) {
             Tensor out = forward_classify(tensor_from_2d(x),
                                           model.encoder ? &*model.encoder : nullptr, model.head);
             py::array_t<double> arr(kStageCount);
             std::copy(out.data(), out.data() + out.size(), arr.mutable_data());
             return arr;
           },
           py::arg("signal"))
      .def("save", [](const StagingModel& model, const std::string& path) {
        save_model(model, path);
      });

  m.def("init_model",
        [](std::size_t channels, std::size_t timesteps, bool use_hass, const std::string& head,
           std::uint64_t seed) {
          return init_model(channels, timesteps, 1, use_hass,
                            head == "tinyconv" ? HeadKind::TinyConv : HeadKind::Linear, seed);
        },
        py::arg("channels"), py::arg("timesteps"), py::arg("use_hass") = true,
        py::arg("head") = "linear", py::arg("seed") = 0);

  m.def("load_model", &load_model, py::arg("path"));

  m.def("generate_synthetic",
        [](std::size_t channels, std::size_t timesteps, std::size_t count, std::uint64_t seed,
           double spatial, double temporal, double noise, std::optional<std::vector<double>> balance) {
          SynthSpec spec;
          spec.channels = channels;
          spec.timesteps = timesteps;
          spec.count = count;
          spec.seed = seed;
          spec.spatial_coupling = spatial;
          spec.temporal_signature = temporal;
          spec.noise_std = noise;
          if (balance) {
            if (balance->size() != kStageCount) throw ConfigError("balance needs 5 entries");
            for (std::size_t k = 0; k < kStageCount; ++k) spec.class_balance[k] = (*balance)[k];
          }
          return arrays_from_records(generate_synthetic(spec));
        },
        py::arg("channels") = 6, py::arg("timesteps") = 64, py::arg("count") = 100,
        py::arg("seed") = 0, py::arg("spatial") = 0.5, py::arg("temporal") = 0.5,
        py::arg("noise") = 0.1, py::arg("balance") = py::none());

  m.def("write_dataset",
        [](const std::string& path,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& signals,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& labels) {
          write_dataset(records_from_arrays(signals, labels), path);
        },
        py::arg("path"), py::arg("signals"), py::arg("labels"));

  m.def("read_dataset",
        [](const std::string& path) { return arrays_from_records(read_dataset(path)); },
        py::arg("path"));

  m.def("train",
        [](StagingModel& model,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& signals,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& labels,
           std::size_t epochs, std::size_t batch_size, double lr, const std::string& optimizer,
           std::uint64_t seed) {
          std::vector<EpochRecord> records = records_from_arrays(signals, labels);
          TrainConfig cfg;
          cfg.epochs = epochs;
          cfg.batch_size = batch_size;
          cfg.learning_rate = lr;
          cfg.optimizer = optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
          cfg.seed = seed;
          TrainResult result =
              train(records, cfg, model.encoder ? &*model.encoder : nullptr, model.head);
          py::list trace;
          for (const EpochStats& s : result.trace) {
            trace.append(py::make_tuple(s.loss, s.accuracy));
          }
          py::dict out;
          out["trace"] = trace;
          out["final_train_accuracy"] = result.final_train_accuracy;
          return out;
        },
        py::arg("model"), py::arg("signals"), py::arg("labels"), py::arg("epochs") = 10,
        py::arg("batch_size") = 32, py::arg("lr") = 1e-3, py::arg("optimizer") = "adam",
        py::arg("seed") = 0);

  m.def("predict",
        [](const StagingModel& model,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& signals) {
          py::array_t<std::uint8_t> dummy(static_cast<std::size_t>(signals.shape(0)));
          std::fill(dummy.mutable_data(), dummy.mutable_data() + signals.shape(0), 0);
          std::vector<EpochRecord> records = records_from_arrays(signals, dummy);
          std::vector<SleepStage> preds =
              predict(records, model.encoder ? &*model.encoder : nullptr, model.head);
          py::array_t<std::uint8_t> out(preds.size());
          for (std::size_t i = 0; i < preds.size(); ++i) {
            out.mutable_data()[i] = static_cast<std::uint8_t>(preds[i]);
          }
          return out;
        },
        py::arg("model"), py::arg("signals"));

  m.def("evaluate",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& truth,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& preds) {
          return dict_from_report(
              metrics_from_confusion(confusion(stages_from_array(truth), stages_from_array(preds))));
        },
        py::arg("truth"), py::arg("predictions"));

  m.def("gradcheck",
        [](std::size_t channels, std::size_t timesteps, std::size_t heads, std::uint64_t seed) {
          GradCheckConfig cfg;
          cfg.channels = channels;
          cfg.timesteps = timesteps;
          cfg.heads = heads;
          cfg.seed = seed;
          return gradcheck_model(cfg).max_rel_error;
        },
        py::arg("channels") = 3, py::arg("timesteps") = 4, py::arg("heads") = 1,
        py::arg("seed") = 0);

  py::register_exception<ShapeError>(m, "HassShapeError");
  py::register_exception<ConfigError>(m, "HassConfigError");
  py::register_exception<DatasetError>(m, "HassDatasetError");
  py::register_exception<ParamsError>(m, "HassParamsError");
}
