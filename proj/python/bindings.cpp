// Python bindings: data generation and preprocessing, embedding, evaluation of saved
// models, the experiment commands, and the paired signed-rank test.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "segsel/experiment.hpp"
#include "segsel/trial_io.hpp"

namespace py = pybind11;
using namespace segsel;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Tensor::Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor t(shape, 0.0);
  std::copy(a.data(), a.data() + a.size(), t.storage().begin());
  return t;
}

py::tuple range_tuple(const Range& r) { return py::make_tuple(r.lo, r.hi); }
Range tuple_range(const std::pair<double, double>& p) { return {p.first, p.second}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Temporal segment selection with an actor-critic agent";

  auto config_error = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  (void)config_error;

  py::class_<Trial>(m, "Trial")
      .def(py::init([](const py::array_t<double, py::array::c_style | py::array::forcecast>& signal, int label,
                       double sample_rate, std::optional<std::vector<std::uint8_t>> mask) {
             Trial t;
             t.signal = from_numpy(signal);
             t.label = label;
             t.sample_rate = sample_rate;
             t.mask = std::move(mask);
             t.validate();
             return t;
           }),
           py::arg("signal"), py::arg("label"), py::arg("sample_rate"), py::arg("mask") = py::none())
      .def_property_readonly("signal", [](const Trial& t) { return to_numpy(t.signal); },
                             "Samples as a [channels, timepoints] array.")
      .def_readonly("label", &Trial::label)
      .def_readonly("sample_rate", &Trial::sample_rate)
      .def_property_readonly(
          "mask",
          [](const Trial& t) -> py::object {
            if (!t.mask) return py::none();
            py::array_t<std::uint8_t> out(static_cast<py::ssize_t>(t.mask->size()));
            std::copy(t.mask->begin(), t.mask->end(), out.mutable_data());
            return out;
          },
          "Per-timepoint ground-truth flags of planted bursts, or None.")
      .def_property_readonly("channels", &Trial::channels)
      .def_property_readonly("length", &Trial::length)
      .def("__eq__", [](const Trial& a, const Trial& b) { return a == b; });

  py::class_<GeneratorConfig>(m, "GeneratorConfig")
      .def(py::init<>())
      .def_readwrite("channels", &GeneratorConfig::channels)
      .def_readwrite("samples", &GeneratorConfig::samples)
      .def_readwrite("sample_rate", &GeneratorConfig::sample_rate)
      .def_property("burst_band", [](const GeneratorConfig& g) { return range_tuple(g.burst_band); },
                    [](GeneratorConfig& g, std::pair<double, double> r) { g.burst_band = tuple_range(r); })
      .def_property("burst_duration", [](const GeneratorConfig& g) { return range_tuple(g.burst_duration); },
                    [](GeneratorConfig& g, std::pair<double, double> r) { g.burst_duration = tuple_range(r); })
      .def_property("burst_span", [](const GeneratorConfig& g) { return range_tuple(g.burst_span); },
                    [](GeneratorConfig& g, std::pair<double, double> r) { g.burst_span = tuple_range(r); })
      .def_property("burst_count", [](const GeneratorConfig& g) { return py::make_tuple(g.burst_count.lo, g.burst_count.hi); },
                    [](GeneratorConfig& g, std::pair<std::size_t, std::size_t> r) { g.burst_count = {r.first, r.second}; })
      .def_readwrite("snr", &GeneratorConfig::snr)
      .def_readwrite("class_channel_map", &GeneratorConfig::class_channel_map)
      .def_readwrite("rng_seed", &GeneratorConfig::rng_seed)
      .def("validate", &GeneratorConfig::validate);

  m.def("default_generator_config", &default_generator_config, py::arg("channels") = 20);
  m.def("generate_trials", &generate_trials, py::arg("config"), py::arg("count"), py::arg("fraction_class1") = 0.5,
        "Seeded synthetic trials with planted class-specific bursts.");

  py::class_<PreprocessConfig>(m, "PreprocessConfig")
      .def(py::init<>())
      .def_property(
          "band", [](const PreprocessConfig& p) -> py::object { return p.band ? py::object(range_tuple(*p.band)) : py::none(); },
          [](PreprocessConfig& p, std::optional<std::pair<double, double>> r) {
            p.band = r ? std::optional<Range>(tuple_range(*r)) : std::nullopt;
          })
      .def_readwrite("target_rate", &PreprocessConfig::target_rate)
      .def_property(
          "crop", [](const PreprocessConfig& p) -> py::object { return p.crop ? py::object(range_tuple(*p.crop)) : py::none(); },
          [](PreprocessConfig& p, std::optional<std::pair<double, double>> r) {
            p.crop = r ? std::optional<Range>(tuple_range(*r)) : std::nullopt;
          })
      .def_readwrite("channel_subset", &PreprocessConfig::channel_subset)
      .def_readwrite("filter_order", &PreprocessConfig::filter_order);

  m.def("preprocess", &preprocess, py::arg("trial"), py::arg("config") = PreprocessConfig{},
        "Band-pass, decimate, crop and select channels.");
  m.def(
      "stft_spectrogram",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, std::size_t window, std::size_t hop) {
        return to_numpy(stft_spectrogram(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), window, hop));
      },
      py::arg("signal"), py::arg("window"), py::arg("hop"), "Hann-windowed power spectrogram [bins, frames].");
  m.def("save_trials", &save_trials, py::arg("path"), py::arg("trials"));
  m.def("load_trials", &load_trials, py::arg("path"));

  py::class_<EmbeddingConfig>(m, "EmbeddingConfig")
      .def(py::init<>())
      .def_static("preset", &EmbeddingConfig::preset, py::arg("name"))
      .def_readwrite("temporal_filters", &EmbeddingConfig::temporal_filters)
      .def_readwrite("temporal_kernel", &EmbeddingConfig::temporal_kernel)
      .def_readwrite("temporal_stride", &EmbeddingConfig::temporal_stride)
      .def_readwrite("spatial_filters", &EmbeddingConfig::spatial_filters)
      .def_readwrite("pool_window", &EmbeddingConfig::pool_window)
      .def_readwrite("pool_stride", &EmbeddingConfig::pool_stride)
      .def_property_readonly("feature_dim", &EmbeddingConfig::feature_dim)
      .def("output_length", &EmbeddingConfig::output_length, py::arg("input_length"));

  py::class_<Networks>(m, "Networks")
      .def_readonly("embedding_config", &Networks::embedding_config)
      .def_readonly("channels", &Networks::channels)
      .def_property_readonly("input_scale", [](const Networks& n) { return n.agent.input_scale; });
  m.def("load_networks", &load_networks, py::arg("path"));
  m.def(
      "embed",
      [](const Networks& nets, const Trial& trial) {
        const FeatureSequence fs = embed(trial.signal, nets.embedding, nets.embedding_config);
        return py::make_tuple(to_numpy(fs.features), fs.receptive_fields);
      },
      py::arg("networks"), py::arg("trial"),
      "Feature sequence [D, T'] and the input interval [start, end) of each reduced step.");
  m.def(
      "evaluate",
      [](const Networks& nets, const std::vector<Trial>& trials, const std::string& pipeline) {
        const EvalResult ev = evaluate(trials, nets, pipeline_from_string(pipeline), AgentConfig{});
        py::list per_trial;
        for (const auto& o : ev.trials) {
          py::dict d;
          d["label"] = o.label;
          d["probability"] = o.probability;
          d["prediction"] = o.prediction;
          d["selected"] = o.selected;
          d["steps"] = o.steps;
          per_trial.append(d);
        }
        py::dict out;
        out["accuracy"] = ev.accuracy;
        out["mean_loss"] = ev.mean_loss;
        out["selection_fraction"] = ev.selection_fraction;
        out["in_mask_rate"] = ev.in_mask_rate;
        out["out_mask_rate"] = ev.out_mask_rate;
        out["trials"] = per_trial;
        return out;
      },
      py::arg("networks"), py::arg("trials"), py::arg("pipeline") = "agent",
      "Greedy evaluation of preprocessed trials.");

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def_readwrite("generator", &ExperimentConfig::generator)
      .def_readwrite("preprocess", &ExperimentConfig::preprocess)
      .def_readwrite("embedding", &ExperimentConfig::embedding)
      .def_readwrite("output_dir", &ExperimentConfig::output_dir)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_property(
          "pipeline", [](const ExperimentConfig& c) { return std::string(to_string(c.train.pipeline)); },
          [](ExperimentConfig& c, const std::string& p) { c.train.pipeline = pipeline_from_string(p); });
  m.def("parse_experiment_config", &parse_experiment_config, py::arg("json_text"));
  m.def("load_experiment_config", &load_experiment_config, py::arg("path"));

  py::class_<SubjectMetrics>(m, "SubjectMetrics")
      .def_readonly("seed", &SubjectMetrics::seed)
      .def_readonly("accuracy", &SubjectMetrics::accuracy)
      .def_readonly("selection_fraction", &SubjectMetrics::selection_fraction)
      .def_readonly("in_mask_rate", &SubjectMetrics::in_mask_rate)
      .def_readonly("out_mask_rate", &SubjectMetrics::out_mask_rate)
      .def_readonly("mask_coverage", &SubjectMetrics::mask_coverage);

  m.def("cmd_generate", &cmd_generate, py::arg("config"), py::arg("out"), py::call_guard<py::gil_scoped_release>());
  m.def("cmd_train", &cmd_train, py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def("cmd_eval", &cmd_eval, py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def("cmd_traces", &cmd_traces, py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "cmd_compare",
      [](const std::filesystem::path& a, const std::filesystem::path& b, std::optional<std::filesystem::path> out) {
        const Comparison c = cmd_compare(a, b, out);
        py::dict d;
        d["seeds"] = c.seeds;
        d["a"] = c.a;
        d["b"] = c.b;
        d["p_value"] = c.test.p_value;
        d["statistic"] = c.test.statistic;
        d["exact"] = c.test.exact;
        return d;
      },
      py::arg("metrics_a"), py::arg("metrics_b"), py::arg("out") = py::none());

  m.def(
      "wilcoxon_signed_rank",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        const WilcoxonResult r = wilcoxon_signed_rank(x, y);
        py::dict d;
        d["n"] = r.n;
        d["w_plus"] = r.w_plus;
        d["w_minus"] = r.w_minus;
        d["statistic"] = r.statistic;
        d["p_value"] = r.p_value;
        d["exact"] = r.exact;
        return d;
      },
      py::arg("x"), py::arg("y"), "Two-sided paired signed-rank test on x - y.");
  m.def(
      "summarize",
      [](const std::vector<double>& v) {
        const Summary s = summarize(v);
        py::dict d;
        d["mean"] = s.mean;
        d["sd"] = s.sd;
        d["median"] = s.median;
        d["max"] = s.max;
        d["min"] = s.min;
        return d;
      },
      py::arg("values"));
}
