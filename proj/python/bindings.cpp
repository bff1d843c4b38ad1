#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mscred/pipeline.hpp"

namespace py = pybind11;
using namespace mscred;

namespace {

nd::Array array_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> shape;
    for (py::ssize_t d = 0; d < a.ndim(); ++d)
        shape.push_back(static_cast<int>(a.shape(d)));
    std::vector<double> data(a.data(), a.data() + a.size());
    return nd::Array(std::move(shape), std::move(data));
}

py::array_t<double> numpy_from_array(const nd::Array& a) {
    std::vector<py::ssize_t> shape;
    for (int d : a.shape()) shape.push_back(d);
    py::array_t<double> out(shape);
    std::copy_n(a.data(), a.size(), out.mutable_data());
    return out;
}

ts::MultivariateSeries series_from_numpy(const py::array_t<double>& values) {
    if (values.ndim() != 2) throw ShapeError("expected an (n, T) array");
    ts::MultivariateSeries s;
    s.values = array_from_numpy(values);
    for (int i = 0; i < s.n(); ++i) s.names.push_back("s" + std::to_string(i));
    return s;
}

}  // namespace

PYBIND11_MODULE(_mscred, m) {
    m.doc() = "Multi-scale convolutional recurrent encoder-decoder for multivariate "
              "time series anomaly detection and diagnosis";

    py::register_exception<Error>(m, "MscredError");

    py::class_<ts::AnomalyLabel>(m, "AnomalyLabel")
        .def_readonly("start", &ts::AnomalyLabel::start)
        .def_readonly("duration", &ts::AnomalyLabel::duration)
        .def_readonly("root_causes", &ts::AnomalyLabel::root_causes)
        .def("__repr__", [](const ts::AnomalyLabel& l) {
            return "AnomalyLabel(start=" + std::to_string(l.start) +
                   ", duration=" + std::to_string(l.duration) + ")";
        });

    py::class_<eval::Metrics>(m, "Metrics")
        .def_readonly("precision", &eval::Metrics::precision)
        .def_readonly("recall", &eval::Metrics::recall)
        .def_readonly("f1", &eval::Metrics::f1)
        .def_readonly("tp", &eval::Metrics::tp)
        .def_readonly("fp", &eval::Metrics::fp)
        .def_readonly("fn", &eval::Metrics::fn);

    m.def(
        "generate_synthetic",
        [](int n, std::int64_t T, double lambda_, std::uint64_t seed) {
            ts::SynthConfig cfg;
            cfg.n = n;
            cfg.T = T;
            cfg.lambda = lambda_;
            cfg.seed = seed;
            return numpy_from_array(ts::generate_synthetic(cfg).values);
        },
        py::arg("n") = 30, py::arg("T") = 20000, py::arg("lambda_") = 0.3,
        py::arg("seed") = 0,
        "Sinusoidal multivariate series as an (n, T) array");

    m.def(
        "inject_anomalies",
        [](const py::array_t<double>& values, int count, const std::vector<int>& durations,
           int causes_per_event, std::int64_t region_lo, std::int64_t region_hi,
           std::uint64_t seed) {
            const auto series = series_from_numpy(values);
            auto [out, labels] = ts::inject_anomalies(series, count, durations,
                                                      causes_per_event,
                                                      {region_lo, region_hi}, seed);
            return py::make_tuple(numpy_from_array(out.values), labels);
        },
        py::arg("values"), py::arg("count"), py::arg("durations"),
        py::arg("causes_per_event"), py::arg("region_lo"), py::arg("region_hi"),
        py::arg("seed") = 0);

    m.def(
        "signature_tensor",
        [](const py::array_t<double>& values, std::int64_t t, const std::vector<int>& scales) {
            return numpy_from_array(sig::signature_tensor(array_from_numpy(values), t, scales).data);
        },
        py::arg("values"), py::arg("t"), py::arg("scales") = std::vector<int>{10, 30, 60});

    m.def(
        "signature_sequence",
        [](const py::array_t<double>& values, std::int64_t t, const std::vector<int>& scales,
           int h, int gap) {
            const auto seq = sig::signature_sequence(array_from_numpy(values), t, scales, h, gap);
            py::list out;
            for (const auto& tensor : seq.tensors) out.append(numpy_from_array(tensor.data));
            return out;
        },
        py::arg("values"), py::arg("t"), py::arg("scales") = std::vector<int>{10, 30, 60},
        py::arg("h") = 5, py::arg("gap") = 10);

    m.def(
        "anchor_schedule",
        [](std::int64_t lo, std::int64_t hi, const std::vector<int>& scales, int h, int gap) {
            return sig::anchor_schedule({lo, hi}, scales, h, gap);
        },
        py::arg("lo"), py::arg("hi"), py::arg("scales") = std::vector<int>{10, 30, 60},
        py::arg("h") = 5, py::arg("gap") = 10);

    m.def("event_metrics",
          [](const std::vector<std::pair<std::int64_t, std::int64_t>>& events,
             const std::vector<std::pair<std::int64_t, int>>& labels, std::int64_t extend) {
              std::vector<detect::Event> evs;
              for (const auto& [s, e] : events) {
                  detect::Event ev;
                  ev.start_anchor = s;
                  ev.end_anchor = e;
                  evs.push_back(ev);
              }
              std::vector<ts::AnomalyLabel> lbls;
              for (const auto& [start, duration] : labels)
                  lbls.push_back({start, duration, {0}});
              return eval::event_metrics(evs, lbls, {.extend_steps = extend});
          },
          py::arg("events"), py::arg("labels"), py::arg("extend") = 10,
          "Overlap-matched precision/recall/F1 from (start, end) event spans and "
          "(start, duration) labels");

    m.def("recall_at_k", &eval::recall_at_k, py::arg("rankings"), py::arg("true_causes"),
          py::arg("k") = 3);

    // Config-driven pipeline stages, mirroring the CLI subcommands.
    auto resolve = [](const std::string& preset, const py::dict& overrides) {
        RunConfig cfg = preset_by_name(preset);
        for (const auto& item : overrides)
            cfg.apply(py::str(item.first), py::str(item.second));
        cfg.validate();
        pipeline::apply_threads(cfg);
        return cfg;
    };

    m.def(
        "run_generate",
        [resolve](const std::string& preset, const py::dict& overrides) {
            pipeline::run_generate(resolve(preset, overrides));
        },
        py::arg("preset") = "toy", py::arg("overrides") = py::dict());

    m.def(
        "run_train",
        [resolve](const std::string& preset, const py::dict& overrides) {
            const auto fit = pipeline::run_train(resolve(preset, overrides));
            py::list log;
            for (const auto& row : fit.log)
                log.append(py::make_tuple(row.epoch, row.train_loss, row.valid_loss));
            return log;
        },
        py::arg("preset") = "toy", py::arg("overrides") = py::dict());

    m.def(
        "run_detect",
        [resolve](const std::string& preset, const py::dict& overrides) {
            const auto out = pipeline::run_detect(resolve(preset, overrides));
            py::list events;
            for (const auto& ev : out.detection.events)
                events.append(py::make_tuple(ev.start_anchor, ev.end_anchor,
                                             detect::severity_name(ev.severity)));
            return events;
        },
        py::arg("preset") = "toy", py::arg("overrides") = py::dict());

    m.def(
        "run_eval",
        [resolve](const std::string& preset, const py::dict& overrides) {
            const auto out = pipeline::run_eval(resolve(preset, overrides));
            py::dict result;
            result["precision"] = out.metrics.precision;
            result["recall"] = out.metrics.recall;
            result["f1"] = out.metrics.f1;
            result["recall_at_k"] = out.recall_at_k;
            return result;
        },
        py::arg("preset") = "toy", py::arg("overrides") = py::dict());

    m.def(
        "grad_check",
        [resolve](const std::string& preset, const py::dict& overrides, int coords) {
            pipeline::GradCheckSettings settings;
            settings.coords_per_param = coords;
            const auto report = pipeline::run_grad_check(resolve(preset, overrides), settings);
            py::dict result;
            result["max_rel_err"] = report.max_rel_err;
            result["coords_checked"] = report.coords_checked;
            result["worst_param"] = report.worst_param;
            return result;
        },
        py::arg("preset") = "toy", py::arg("overrides") = py::dict(),
        py::arg("coords") = 4);
}
