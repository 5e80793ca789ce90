#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "phasezoo/downstream.hpp"
#include "phasezoo/hpo.hpp"
#include "phasezoo/landscape.hpp"
#include "phasezoo/phase.hpp"
#include "phasezoo/probe.hpp"
#include "phasezoo/rng.hpp"
#include "phasezoo/trainer.hpp"
#include "phasezoo/zoo.hpp"

namespace py = pybind11;
using namespace phasezoo;

namespace {

Matrix matrix_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw shape_error("expected a 2-d array");
    Matrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
    std::copy_n(arr.data(), m.data.size(), m.data.begin());
    return m;
}

py::array_t<double> numpy_from_matrix(const Matrix& m) {
    py::array_t<double> arr({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), arr.mutable_data());
    return arr;
}

py::array_t<double> numpy_from_vector(const std::vector<double>& v) {
    py::array_t<double> arr(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), arr.mutable_data());
    return arr;
}

Batch batch_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& inputs,
                       const std::vector<int>& labels) {
    Batch b;
    b.inputs = matrix_from_numpy(inputs);
    b.labels = labels;
    return b;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "model zoo generation, loss-landscape metrics and phase classification";
    m.attr("__version__") = "0.1.0";

    py::register_exception<invalid_spec_error>(m, "InvalidSpecError");
    py::register_exception<shape_error>(m, "ShapeError");
    py::register_exception<numeric_error>(m, "NumericError");
    py::register_exception<precondition_error>(m, "PreconditionError");
    py::register_exception<coverage_error>(m, "CoverageError");
    py::register_exception<undefined_similarity_error>(m, "UndefinedSimilarityError");

    py::enum_<Activation>(m, "Activation")
        .value("relu", Activation::relu)
        .value("tanh", Activation::tanh);

    py::class_<ModelSpec>(m, "ModelSpec")
        .def(py::init<>())
        .def_readwrite("input_dim", &ModelSpec::input_dim)
        .def_readwrite("hidden_width", &ModelSpec::hidden_width)
        .def_readwrite("num_hidden_layers", &ModelSpec::num_hidden_layers)
        .def_readwrite("output_dim", &ModelSpec::output_dim)
        .def_readwrite("activation", &ModelSpec::activation)
        .def_readwrite("seed", &ModelSpec::seed)
        .def("parameter_count", &ModelSpec::parameter_count);

    py::class_<TensorDesc>(m, "TensorDesc")
        .def_readonly("layer", &TensorDesc::layer)
        .def_readonly("rows", &TensorDesc::rows)
        .def_readonly("cols", &TensorDesc::cols)
        .def_readonly("offset", &TensorDesc::offset)
        .def_property_readonly(
            "kind", [](const TensorDesc& d) { return d.kind == TensorKind::weight ? "weight" : "bias"; })
        .def("name", &TensorDesc::name);

    py::class_<ParameterVector>(m, "ParameterVector")
        .def_property(
            "values", [](const ParameterVector& p) { return numpy_from_vector(p.values); },
            [](ParameterVector& p, const py::array_t<double, py::array::c_style | py::array::forcecast>& v) {
                if (static_cast<std::size_t>(v.size()) != p.values.size())
                    throw shape_error("value count must match the layout");
                std::copy_n(v.data(), p.values.size(), p.values.begin());
            })
        .def_readonly("layout", &ParameterVector::layout)
        .def("__len__", &ParameterVector::size);

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("inputs", [](const Dataset& d) { return numpy_from_matrix(d.inputs); })
        .def_readonly("labels", &Dataset::labels)
        .def_readonly("num_classes", &Dataset::num_classes)
        .def("__len__", &Dataset::size);

    py::class_<DataPair>(m, "DataPair")
        .def_readonly("train", &DataPair::train)
        .def_readonly("test", &DataPair::test);

    m.def("make_spirals", &make_spirals, py::arg("n"), py::arg("classes"), py::arg("noise"),
          py::arg("seed"));
    m.def("make_gaussian_mixture", &make_gaussian_mixture, py::arg("n"), py::arg("classes"),
          py::arg("separation"), py::arg("seed"));
    m.def("load_csv", [](const std::string& path) { return load_csv(path); }, py::arg("path"));
    m.def("train_test_split", &train_test_split, py::arg("dataset"), py::arg("test_fraction"),
          py::arg("seed"));

    m.def("build_model", &build_model, py::arg("spec"));
    m.def(
        "forward",
        [](const ParameterVector& params, const ModelSpec& spec,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& inputs,
           const std::vector<int>& labels) {
            return numpy_from_matrix(forward(params, spec, batch_from_numpy(inputs, labels)));
        },
        py::arg("params"), py::arg("spec"), py::arg("inputs"), py::arg("labels"));
    m.def(
        "loss_and_grad",
        [](const ParameterVector& params, const ModelSpec& spec,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& inputs,
           const std::vector<int>& labels) {
            LossGrad lg = loss_and_grad(params, spec, batch_from_numpy(inputs, labels));
            return py::make_tuple(lg.loss, lg.grad);
        },
        py::arg("params"), py::arg("spec"), py::arg("inputs"), py::arg("labels"));
    m.def(
        "hvp",
        [](const ParameterVector& params, const ModelSpec& spec,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& inputs,
           const std::vector<int>& labels, const ParameterVector& v) {
            return hvp(params, spec, batch_from_numpy(inputs, labels), v);
        },
        py::arg("params"), py::arg("spec"), py::arg("inputs"), py::arg("labels"), py::arg("v"));

    py::enum_<LrSchedule>(m, "LrSchedule")
        .value("one_cycle_cosine", LrSchedule::one_cycle_cosine)
        .value("constant", LrSchedule::constant);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("peak_lr", &TrainConfig::peak_lr)
        .def_readwrite("momentum", &TrainConfig::momentum)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("schedule", &TrainConfig::schedule)
        .def_readwrite("warmup_fraction", &TrainConfig::warmup_fraction)
        .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("strict_eval", &TrainConfig::strict_eval);

    py::class_<EpochRecord>(m, "EpochRecord")
        .def_readonly("epoch", &EpochRecord::epoch)
        .def_readonly("train_loss", &EpochRecord::train_loss)
        .def_readonly("train_acc", &EpochRecord::train_acc)
        .def_readonly("test_loss", &EpochRecord::test_loss)
        .def_readonly("test_acc", &EpochRecord::test_acc)
        .def_readonly("lr", &EpochRecord::lr);

    py::class_<RunRecord>(m, "RunRecord")
        .def_readonly("history", &RunRecord::history)
        .def_readonly("final", &RunRecord::final)
        .def_readonly("generalization_gap", &RunRecord::generalization_gap)
        .def_readonly("diverged", &RunRecord::diverged)
        .def_property_readonly("checkpoints",
                               [](const RunRecord& r) {
                                   py::list out;
                                   for (const auto& [epoch, params] : r.checkpoints)
                                       out.append(py::make_tuple(epoch, params));
                                   return out;
                               })
        .def_property_readonly("final_params",
                               [](const RunRecord& r) { return r.final_params(); });

    m.def("train", &train, py::arg("spec"), py::arg("data"), py::arg("config"));
    m.def("train_from", &train_from, py::arg("params"), py::arg("spec"), py::arg("data"),
          py::arg("config"));
    m.def("evaluate", &evaluate, py::arg("params"), py::arg("spec"), py::arg("split"));
    m.def("lr_at", &lr_at, py::arg("config"), py::arg("step"), py::arg("total_steps"));

    m.def(
        "top_eigenvalue",
        [](const ParameterVector& params, const ModelSpec& spec, const Dataset& data, int max_iters,
           double tol) { return top_eigenvalue(params, spec, data, max_iters, tol); },
        py::arg("params"), py::arg("spec"), py::arg("data"), py::arg("max_iters") = 100,
        py::arg("tol") = 1e-5);
    m.def(
        "hessian_trace",
        [](const ParameterVector& params, const ModelSpec& spec, const Dataset& data, int probes,
           std::uint64_t seed) {
            CurvatureReport rep = hessian_trace(params, spec, data, probes, seed);
            py::dict out;
            out["trace_estimate"] = rep.trace_estimate;
            out["trace_stderr"] = rep.trace_stderr ? py::cast(*rep.trace_stderr) : py::none();
            out["probes_used"] = rep.probes_used;
            return out;
        },
        py::arg("params"), py::arg("spec"), py::arg("data"), py::arg("probes") = 100,
        py::arg("seed") = 0);

    py::class_<BezierCurve>(m, "BezierCurve")
        .def_readonly("endpoint_a", &BezierCurve::endpoint_a)
        .def_readonly("endpoint_b", &BezierCurve::endpoint_b)
        .def_readonly("control", &BezierCurve::control);

    m.def("fit_bezier", &fit_bezier, py::arg("a"), py::arg("b"), py::arg("spec"), py::arg("train_data"),
          py::arg("steps") = 100, py::arg("lr") = 0.05, py::arg("seed") = 0);
    m.def("bezier_point", &bezier_point, py::arg("curve"), py::arg("t"));
    m.def(
        "mode_connectivity",
        [](const BezierCurve& curve, const ModelSpec& spec, const Dataset& train_data, int t_grid_size,
           bool argmin) {
            ConnectivityReport rep = mode_connectivity(
                curve, spec, train_data, t_grid_size,
                argmin ? McSelection::min_abs_deviation : McSelection::max_abs_deviation);
            py::dict out;
            out["mc"] = rep.mc;
            out["t_star"] = rep.t_star;
            out["endpoint_mean_loss"] = rep.endpoint_mean_loss;
            out["curve_losses"] = rep.curve_losses;
            return out;
        },
        py::arg("curve"), py::arg("spec"), py::arg("train_data"), py::arg("t_grid_size") = 21,
        py::arg("argmin") = false);
    m.def(
        "cka_similarity",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
            return cka_similarity(matrix_from_numpy(x), matrix_from_numpy(y)).cka;
        },
        py::arg("logits_x"), py::arg("logits_y"));

    py::enum_<PhaseLabel>(m, "PhaseLabel")
        .value("I", PhaseLabel::I)
        .value("II", PhaseLabel::II)
        .value("III", PhaseLabel::III)
        .value("IVA", PhaseLabel::IV_A)
        .value("IVB", PhaseLabel::IV_B);

    py::class_<MetricRecord>(m, "MetricRecord")
        .def(py::init<>())
        .def_readwrite("train_loss", &MetricRecord::train_loss)
        .def_readwrite("test_acc", &MetricRecord::test_acc)
        .def_readwrite("generalization_gap", &MetricRecord::generalization_gap)
        .def_readwrite("lambda_max", &MetricRecord::lambda_max)
        .def_readwrite("hessian_trace", &MetricRecord::hessian_trace)
        .def_readwrite("mc", &MetricRecord::mc)
        .def_readwrite("cka", &MetricRecord::cka);

    py::class_<PhaseThresholds>(m, "PhaseThresholds")
        .def(py::init<>())
        .def_readwrite("tau_loss", &PhaseThresholds::tau_loss)
        .def_readwrite("tau_mc", &PhaseThresholds::tau_mc)
        .def_readwrite("tau_cka", &PhaseThresholds::tau_cka)
        .def_readwrite("tau_trace", &PhaseThresholds::tau_trace)
        .def_readonly("fit_accuracy", &PhaseThresholds::fit_accuracy)
        .def_readonly("low_confidence", &PhaseThresholds::low_confidence)
        .def_readonly("provisional", &PhaseThresholds::provisional);

    m.def("classify", &classify, py::arg("record"), py::arg("thresholds"));
    m.def(
        "fit_thresholds",
        [](const std::vector<MetricRecord>& records, const std::vector<PhaseLabel>& labels) {
            return fit_thresholds(records, labels, FitBounds::from_records(records));
        },
        py::arg("records"), py::arg("labels"));
    m.def("bootstrap_thresholds", &bootstrap_thresholds, py::arg("records"));

    m.def("prune_magnitude", &prune_magnitude, py::arg("params"), py::arg("sparsity"));
    m.def("ensemble_accuracy", &ensemble_accuracy, py::arg("models"), py::arg("spec"), py::arg("data"));
    m.def("average_naive", &average_naive, py::arg("models"));
    m.def("interpolate", &interpolate, py::arg("a"), py::arg("b"), py::arg("alpha"));
    m.def("average_epochs", &average_epochs, py::arg("run"), py::arg("last_k"));
    m.def(
        "align_permutations",
        [](const ParameterVector& reference, const ParameterVector& candidate, const ModelSpec& spec) {
            auto [map, aligned] = align_permutations(reference, candidate, spec);
            return py::make_tuple(map.layer_perms, aligned);
        },
        py::arg("reference"), py::arg("candidate"), py::arg("spec"));
    m.def(
        "finetune",
        [](const ParameterVector& params, const ModelSpec& spec, const DataPair& target,
           const TrainConfig& config, bool reinit_head) {
            FinetuneResult res = finetune(params, spec, target, config, reinit_head);
            return py::make_tuple(res.spec, res.run);
        },
        py::arg("params"), py::arg("spec"), py::arg("target"), py::arg("config"),
        py::arg("reinit_head") = true);

    m.def(
        "save_checkpoint",
        [](const std::string& dir, const ParameterVector& params) { save_checkpoint(dir, params); },
        py::arg("dir"), py::arg("params"));
    m.def(
        "load_checkpoint", [](const std::string& dir) { return load_checkpoint(dir); }, py::arg("dir"));

    m.def(
        "weight_features",
        [](const ParameterVector& params) {
            WeightFeatures wf = weight_features(params);
            return py::make_tuple(numpy_from_vector(wf.values), wf.feature_names);
        },
        py::arg("params"));
    m.def(
        "fit_ridge",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const std::vector<double>& y, double lam) {
            RidgeModel model = fit_ridge(matrix_from_numpy(x), y, lam);
            return py::make_tuple(numpy_from_vector(model.weights), model.intercept);
        },
        py::arg("features"), py::arg("targets"), py::arg("lambda_"));
    m.def("r2_score", &r2_score, py::arg("pred"), py::arg("truth"));
}
