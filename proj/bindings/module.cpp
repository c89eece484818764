#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qstar/gradcheck_suite.hpp"
#include "qstar/train.hpp"

namespace py = pybind11;
using namespace qstar;

namespace {

std::vector<double> softmax_vec(const std::vector<double>& values) {
    Tensor x = Tensor::from_data({static_cast<int64_t>(values.size())}, values);
    return softmax(x, 0).data();
}

py::dict forward_one(const RunConfig& config, int64_t index) {
    config.validate();
    DataDims dims = config.data_dims();
    Codebooks books = Codebooks::init(config.seed, dims);
    auto bundles = make_dataset(mix_seed(config.seed, 0x9e4d), index + 1, dims, books);
    ModelParams params = build_model(config);
    RunContext ctx;
    AnswerDistribution dist = model_forward(params, config, bundles[index], ctx);
    py::dict out;
    out["probabilities"] = dist.probabilities;
    out["argmax"] = dist.argmax;
    out["label"] = bundles[index].label;
    out["question_type"] = modality_tag_name(bundles[index].question_type);
    return out;
}

py::dict train_run(const RunConfig& config, bool verbose) {
    RunReport report = run_training(config, verbose);
    py::dict out;
    out["overall_acc"] = report.final_eval.accuracy;
    out["mean_loss"] = report.final_eval.mean_loss;
    out["parameter_count"] = report.parameter_count;
    py::dict by_type;
    for (const auto& [tag, counts] : report.final_eval.by_type) {
        by_type[py::str(tag)] =
            py::make_tuple(counts.first, counts.second);
    }
    out["by_type"] = by_type;
    out["report"] = report_to_text(report);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "qstar: desk-scale audio-visual question answering";

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("t", &RunConfig::t)
        .def_readwrite("d", &RunConfig::d)
        .def_readwrite("m_prime", &RunConfig::m_prime)
        .def_readwrite("n", &RunConfig::n)
        .def_readwrite("f", &RunConfig::f)
        .def_readwrite("heads", &RunConfig::heads)
        .def_readwrite("hidden", &RunConfig::hidden)
        .def_readwrite("vocab", &RunConfig::vocab)
        .def_readwrite("learning_rate", &RunConfig::learning_rate)
        .def_readwrite("decay_factor", &RunConfig::decay_factor)
        .def_readwrite("decay_period", &RunConfig::decay_period)
        .def_readwrite("batch_size", &RunConfig::batch_size)
        .def_readwrite("epochs", &RunConfig::epochs)
        .def_readwrite("disable_qgmc", &RunConfig::disable_qgmc)
        .def_readwrite("disable_sti", &RunConfig::disable_sti)
        .def_readwrite("disable_tfi", &RunConfig::disable_tfi)
        .def_readwrite("disable_qcr", &RunConfig::disable_qcr)
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("train_samples", &RunConfig::train_samples)
        .def_readwrite("val_samples", &RunConfig::val_samples)
        .def("validate", &RunConfig::validate);

    m.def("parse_config_text", &parse_config_text, py::arg("text"));
    m.def("config_to_text", &config_to_text, py::arg("config"));
    m.def("answer_vocabulary", [] { return answer_vocabulary(); });
    m.def("softmax", &softmax_vec, py::arg("values"));
    m.def("forward", &forward_one, py::arg("config"), py::arg("index") = 0,
          "initialize a model and run one synthetic sample through it");
    m.def("train", &train_run, py::arg("config"), py::arg("verbose") = false);
    m.def(
        "gradcheck",
        [](uint64_t seed) {
            py::list out;
            for (const auto& rep : run_gradcheck_suite(seed)) {
                out.append(py::make_tuple(rep.op_name, rep.max_rel_error, rep.passed));
            }
            return out;
        },
        py::arg("seed") = 0);

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<NumericalError>(m, "NumericalError");
    py::register_exception<FormatError>(m, "FormatError");
}
