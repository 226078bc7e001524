#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "snas/cli.hpp"
#include "snas/verify.hpp"

namespace py = pybind11;
using namespace snas;

namespace {

std::vector<std::string> op_list(const std::vector<OpKind>& ops) {
    std::vector<std::string> out;
    for (OpKind k : ops) out.emplace_back(op_name(k));
    return out;
}

py::dict genotype_dict(const Genotype& g) {
    py::dict d;
    d["normal"] = op_list(g.normal);
    d["reduce"] = op_list(g.reduce);
    return d;
}

int cli(const std::vector<std::string>& args) {
    std::vector<std::string> storage{"snas"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    py::gil_scoped_release release;
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

py::list verify(std::uint64_t seed, bool quick) {
    VerifyOptions options;
    options.seed = seed;
    if (quick) {
        options.gradient_cells = 4;
        options.estimator_samples = 20000;
        options.limit_samples = 20000;
        options.expected_cost_samples = 20000;
    }
    std::vector<CheckResult> results;
    {
        py::gil_scoped_release release;
        results = run_all_checks(options);
    }
    py::list out;
    for (const auto& r : results) {
        py::dict d;
        d["name"] = r.name;
        d["value"] = r.value;
        d["tolerance"] = r.tolerance;
        d["pass"] = r.pass;
        d["detail"] = r.detail;
        out.append(d);
    }
    return out;
}

py::dict search_planted(std::uint64_t seed, const std::string& mode, double eta, std::size_t epochs,
                        std::size_t num_train, std::size_t num_val) {
    const auto m = parse_mode(mode);
    if (!m) throw py::value_error("unknown mode '" + mode + "'");
    PlantedTaskConfig tc = planted_defaults(seed);
    tc.num_train = num_train;
    tc.num_val = num_val;
    TrainConfig train = planted_train_defaults(seed, *m);
    train.epochs = epochs;
    train.resource.eta = eta;
    SearchResult r;
    PlantedTask task;
    {
        py::gil_scoped_release release;
        task = make_planted_task(tc);
        r = run_search<float>(task.network, train, task.train, task.val);
    }
    py::list metrics;
    for (const auto& row : r.metrics) {
        py::dict d;
        d["epoch"] = row.epoch;
        d["train_loss"] = row.train_loss;
        d["search_val_acc"] = row.search_val_acc;
        d["child_val_acc"] = row.child_val_acc;
        d["mean_entropy"] = row.mean_entropy;
        d["expected_cost"] = row.expected_cost;
        d["temperature"] = row.temperature;
        metrics.append(d);
    }
    py::dict out;
    out["metrics"] = metrics;
    out["genotype"] = genotype_dict(r.genotype);
    out["planted_genotype"] = genotype_dict(task.genotype);
    out["epochs_to_recovery"] = epochs_to_recovery(r.genotype_history, task.genotype, false);
    return out;
}

py::dict resolve_config(const std::string& text) {
    RunConfig c;
    try {
        for (const auto& [k, v] : parse_config_text(text)) apply_setting(c, k, v);
        validate_config(c);
    } catch (const ConfigError& e) {
        throw py::value_error(e.what());
    }
    py::dict out;
    std::istringstream in(render_config(c));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        out[py::str(line.substr(0, eq))] = line.substr(eq + 3);
    }
    return out;
}

py::dict load_checkpoint(const std::string& path) {
    py::dict out;
    for (const auto& a : read_checkpoint(path)) {
        std::vector<py::ssize_t> shape(a.shape.begin(), a.shape.end());
        if (a.dtype() == DType::f32) {
            const auto& v = std::get<std::vector<float>>(a.values);
            py::array_t<float> arr(shape);
            std::copy(v.begin(), v.end(), arr.mutable_data());
            out[py::str(a.name)] = arr;
        } else {
            const auto& v = std::get<std::vector<double>>(a.values);
            py::array_t<double> arr(shape);
            std::copy(v.begin(), v.end(), arr.mutable_data());
            out[py::str(a.name)] = arr;
        }
    }
    return out;
}

py::array_t<double> sample_concrete(py::array_t<double, py::array::c_style | py::array::forcecast> logits,
                                    double temperature, std::uint64_t seed) {
    if (logits.ndim() != 2) throw py::value_error("logits must be 2-D (edges x ops)");
    const auto rows = static_cast<std::size_t>(logits.shape(0)), cols = static_cast<std::size_t>(logits.shape(1));
    Tensor<double> t(Shape{rows, cols}, std::vector<double>(logits.data(), logits.data() + rows * cols));
    Rng rng(seed);
    const auto s = sample<double>(t, temperature, rng);
    py::array_t<double> out({logits.shape(0), logits.shape(1)});
    std::copy(s.z.data().begin(), s.z.data().end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(snas, m) {
    m.doc() = "Stochastic neural architecture search engine";

    m.def("run_cli", &cli, py::arg("args"), "Run the command-line tool with `args`; returns the exit code.");
    m.def("verify", &verify, py::arg("seed") = 1, py::arg("quick") = false,
          "Numerical checks at 64-bit, one dict per check.");
    m.def("search_planted", &search_planted, py::arg("seed") = 1, py::arg("mode") = "snas", py::arg("eta") = 0.0,
          py::arg("epochs") = 30, py::arg("num_train") = 1024, py::arg("num_val") = 512,
          "Search the planted teacher task; returns metrics and genotypes.");
    m.def("resolve_config", &resolve_config, py::arg("text"),
          "Parse `key = value` config text and return every resolved setting.");
    m.def("read_checkpoint", &load_checkpoint, py::arg("path"), "Named arrays of a checkpoint as numpy arrays.");
    m.def("sample_concrete", &sample_concrete, py::arg("logits"), py::arg("temperature"), py::arg("seed") = 1,
          "One concrete sample per row of log alpha.");
    m.def(
        "probabilities", [](const std::vector<double>& logits) { return probabilities(logits); }, py::arg("logits"));
    m.def(
        "edge_entropy", [](const std::vector<double>& logits) { return edge_entropy(logits); }, py::arg("logits"));
    m.def(
        "conv_cost",
        [](std::uint64_t f, std::uint64_t k, std::uint64_t in, std::uint64_t out, std::uint64_t h, std::uint64_t w,
           std::uint64_t groups) {
            const OpCost c = conv_layer_cost(ConvLayer{f, k, in, out, groups}, h, w);
            return py::make_tuple(c.params, c.flops, c.mac);
        },
        py::arg("f"), py::arg("k"), py::arg("in_channels"), py::arg("out_channels"), py::arg("h"), py::arg("w"),
        py::arg("groups") = 1, "(params, flops, mac) of one convolution layer.");
    m.def("op_names", [] { return op_list(full_op_set()); });

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
}
