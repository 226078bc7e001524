#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "snas/cli.hpp"
#include "snas/verify.hpp"

namespace snas {

namespace {

using json = nlohmann::json;

struct Overrides {
    std::string config_path;
    std::vector<std::string> sets;
    std::string mode;
    std::optional<std::uint64_t> seed;
    std::string data_dir;
    std::optional<std::size_t> take;
    std::optional<std::size_t> resize;
    std::string out;
};

void add_config_options(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config_path, "Run configuration file (key = value lines)");
    cmd->add_option("--set", o.sets, "Override one setting, key=value (repeatable)");
    cmd->add_option("--mode", o.mode, "snas, darts_attention or reinforce_constant");
    cmd->add_option("--seed", o.seed, "Seed for data, initialization and sampling");
    cmd->add_option("--data-dir", o.data_dir, "Directory holding the CIFAR-10 binary batches");
    cmd->add_option("--take", o.take, "Number of CIFAR training images to read, 0 = all");
    cmd->add_option("--resize", o.resize, "CIFAR image side after downsampling");
    cmd->add_option("-o,--out", o.out, "Output directory");
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig resolve_config(const Overrides& o) {
    RunConfig config;
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path, std::ios::binary);
        if (!in) throw ConfigError("cannot read config file: " + o.config_path);
        std::ostringstream ss;
        ss << in.rdbuf();
        for (const auto& [k, v] : parse_config_text(ss.str(), o.config_path)) apply_setting(config, k, v);
    }
    for (const auto& [k, v] : environment_settings()) apply_setting(config, k, v);
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
    }
    if (!o.mode.empty()) apply_setting(config, "mode", o.mode);
    if (o.seed) apply_setting(config, "seed", std::to_string(*o.seed));
    if (!o.data_dir.empty()) config.data_dir = o.data_dir;
    if (o.take) config.take = *o.take;
    if (o.resize) {
        config.resize = *o.resize;
        config.network.image_size = *o.resize;
    }
    if (!o.out.empty()) config.out_dir = o.out;
    validate_config(config);
    return config;
}

/// Config snapshot of a finished run, with command-line overrides on top.
RunConfig run_config(const std::filesystem::path& run_dir, Overrides o) {
    const auto path = run_dir / "config.txt";
    if (!std::filesystem::exists(path)) throw ConfigError("no config snapshot in run directory: " + path.string());
    o.config_path = path.string();
    o.out = run_dir.string();
    return resolve_config(o);
}

json genotype_json(const Genotype& g) {
    json out = json::object();
    for (const auto& [name, ops] : {std::pair{"normal", &g.normal}, std::pair{"reduce", &g.reduce}}) {
        json arr = json::array();
        for (OpKind k : *ops) arr.push_back(std::string(op_name(k)));
        out[name] = arr;
    }
    return out;
}

json config_json(const RunConfig& config) {
    json out = json::object();
    std::istringstream in(render_config(config));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        out[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return out;
}

json row_json(const MetricsRow& r) {
    return json{{"epoch", r.epoch},
                {"train_loss", r.train_loss},
                {"search_val_acc", r.search_val_acc},
                {"child_val_acc", r.child_val_acc},
                {"mean_entropy", r.mean_entropy},
                {"expected_cost", r.expected_cost},
                {"temperature", r.temperature}};
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

template <typename T>
int search_impl(const RunConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    const RunData data = load_run_data(config);
    const auto& dir = config.out_dir;
    std::filesystem::create_directories(dir);
    write_text_atomic(dir / "config.txt", render_config(config));

    const NetworkSpec spec(config.network);
    std::vector<MetricsRow> rows;
    SearchHooks hooks;
    hooks.diagnostic_dir = dir;
    hooks.on_epoch = [&](const MetricsRow& r) {
        rows.push_back(r);
        write_text_atomic(dir / "metrics.csv", metrics_csv(rows));
        std::fprintf(stderr, "epoch %zu loss %.4f search_acc %.4f child_acc %.4f entropy %.4f cost %.4g temp %.3f\n",
                     r.epoch, r.train_loss, r.search_val_acc, r.child_val_acc, r.mean_entropy, r.expected_cost,
                     r.temperature);
    };

    json manifest = {{"command", "search"},
                     {"mode", std::string(mode_name(config.train.mode))},
                     {"seed", config.train.seed},
                     {"precision", config.precision == Precision::f32 ? "float" : "double"},
                     {"config", config_json(config)},
                     {"data", {{"train_size", data.train.size()}, {"val_size", data.val.size()}}}};
    if (config.dataset == DatasetKind::cifar) {
        manifest["data"]["normalization"] = {{"mean", data.normalization.mean}, {"std", data.normalization.stddev}};
    } else {
        manifest["data"]["planted_genotype"] = genotype_json(data.planted_genotype);
    }

    SearchResult result;
    try {
        result = run_search<T>(config.network, config.train, data.train, data.val, hooks);
    } catch (const NumericalError&) {
        manifest["status"] = "numerical_abort";
        manifest["epochs_completed"] = rows.size();
        manifest["outputs"] = {"config.txt", "diagnostic.txt", "manifest.json", "metrics.csv"};
        write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
        throw;
    }

    write_text_atomic(dir / "metrics.csv", metrics_csv(result.metrics));
    write_text_atomic(dir / "credits.csv", credits_csv(result.credits, spec.graph()));
    write_text_atomic(dir / "genotype.txt", render_genotype_text(result.genotype, spec.graph()));
    std::string history;
    for (std::size_t e = 0; e < result.genotype_history.size(); ++e) {
        std::istringstream in(render_genotype_text(result.genotype_history[e], spec.graph()));
        std::string line;
        while (std::getline(in, line)) history += std::to_string(e) + " " + line + "\n";
    }
    write_text_atomic(dir / "genotype_history.txt", history);
    write_checkpoint(dir / "checkpoint.bin", result.checkpoint);

    manifest["status"] = "ok";
    manifest["epochs_completed"] = result.metrics.size();
    manifest["final"] = row_json(result.metrics.back());
    manifest["genotype"] = genotype_json(result.genotype);
    auto zeros = [](const std::vector<OpKind>& ops) { return std::count(ops.begin(), ops.end(), OpKind::zero); };
    manifest["zero_edges"] = {{"normal", zeros(result.genotype.normal)}};
    if (spec.has_reduction()) manifest["zero_edges"]["reduce"] = zeros(result.genotype.reduce);
    if (config.dataset == DatasetKind::planted) {
        manifest["epochs_to_recovery"] =
            epochs_to_recovery(result.genotype_history, data.planted_genotype, config.network.reduction_cells);
        manifest["recovered"] = config.network.reduction_cells
                                    ? result.genotype == data.planted_genotype
                                    : result.genotype.normal == data.planted_genotype.normal;
    }
    manifest["outputs"] = {"checkpoint.bin", "config.txt",   "credits.csv", "genotype.txt",
                           "genotype_history.txt", "manifest.json", "metrics.csv"};
    manifest["wall_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

    std::cout << render_genotype_text(result.genotype, spec.graph());
    const auto& last = result.metrics.back();
    std::cout << "search_val_acc " << fmt(last.search_val_acc) << "\nchild_val_acc " << fmt(last.child_val_acc)
              << "\nrun " << dir.string() << "\n";
    return exit_code::ok;
}

std::filesystem::path checkpoint_path(const std::string& run, const std::string& checkpoint) {
    if (!checkpoint.empty()) return checkpoint;
    return std::filesystem::path(run) / "checkpoint.bin";
}

template <typename T>
std::unique_ptr<Search<T>> load_search(const RunConfig& config, const std::filesystem::path& ckpt) {
    const auto arrays = read_checkpoint(ckpt);
    auto search = std::make_unique<Search<T>>(config.network, config.train);
    search->load(arrays);
    return search;
}

template <typename T>
int derive_impl(const RunConfig& config, const std::filesystem::path& ckpt, const std::string& dot) {
    const auto search = load_search<T>(config, ckpt);
    const Genotype g = search->genotype();
    const ParentGraph& graph = search->network().spec().graph();
    std::cout << render_genotype_text(g, graph);
    if (!dot.empty()) write_text_atomic(dot, render_genotype_dot(g, graph));
    return exit_code::ok;
}

template <typename T>
int eval_impl(const RunConfig& config, const std::filesystem::path& ckpt) {
    const auto search = load_search<T>(config, ckpt);
    const RunData data = load_run_data(config);
    const double acc = evaluate(search->network(), search->genotype(), data.val, config.train.batch_size);
    std::cout << "child_val_acc " << fmt(acc) << "\n";
    return exit_code::ok;
}

template <typename T>
int retrain_impl(const RunConfig& config, const Genotype& genotype) {
    const RunData data = load_run_data(config);
    const double acc = train_child<T>(config.network, genotype, config.train, data.train, data.val);
    std::cout << "retrain_val_acc " << fmt(acc) << "\n";
    return exit_code::ok;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            seeds.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError("--seeds expects a comma-separated list of integers, got '" + text + "'");
        }
    }
    if (seeds.empty()) throw ConfigError("--seeds is empty");
    return seeds;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Stochastic neural architecture search on small image tasks"};
    app.require_subcommand(1);

    Overrides search_o, derive_o, eval_o, retrain_o, cal_o;
    auto* search = app.add_subcommand("search", "Run an architecture search and write a run directory");
    add_config_options(search, search_o);

    std::string derive_run, derive_ckpt, dot;
    auto* derive = app.add_subcommand("derive", "Print the genotype stored in a checkpoint");
    add_config_options(derive, derive_o);
    derive->add_option("--run", derive_run, "Run directory written by search");
    derive->add_option("--checkpoint", derive_ckpt, "Checkpoint file (default RUN/checkpoint.bin)");
    derive->add_option("--dot", dot, "Also write a Graphviz file");

    std::string eval_run, eval_ckpt;
    auto* eval = app.add_subcommand("eval", "Validation accuracy of the derived child without fine-tuning");
    add_config_options(eval, eval_o);
    eval->add_option("--run", eval_run, "Run directory written by search");
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file (default RUN/checkpoint.bin)");

    std::uint64_t verify_seed = 1;
    std::string fault;
    std::string report_path;
    auto* verify = app.add_subcommand("verify", "Run the numerical checks at 64-bit");
    verify->add_option("--seed", verify_seed, "Seed for the synthetic problems");
    verify->add_option("--inject-fault", fault, "Deliberately break a component (credit-sign)")
        ->check(CLI::IsMember({"credit-sign"}));
    verify->add_option("--report", report_path, "Also write the report to this file");

    std::string retrain_run, genotype_file;
    auto* retrain = app.add_subcommand("retrain", "Train a derived child from scratch at desk scale");
    add_config_options(retrain, retrain_o);
    retrain->add_option("--run", retrain_run, "Run directory written by search");
    retrain->add_option("--genotype", genotype_file, "Genotype text file (default RUN/genotype.txt)");

    std::string seeds_text = "1,2,3";
    double grid_start = 1e-4, grid_factor = 2.0;
    std::size_t grid_steps = 12;
    auto* calibrate = app.add_subcommand("calibrate-eta", "Place the constraint presets on the planted task");
    add_config_options(calibrate, cal_o);
    calibrate->add_option("--seeds", seeds_text, "Comma-separated seeds");
    calibrate->add_option("--grid-start", grid_start, "Smallest eta tried");
    calibrate->add_option("--grid-factor", grid_factor, "Ratio between grid values");
    calibrate->add_option("--grid-steps", grid_steps, "Number of grid values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_code::ok : exit_code::config;
    }

    auto dispatch = [](const RunConfig& c, auto&& fn) {
        return c.precision == Precision::f32 ? fn(float{}) : fn(double{});
    };

    try {
        if (search->parsed()) {
            const RunConfig c = resolve_config(search_o);
            return dispatch(c, [&](auto t) { return search_impl<decltype(t)>(c); });
        }
        if (derive->parsed() || eval->parsed()) {
            const bool is_derive = derive->parsed();
            Overrides o = is_derive ? derive_o : eval_o;
            const std::string& run = is_derive ? derive_run : eval_run;
            const std::string& ckpt = is_derive ? derive_ckpt : eval_ckpt;
            if (run.empty() && (ckpt.empty() || o.config_path.empty())) {
                throw ConfigError("give --run DIR, or --checkpoint FILE with --config FILE");
            }
            const RunConfig c = run.empty() ? resolve_config(o) : run_config(run, o);
            const auto path = checkpoint_path(run, ckpt);
            return dispatch(c, [&](auto t) {
                return is_derive ? derive_impl<decltype(t)>(c, path, dot) : eval_impl<decltype(t)>(c, path);
            });
        }
        if (verify->parsed()) {
            VerifyOptions options;
            options.seed = verify_seed;
            std::optional<CreditSignFault> injected;
            if (fault == "credit-sign") injected.emplace();
            const auto results = run_all_checks(options);
            const std::string report = format_report(results);
            std::cout << report;
            if (!report_path.empty()) write_text_atomic(report_path, report);
            for (const auto& r : results) {
                if (!r.pass) return exit_code::verify_failed;
            }
            return exit_code::ok;
        }
        if (retrain->parsed()) {
            if (retrain_run.empty() && (genotype_file.empty() || retrain_o.config_path.empty())) {
                throw ConfigError("give --run DIR, or --genotype FILE with --config FILE");
            }
            const RunConfig c = retrain_run.empty() ? resolve_config(retrain_o) : run_config(retrain_run, retrain_o);
            const std::filesystem::path gpath =
                genotype_file.empty() ? std::filesystem::path(retrain_run) / "genotype.txt"
                                      : std::filesystem::path(genotype_file);
            std::string text;
            try {
                text = read_text(gpath);
            } catch (const std::runtime_error& e) {
                throw DataError(e.what());
            }
            const Genotype g = parse_genotype_text(text, NetworkSpec(c.network).graph());
            return dispatch(c, [&](auto t) { return retrain_impl<decltype(t)>(c, g); });
        }
        if (calibrate->parsed()) {
            const RunConfig c = resolve_config(cal_o);
            if (c.dataset != DatasetKind::planted) throw ConfigError("calibrate-eta runs on the planted dataset");
            if (!(grid_start > 0.0) || !(grid_factor > 1.0) || grid_steps == 0) {
                throw ConfigError("grid needs start > 0, factor > 1 and at least one step");
            }
            const auto seeds = parse_seed_list(seeds_text);
            std::vector<double> grid;
            for (std::size_t i = 0; i < grid_steps; ++i) grid.push_back(grid_start * std::pow(grid_factor, double(i)));
            PlantedTaskConfig task = c.planted;
            task.network = c.network;
            std::string csv = "eta,seed,zero_edges,expected_cost,child_val_acc\n";
            const auto cal = calibrate_eta(task, c.train, grid, seeds, [&](const EtaTrial& t) {
                const std::string line = fmt(t.eta) + "," + std::to_string(t.seed) + "," +
                                         std::to_string(t.zero_edges) + "," + fmt(t.expected_cost) + "," +
                                         fmt(t.child_val_acc) + "\n";
                std::cout << line << std::flush;
                csv += line;
            });
            std::filesystem::create_directories(c.out_dir);
            write_text_atomic(c.out_dir / "calibration.csv", csv);
            if (!cal.complete) {
                std::cout << "grid too short: no value zeroes half the edges on every seed\n";
                return exit_code::verify_failed;
            }
            std::cout << "mild " << fmt(cal.mild) << "\nmoderate " << fmt(cal.moderate) << "\naggressive "
                      << fmt(cal.aggressive) << "\n";
            return exit_code::ok;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return exit_code::numerical;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_code::data;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return exit_code::data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code::data;
    }
    return exit_code::ok;
}

}  // namespace snas
