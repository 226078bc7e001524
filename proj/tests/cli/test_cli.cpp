#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "json.hpp"
#include "snas/cli.hpp"

namespace fs = std::filesystem;
using namespace snas;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "snas_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Run run(const std::string& args, const std::string& env = "") {
    const fs::path base = fs::temp_directory_path() / "snas_cli_tests";
    fs::create_directories(base);
    const fs::path out = base / "stdout.txt", err = base / "stderr.txt";
    const std::string cmd = env + " " + SNAS_EXE + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// A few epochs on a small planted task.
std::string quick(const fs::path& out, const std::string& extra = "") {
    return "search --set epochs=3 --set planted_train=128 --set planted_val=64 --out " + out.string() + " " + extra;
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "manifest.json")); }

/// Metrics text without the wall-time column.
std::string metrics_without_wall(const fs::path& dir) {
    std::istringstream in(slurp(dir / "metrics.csv"));
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
}

}  // namespace

TEST_CASE("search writes the full run directory") {
    const fs::path dir = scratch("contract") / "run";
    const Run r = run(quick(dir));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const char* f : {"manifest.json", "config.txt", "metrics.csv", "credits.csv", "genotype.txt",
                          "genotype_history.txt", "checkpoint.bin"}) {
        CHECK_MESSAGE(fs::exists(dir / f), f);
    }
    const auto m = manifest(dir);
    CHECK(m["status"] == "ok");
    CHECK(m["epochs_completed"] == 3);
    CHECK(m["config"]["epochs"] == "3");
    CHECK(m["mode"] == "snas");
    for (const auto& f : m["outputs"]) CHECK(fs::exists(dir / f.get<std::string>()));
    std::istringstream metrics(slurp(dir / "metrics.csv"));
    std::string header;
    std::getline(metrics, header);
    CHECK(header == kMetricsHeader);
    CHECK_FALSE(fs::exists(dir / "metrics.csv.tmp"));

    // The snapshot alone reproduces the resolved configuration.
    RunConfig c;
    for (const auto& [k, v] : parse_config_text(slurp(dir / "config.txt"))) apply_setting(c, k, v);
    CHECK(render_config(c) == slurp(dir / "config.txt"));
}

TEST_CASE("the seed determines every output except wall time") {
    const fs::path base = scratch("determinism");
    const fs::path dir = base / "run";
    REQUIRE(run(quick(dir, "--seed 11")).code == 0);
    fs::rename(dir, base / "first");
    REQUIRE(run(quick(dir, "--seed 11")).code == 0);
    for (const char* f : {"config.txt", "credits.csv", "genotype.txt", "genotype_history.txt", "checkpoint.bin"}) {
        CHECK_MESSAGE(slurp(dir / f) == slurp(base / "first" / f), f);
    }
    CHECK(metrics_without_wall(dir) == metrics_without_wall(base / "first"));
    auto a = manifest(dir), b = manifest(base / "first");
    a.erase("wall_s");
    b.erase("wall_s");
    CHECK(a == b);

    REQUIRE(run(quick(base / "other", "--seed 12")).code == 0);
    CHECK(slurp(base / "other" / "checkpoint.bin") != slurp(dir / "checkpoint.bin"));
}

TEST_CASE("mode flag is recorded in the manifest") {
    for (const char* mode : {"darts_attention", "reinforce_constant"}) {
        const fs::path dir = scratch(std::string("mode_") + mode);
        const Run r = run(quick(dir, std::string("--mode ") + mode));
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(manifest(dir)["mode"] == mode);
        CHECK(slurp(dir / "config.txt").find(std::string("mode = ") + mode) != std::string::npos);
    }
}

TEST_CASE("configuration errors exit with code 2") {
    const fs::path dir = scratch("config_errors");
    const Run missing = run("search --config " + (dir / "absent.conf").string());
    CHECK(missing.code == exit_code::config);
    CHECK(missing.err.find((dir / "absent.conf").string()) != std::string::npos);

    std::ofstream(dir / "bad.conf") << "epochs = 3\nlearning_rate = 0.1\n";
    const Run unknown = run("search --config " + (dir / "bad.conf").string());
    CHECK(unknown.code == exit_code::config);
    CHECK(unknown.err.find("learning_rate") != std::string::npos);

    std::ofstream(dir / "dup.conf") << "epochs = 3\nepochs = 4\n";
    CHECK(run("search --config " + (dir / "dup.conf").string()).code == exit_code::config);
    CHECK(run("search --set epochs=abc").code == exit_code::config);
    CHECK(run("search --mode bilevel").code == exit_code::config);
    CHECK(run("search --set planted_normal=skip").code == exit_code::config);
    CHECK(run("frobnicate").code == exit_code::config);
    CHECK(run("").code == exit_code::config);
}

TEST_CASE("config file, environment and flags apply in that order") {
    const fs::path dir = scratch("precedence");
    std::ofstream(dir / "run.conf") << "# small\nepochs = 5\nplanted_train = 128\nplanted_val = 64\nseed = 3\n";
    const Run r = run("search --config " + (dir / "run.conf").string() + " --seed 4 --out " + (dir / "run").string(),
                      "SNAS_EPOCHS=2 SNAS_SEED=9");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto m = manifest(dir / "run");
    CHECK(m["epochs_completed"] == 2);
    CHECK(m["seed"] == 4);
}

TEST_CASE("derive and eval reproduce the final epoch") {
    const fs::path dir = scratch("derive_eval") / "run";
    REQUIRE(run(quick(dir)).code == 0);
    const Run d = run("derive --run " + dir.string() + " --dot " + (dir / "cells.dot").string());
    REQUIRE(d.code == 0);
    CHECK(d.out == slurp(dir / "genotype.txt"));
    const std::string dot = slurp(dir / "cells.dot");
    CHECK(dot.rfind("digraph", 0) == 0);
    CHECK(std::count(dot.begin(), dot.end(), '{') == std::count(dot.begin(), dot.end(), '}'));

    const Run e = run("eval --run " + dir.string());
    REQUIRE(e.code == 0);
    const double final_child = manifest(dir)["final"]["child_val_acc"].get<double>();
    CHECK(std::stod(e.out.substr(e.out.find(' ') + 1)) == final_child);

    const Run rt = run("retrain --run " + dir.string() + " --set epochs=2");
    CHECK(rt.code == 0);
    CHECK(rt.out.rfind("retrain_val_acc ", 0) == 0);
}

TEST_CASE("corrupt or missing checkpoints exit with code 3") {
    const fs::path dir = scratch("corrupt") / "run";
    REQUIRE(run(quick(dir)).code == 0);
    std::string bytes = slurp(dir / "checkpoint.bin");
    std::ofstream(dir / "checkpoint.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK(run("eval --run " + dir.string()).code == exit_code::data);
    CHECK(run("derive --run " + dir.string()).code == exit_code::data);
    bytes[0] = 'X';
    std::ofstream(dir / "checkpoint.bin", std::ios::binary) << bytes;
    CHECK(run("derive --run " + dir.string()).code == exit_code::data);
    fs::remove(dir / "checkpoint.bin");
    CHECK(run("eval --run " + dir.string()).code == exit_code::data);
    CHECK(run("eval --run " + (dir / "nowhere").string()).code == exit_code::config);
}

TEST_CASE("a diverging search exits with code 4 and leaves a diagnostic") {
    const fs::path dir = scratch("diverge") / "run";
    const Run r = run(quick(dir, "--set lr=1e30"));
    CHECK(r.code == exit_code::numerical);
    CHECK(fs::exists(dir / "diagnostic.txt"));
    CHECK(manifest(dir)["status"] == "numerical_abort");
}

TEST_CASE("cifar runs read binary batches from the data directory") {
    const fs::path dir = scratch("cifar");
    CHECK(run("search --set dataset=cifar --set in_channels=3 --set num_classes=10 --set image_size=8 --data-dir " +
              (dir / "absent").string())
              .code == exit_code::data);

    Rng rng(5);
    std::vector<CifarRecord> records(60);
    for (auto& r : records) {
        r.label = static_cast<std::uint8_t>(rng() % 10);
        for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng() % 256);
    }
    fs::create_directories(dir / "data");
    write_cifar_binary(dir / "data" / "data_batch_1.bin", records);
    const Run r = run("search --set dataset=cifar --set num_classes=10 --set epochs=1 --set batch_size=16 --resize 8 "
                      "--data-dir " + (dir / "data").string() + " --out " + (dir / "run").string());
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto m = manifest(dir / "run");
    CHECK(m["data"]["train_size"] == 48);
    CHECK(m["data"]["val_size"] == 12);
    CHECK(m["data"]["normalization"]["mean"].size() == 3);
}

TEST_CASE("verify is green and notices a flipped credit sign") {
    const Run ok = run("verify");
    CHECK_MESSAGE(ok.code == 0, ok.out);
    CHECK(ok.out.find("attention_bias.relu_pair") != std::string::npos);
    CHECK(ok.out.find("0.25") != std::string::npos);
    const Run broken = run("verify --inject-fault credit-sign");
    CHECK(broken.code == exit_code::verify_failed);
    CHECK(broken.out.find("FAIL") != std::string::npos);
}

TEST_CASE("the planted smoke configuration finishes within five minutes") {
    const fs::path dir = scratch("smoke") / "run";
    const auto start = std::chrono::steady_clock::now();
    const Run r = run("search --config " + std::string(SNAS_CONFIG_DIR) + "/planted.conf --out " + dir.string());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(seconds < 300.0);
    CHECK(manifest(dir)["epochs_completed"] == 30);
}

TEST_CASE("calibrate-eta writes one row per grid value and seed") {
    const fs::path dir = scratch("calibrate");
    const Run r = run("calibrate-eta --seeds 1,2 --grid-start 0.05 --grid-factor 4 --grid-steps 2 --set epochs=3 "
                      "--set planted_train=96 --set planted_val=48 --out " + dir.string());
    CHECK((r.code == exit_code::ok || r.code == exit_code::verify_failed));
    const std::string csv = slurp(dir / "calibration.csv");
    CHECK(csv.rfind("eta,seed,zero_edges,expected_cost,child_val_acc\n", 0) == 0);
    const auto rows = std::count(csv.begin(), csv.end(), '\n') - 1;
    CHECK(rows >= 2);
    CHECK(rows <= 4);
    CHECK(run("calibrate-eta --seeds 1,x").code == exit_code::config);
}
