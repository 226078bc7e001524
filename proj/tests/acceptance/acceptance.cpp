// Runs acceptance criteria 1-10 and prints one PASS/FAIL line for each.
// Exit status is 0 only when every criterion passes.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "snas/cli.hpp"
#include "snas/verify.hpp"

using namespace snas;

namespace {

// Pinned tolerances.
constexpr double kFdRelTol = 1e-4;
constexpr double kClosedFormRelTol = 1e-10;
constexpr double kGradientSeconds = 120.0;
constexpr double kStdErrors = 3.0;
constexpr double kEstimatorSeconds = 300.0;
constexpr double kTaylorAbsTol = 1e-10;
constexpr double kConcreteFreqTol = 0.01;
constexpr double kReluPairGap = 0.25;
constexpr double kReluPairTol = 1e-12;
constexpr double kLinearGapTol = 1e-10;
constexpr double kConsistencyGap = 0.02;
constexpr std::size_t kGapWinsNeeded = 8;
constexpr double kSearchMinutes = 30.0;
constexpr double kPostSearchAcc = 0.9;

constexpr std::size_t kPairedSeeds = 10;
const std::vector<std::uint64_t> kSparsitySeeds{1, 2, 3, 4, 5};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Tally {
    int failed = 0;
    void line(int n, bool pass, const std::string& what) {
        std::printf("criterion %2d: %s  %s\n", n, pass ? "PASS" : "FAIL", what.c_str());
        std::fflush(stdout);
        failed += !pass;
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Checks {
    std::vector<CheckResult> results;
    std::map<std::string, double> seconds;

    std::vector<const CheckResult*> with_prefix(const std::string& prefix) const {
        std::vector<const CheckResult*> out;
        for (const auto& r : results) {
            if (r.name.rfind(prefix, 0) == 0) out.push_back(&r);
        }
        return out;
    }
    const CheckResult& named(const std::string& name) const {
        for (const auto& r : results) {
            if (r.name == name) return r;
        }
        throw std::runtime_error("missing check " + name);
    }
};

template <typename Fn>
void timed(Checks& checks, const std::string& group, Fn fn, const VerifyOptions& options) {
    const auto t0 = Clock::now();
    for (auto& r : fn(options)) checks.results.push_back(std::move(r));
    checks.seconds[group] = seconds_since(t0);
}

void print_checks(const std::vector<const CheckResult*>& rs) {
    for (const auto* r : rs) std::printf("      %-40s %.4g  %s\n", r->name.c_str(), r->value, r->pass ? "" : "(suite FAIL)");
}

struct Run {
    SearchResult result;
    Genotype planted;
    double seconds = 0.0;
};

Run search_planted(std::uint64_t seed, SearchMode mode, double eta = 0.0) {
    const PlantedTask task = make_planted_task(planted_defaults(seed));
    TrainConfig train = planted_train_defaults(seed, mode);
    train.resource.eta = eta;
    const auto t0 = Clock::now();
    Run run{run_search<float>(task.network, train, task.train, task.val), task.genotype, 0.0};
    run.seconds = seconds_since(t0);
    return run;
}

double final_gap(const Run& r) {
    const auto& m = r.result.metrics.back();
    return std::abs(m.search_val_acc - m.child_val_acc);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Least-squares slope of y against 0, 1, 2, ...
double slope(const std::vector<double>& y) {
    const double n = static_cast<double>(y.size());
    const double xm = (n - 1.0) / 2.0;
    const double ym = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        num += (double(i) - xm) * (y[i] - ym);
        den += (double(i) - xm) * (double(i) - xm);
    }
    return num / den;
}

bool same_run(const SearchResult& a, const SearchResult& b) {
    if (a.metrics.size() != b.metrics.size() || !(a.genotype == b.genotype) ||
        a.genotype_history != b.genotype_history || a.credits.size() != b.credits.size() ||
        a.checkpoint.size() != b.checkpoint.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        const auto &x = a.metrics[i], &y = b.metrics[i];
        if (x.train_loss != y.train_loss || x.search_val_acc != y.search_val_acc ||
            x.child_val_acc != y.child_val_acc || x.mean_entropy != y.mean_entropy ||
            x.expected_cost != y.expected_cost || x.temperature != y.temperature) {
            return false;
        }
    }
    for (std::size_t i = 0; i < a.credits.size(); ++i) {
        if (a.credits[i].credit != b.credits[i].credit) return false;
    }
    for (std::size_t i = 0; i < a.checkpoint.size(); ++i) {
        if (a.checkpoint[i].name != b.checkpoint[i].name || a.checkpoint[i].values != b.checkpoint[i].values) {
            return false;
        }
    }
    return true;
}

bool cifar_fixture_roundtrip() {
    Rng rng(2024);
    std::vector<CifarRecord> records(37);
    for (auto& r : records) {
        r.label = static_cast<std::uint8_t>(rng() % 10);
        for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng() % 256);
    }
    const auto path = std::filesystem::temp_directory_path() / "snas_acceptance_fixture.bin";
    write_cifar_binary(path, records);
    const auto back = read_cifar_binary(path);
    std::filesystem::remove(path);
    if (back.size() != records.size()) return false;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (back[i].label != records[i].label || back[i].pixels != records[i].pixels) return false;
    }
    const Dataset a = records_to_dataset(records), b = records_to_dataset(back);
    return a.images == b.images && a.labels == b.labels;
}

std::size_t normal_zeros(const Genotype& g) {
    return static_cast<std::size_t>(std::count(g.normal.begin(), g.normal.end(), OpKind::zero));
}

}  // namespace

int main() {
    Tally tally;
    VerifyOptions options;  // 100 cells, 1e5 samples, 1000 cost samples
    Checks checks;
    timed(checks, "gradient", check_gradient_correctness, options);
    timed(checks, "estimator", check_estimator_equivalence, options);
    timed(checks, "taylor", check_taylor_conservation, options);
    timed(checks, "concrete", check_concrete_limit, options);
    timed(checks, "resource", check_resource, options);
    timed(checks, "bias", check_attention_bias, options);
    timed(checks, "io", check_io_roundtrip, options);

    {
        const auto& a = checks.named("gradient.alpha_vs_fd");
        const auto& t = checks.named("gradient.theta_vs_fd");
        const auto& cl = checks.named("gradient.closed_form_log");
        const auto& cd = checks.named("gradient.closed_form_direct");
        const double secs = checks.seconds["gradient"];
        const bool pass = a.value < kFdRelTol && t.value < kFdRelTol && cl.value < kClosedFormRelTol &&
                          cd.value < kClosedFormRelTol && secs < kGradientSeconds;
        tally.line(1, pass,
                   "fd rel err alpha " + fmt("%.3g", a.value) + ", theta " + fmt("%.3g", t.value) + " (< 1e-4); closed form " +
                       fmt("%.3g", std::max(cl.value, cd.value)) + " (< 1e-10); " + fmt("%.1f", secs) + " s");
    }
    {
        bool pass = checks.seconds["estimator"] < kEstimatorSeconds;
        double worst = 0.0;
        std::vector<const CheckResult*> used;
        for (const char* p : {"estimator.score_", "estimator.reparam_"}) {
            for (const auto* r : checks.with_prefix(p)) {
                used.push_back(r);
                worst = std::max(worst, r->value);
                pass = pass && r->value < kStdErrors;
            }
        }
        pass = pass && used.size() >= 6;
        tally.line(2, pass,
                   std::to_string(used.size()) + " estimator means, worst " + fmt("%.3f", worst) +
                       " standard errors (< 3); " + fmt("%.1f", checks.seconds["estimator"]) + " s");
        print_checks(used);
    }
    {
        const auto rs = checks.with_prefix("taylor.");
        bool pass = rs.size() >= 2;
        double worst = 0.0;
        for (const auto* r : rs) {
            worst = std::max(worst, r->value);
            pass = pass && r->value < kTaylorAbsTol;
        }
        tally.line(3, pass, std::to_string(rs.size()) + " networks incl. skip, worst |sum R - f| " + fmt("%.3g", worst));
    }
    {
        const auto rs = checks.with_prefix("concrete_limit.");
        bool pass = !rs.empty();
        double worst = 0.0;
        for (const auto* r : rs) {
            worst = std::max(worst, r->value);
            pass = pass && r->value < kConcreteFreqTol;
        }
        tally.line(4, pass, "max |freq - alpha/sum| " + fmt("%.4f", worst) + " at lambda 0.01 (< 0.01)");
    }
    {
        const auto& walk = checks.named("resource.masked_vs_walk");
        const auto& mc = checks.named("resource.expected_cost_vs_mc");
        const auto& triple = checks.named("resource.reference_triple");
        const bool pass = walk.value == 0.0 && mc.value < kStdErrors && triple.value == 0.0;
        tally.line(5, pass,
                   "masked vs walk max diff " + fmt("%g", walk.value) + "; E[C] vs MC " + fmt("%.3f", mc.value) +
                       " se; triple " + triple.detail);
    }
    {
        const auto& relu = checks.named("attention_bias.relu_pair");
        const auto& lin = checks.named("attention_bias.linear");
        const bool pass = std::abs(relu.value - kReluPairGap) < kReluPairTol && lin.value < kLinearGapTol;
        tally.line(6, pass, "ReLU pair gap " + fmt("%.12g", relu.value) + "; linear gap " + fmt("%.3g", lin.value));
    }

    // Planted searches shared by criteria 7-10.
    const auto search_start = Clock::now();
    std::vector<Run> snas, darts, reinforce;
    for (std::uint64_t seed = 1; seed <= kPairedSeeds; ++seed) {
        snas.push_back(search_planted(seed, SearchMode::snas));
        darts.push_back(search_planted(seed, SearchMode::darts_attention));
        reinforce.push_back(search_planted(seed, SearchMode::reinforce_constant));
        std::printf("      seed %2llu  gap snas %.4f darts %.4f  recovery snas %zu reinforce %zu\n",
                    static_cast<unsigned long long>(seed), final_gap(snas.back()), final_gap(darts.back()),
                    epochs_to_recovery(snas.back().result.genotype_history, snas.back().planted, false),
                    epochs_to_recovery(reinforce.back().result.genotype_history, reinforce.back().planted, false));
        std::fflush(stdout);
    }
    double paired_seconds = 0.0;
    for (const auto* runs : {&snas, &darts}) {
        for (const auto& r : *runs) paired_seconds += r.seconds;
    }

    {
        std::size_t below = 0, wins = 0;
        double worst = 0.0;
        for (std::size_t i = 0; i < kPairedSeeds; ++i) {
            const double g = final_gap(snas[i]);
            worst = std::max(worst, g);
            below += g < kConsistencyGap;
            wins += g < final_gap(darts[i]);
        }
        const bool pass = below == kPairedSeeds && wins >= kGapWinsNeeded && paired_seconds < kSearchMinutes * 60.0;
        tally.line(7, pass,
                   "snas gap < 0.02 on " + std::to_string(below) + "/10 (worst " + fmt("%.4f", worst) +
                       "), smaller than darts on " + std::to_string(wins) + "/10; " + fmt("%.0f", paired_seconds) + " s");
    }
    {
        std::vector<double> rs, rr;
        for (std::size_t i = 0; i < kPairedSeeds; ++i) {
            rs.push_back(double(epochs_to_recovery(snas[i].result.genotype_history, snas[i].planted, false)));
            rr.push_back(double(epochs_to_recovery(reinforce[i].result.genotype_history, reinforce[i].planted, false)));
        }
        const double ms = median(rs), mr = median(rr);
        tally.line(8, ms < mr,
                   "median epochs to recovery snas " + fmt("%.1f", ms) + " vs reinforce_constant " + fmt("%.1f", mr) +
                       " (31 = never settled in 30)");
    }
    {
        const double mild = ResourceConfig::preset_eta(ConstraintLevel::mild);
        const double moderate = ResourceConfig::preset_eta(ConstraintLevel::moderate);
        const double aggressive = ResourceConfig::preset_eta(ConstraintLevel::aggressive);
        std::size_t sparser = 0, monotone = 0;
        for (std::uint64_t seed : kSparsitySeeds) {
            const Run a = search_planted(seed, SearchMode::snas, mild);
            const Run b = search_planted(seed, SearchMode::snas, moderate);
            const Run c = search_planted(seed, SearchMode::snas, aggressive);
            bool pruned = false;
            for (std::size_t e = 0; e < a.result.genotype.normal.size(); ++e) {
                pruned |= a.result.genotype.normal[e] != OpKind::zero && c.result.genotype.normal[e] == OpKind::zero;
            }
            sparser += pruned;
            const double c0 = snas[seed - 1].result.metrics.back().expected_cost;
            const double c1 = a.result.metrics.back().expected_cost, c2 = b.result.metrics.back().expected_cost,
                         c3 = c.result.metrics.back().expected_cost;
            monotone += c0 >= c1 && c1 >= c2 && c2 >= c3;
            std::printf("      seed %llu  zero edges mild %zu aggressive %zu  E[C] none %.2f mild %.2f moderate %.2f "
                        "aggressive %.2f\n",
                        static_cast<unsigned long long>(seed), normal_zeros(a.result.genotype),
                        normal_zeros(c.result.genotype), c0, c1, c2, c3);
            std::fflush(stdout);
        }
        std::size_t decreasing = 0;
        for (const auto& r : snas) {
            std::vector<double> h;
            for (const auto& m : r.result.metrics) h.push_back(m.mean_entropy);
            decreasing += slope(h) < 0.0 && h.back() < h.front();
        }
        const bool pass = sparser == kSparsitySeeds.size() && decreasing == kPairedSeeds;
        tally.line(9, pass,
                   "aggressive zeroes an edge mild keeps on " + std::to_string(sparser) + "/" +
                       std::to_string(kSparsitySeeds.size()) + " seeds; entropy trend down on " +
                       std::to_string(decreasing) + "/10; E[C] monotone in eta on " + std::to_string(monotone) + "/" +
                       std::to_string(kSparsitySeeds.size()));
    }
    {
        const Run again = search_planted(1, SearchMode::snas);
        const bool repro = same_run(snas[0].result, again.result);
        bool green = true;
        for (const auto& r : checks.results) green = green && r.pass;
        const bool fixture = cifar_fixture_roundtrip() && checks.named("io.cifar_roundtrip").pass;
        tally.line(10, repro && green && fixture,
                   std::string("seed-1 rerun ") + (repro ? "bit-identical" : "DIFFERS") + "; verify " +
                       std::to_string(checks.results.size()) + " checks " + (green ? "green" : "NOT green") +
                       "; cifar fixture round trip " + (fixture ? "exact" : "BROKEN"));
    }

    const double acc = snas[0].result.metrics.back().child_val_acc;
    std::printf("post-search child accuracy, planted seed 1: %.4f (target %.1f) %s\n", acc, kPostSearchAcc,
                acc >= kPostSearchAcc ? "ok" : "below target");
    std::printf("planted searches took %.0f s\n", seconds_since(search_start));
    std::printf("%d of 10 criteria failed\n", tally.failed);
    return tally.failed == 0 ? 0 : 1;
}
