#include "snas/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "snas/baselines.hpp"
#include "snas/checkpoint.hpp"
#include "snas/data.hpp"
#include "snas/gradcheck.hpp"
#include "snas/ops.hpp"
#include "snas/resource.hpp"

namespace snas {

namespace {

CheckResult make_check(std::string name, double value, double tolerance, bool pass, std::string detail = {}) {
    return CheckResult{std::move(name), value, tolerance, pass, std::move(detail)};
}

std::string fmt(const char* pattern, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

std::vector<double> draw_noise(std::size_t n, Rng& rng) {
    std::vector<double> g(n);
    for (auto& v : g) v = draw_gumbel(rng);
    return g;
}

// --- gradient correctness ---------------------------------------------------

struct GradientCase {
    ParentGraph graph;
    CellType type;
    ParamStore<double> params;
    std::unique_ptr<Cell<double>> cell;
    Tensor<double> s0, s1, probe;
    std::vector<double> noise;
    double temperature;
};

std::unique_ptr<GradientCase> make_gradient_case(std::size_t index, Rng& rng) {
    auto candidates = index % 2 == 0 ? reduced_op_set() : full_op_set();
    const std::size_t intermediate = 1 + (index / 2) % 2;
    auto gc = std::unique_ptr<GradientCase>(
        new GradientCase{ParentGraph(intermediate, candidates), index % 3 == 2 ? CellType::reduce : CellType::normal,
                         {}, nullptr, {}, {}, {}, {}, 0.0});
    std::uniform_int_distribution<std::size_t> ch(2, 3);
    const std::size_t c_pp = ch(rng), c_p = ch(rng), c = ch(rng);
    const bool reduction_prev = index % 5 == 4;
    gc->cell = std::make_unique<Cell<double>>(gc->graph, gc->type, c_pp, c_p, c, reduction_prev, gc->params,
                                              "cell", rng);
    const std::size_t side = 4;
    gc->s0 = random_tensor(Shape{2, c_pp, reduction_prev ? 2 * side : side, reduction_prev ? 2 * side : side}, rng);
    gc->s1 = random_tensor(Shape{2, c_p, side, side}, rng);
    gc->temperature = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
    gc->noise = draw_noise(gc->graph.num_edges() * gc->graph.num_ops(), rng);
    {
        NoGradScope<double> ng;
        const Tensor<double> mask(Shape{gc->graph.num_edges(), gc->graph.num_ops()}, 1.0);
        gc->probe = random_tensor(gc->cell->forward(gc->s0, gc->s1, mask).shape(), rng);
    }
    return gc;
}

Tensor<double> gradient_case_loss(const GradientCase& gc, const Tensor<double>& logits, CellTrace<double>* trace) {
    const auto z = sample_with_noise<double>(logits, gc.noise, gc.temperature).z;
    const Tensor<double> out = gc.cell->forward(gc.s0, gc.s1, z, trace);
    return add(dot(out, gc.probe), scale(mean(mul(out, out)), 0.1));
}

}  // namespace

std::vector<CheckResult> check_gradient_correctness(const VerifyOptions& options) {
    Rng rng(stream_seed(options.seed, 0x67726164));
    GradCheckResult alpha_fd, theta_fd;
    double closed_log = 0.0, closed_direct = 0.0;
    GradCheckOptions fd;
    for (std::size_t n = 0; n < options.gradient_cells; ++n) {
        auto gc = make_gradient_case(n, rng);
        const std::size_t rows = gc->graph.num_edges(), k = gc->graph.num_ops();
        Tensor<double> logits = random_tensor(Shape{rows, k}, rng);
        logits.set_requires_grad(true);
        gc->params.zero_grad();

        CellTrace<double> trace;
        Tape<double> tape;
        {
            TapeScope<double> scope(tape);
            tape.backward(gradient_case_loss(*gc, logits, &trace));
        }
        const std::vector<double> autodiff(logits.grad().begin(), logits.grad().end());
        auto eval = [&] {
            NoGradScope<double> ng;
            return gradient_case_loss(*gc, logits, nullptr).item();
        };
        alpha_fd.merge(check_gradient(logits, autodiff, eval, fd));

        // theta: a random subset of coordinates across all parameters
        std::vector<std::pair<std::size_t, std::size_t>> coords;
        const std::size_t total = gc->params.num_scalars();
        std::uniform_int_distribution<std::size_t> pick(0, total - 1);
        for (std::size_t t = 0; t < options.theta_coords_per_cell; ++t) {
            std::size_t flat = pick(rng);
            for (std::size_t p = 0; p < gc->params.size(); ++p) {
                if (flat < gc->params[p].size()) {
                    coords.emplace_back(p, flat);
                    break;
                }
                flat -= gc->params[p].size();
            }
        }
        for (std::size_t p = 0; p < gc->params.size(); ++p) {
            std::vector<std::size_t> idx;
            for (const auto& [q, i] : coords) {
                if (q == p) idx.push_back(i);
            }
            if (idx.empty()) continue;
            Tensor<double>& w = gc->params[p];
            std::vector<double> g(w.size(), 0.0);
            if (w.has_grad()) g.assign(w.grad().begin(), w.grad().end());
            theta_fd.merge(check_gradient(w, g, eval, fd, idx));
        }

        // closed form in log alpha, against the tape
        const auto z = sample_with_noise<double>(logits.detach(), gc->noise, gc->temperature).z;
        const auto zd = to_doubles(z);
        const auto ld = to_doubles(logits);
        const auto closed = analytic_alpha_grad(activations(trace, gc->graph), zd, gc->temperature, ld, AlphaForm::log);
        for (std::size_t i = 0; i < closed.size(); ++i) {
            closed_log = std::max(closed_log, relative_error(closed[i], autodiff[i], fd.floor));
        }

        // closed form in alpha itself: differentiate through log(alpha)
        Tensor<double> alpha(Shape{rows, k});
        for (std::size_t i = 0; i < alpha.size(); ++i) alpha[i] = std::exp(ld[i]);
        alpha.set_requires_grad(true);
        CellTrace<double> trace2;
        Tape<double> tape2;
        {
            TapeScope<double> scope(tape2);
            tape2.backward(gradient_case_loss(*gc, log(alpha), &trace2));
        }
        const auto direct = analytic_alpha_grad(activations(trace2, gc->graph), zd, gc->temperature, ld,
                                                AlphaForm::direct);
        for (std::size_t i = 0; i < direct.size(); ++i) {
            closed_direct = std::max(closed_direct, relative_error(direct[i], alpha.grad()[i], fd.floor));
        }
    }
    std::vector<CheckResult> out;
    auto fd_check = [&](const char* name, const GradCheckResult& r) {
        out.push_back(make_check(name, r.max_rel_error, fd.tolerance, r.failures == 0 && r.max_rel_error < fd.tolerance,
                                 fmt("%zu coords, %zu kinks skipped", r.checked, r.kinks)));
    };
    fd_check("gradient.alpha_vs_fd", alpha_fd);
    fd_check("gradient.theta_vs_fd", theta_fd);
    out.push_back(make_check("gradient.closed_form_log", closed_log, 1e-10, closed_log < 1e-10));
    out.push_back(make_check("gradient.closed_form_direct", closed_direct, 1e-10, closed_direct < 1e-10));
    return out;
}

// --- estimator equivalence ---------------------------------------------------

namespace {

double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

double simpson(double a, double b, double fa, double fm, double fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                        double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = simpson(a, m, fa, flm, fm);
    const double right = simpson(m, b, fm, frm, fb);
    if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b) {
    // Split the interval so that sharp features are not missed at the top level.
    double total = 0.0;
    const int pieces = 64;
    for (int i = 0; i < pieces; ++i) {
        const double lo = a + (b - a) * i / pieces, hi = a + (b - a) * (i + 1) / pieces;
        const double flo = f(lo), fmid = f(0.5 * (lo + hi)), fhi = f(hi);
        total += adaptive_simpson(f, lo, hi, flo, fmid, fhi, simpson(lo, hi, flo, fmid, fhi), 1e-13, 40);
    }
    return total;
}

double logit(double u) {
    if (u <= 0.0) return -INFINITY;
    if (u >= 1.0) return INFINITY;
    return std::log(u) - std::log1p(-u);
}

std::vector<Tensor<double>> mask_rows(std::span<const double> z, std::size_t num_ops, bool requires_grad) {
    std::vector<Tensor<double>> masks;
    for (std::size_t e = 0; e < z.size() / num_ops; ++e) {
        masks.emplace_back(Shape{num_ops}, std::vector<double>(z.begin() + e * num_ops, z.begin() + (e + 1) * num_ops),
                           requires_grad);
    }
    return masks;
}

Tensor<double> weight(std::size_t in, std::size_t out, Rng& rng) {
    return random_tensor(Shape{in, out}, rng, -1.0, 1.0);
}

std::vector<FunctionalCell<double>::Op> nonlinear_ops(std::size_t num_ops, std::size_t d, Rng& rng) {
    std::vector<FunctionalCell<double>::Op> ops;
    for (std::size_t k = 0; k < num_ops; ++k) {
        Tensor<double> w = weight(d, d, rng);
        if (k % 2 == 0) {
            ops.push_back([w](const Tensor<double>& x) { return relu(matmul(x, w)); });
        } else {
            ops.push_back([w](const Tensor<double>& x) { return exp(scale(matmul(x, w), 0.5)); });
        }
    }
    return ops;
}

std::vector<FunctionalCell<double>::Op> linear_ops(std::size_t num_ops, std::size_t d, Rng& rng) {
    std::vector<FunctionalCell<double>::Op> ops;
    for (std::size_t k = 0; k < num_ops; ++k) {
        Tensor<double> w = weight(d, d, rng);
        ops.push_back([w](const Tensor<double>& x) { return matmul(x, w); });
    }
    return ops;
}

double max_z_score(const MonteCarloEstimate& est, std::span<const double> exact, double* max_abs) {
    double worst = 0.0;
    *max_abs = 0.0;
    for (std::size_t i = 0; i < exact.size(); ++i) {
        const double diff = std::abs(est.mean[i] - exact[i]);
        *max_abs = std::max(*max_abs, diff);
        const double se = est.std_error(i);
        // A coordinate with no spread must match to rounding.
        const double z = se > 0.0 ? diff / se : (diff < 1e-9 ? 0.0 : INFINITY);
        worst = std::max(worst, z);
    }
    return worst;
}

double total_variance(const MonteCarloEstimate& est) {
    return std::accumulate(est.variance.begin(), est.variance.end(), 0.0);
}

}  // namespace

std::pair<double, double> concrete_pair_mean(double delta, double temperature) {
    if (!(temperature > 0.0)) throw std::domain_error("concrete_pair_mean: temperature must be positive");
    const double m = integrate([&](double u) { return sigmoid((delta + logit(u)) / temperature); }, 0.0, 1.0);
    const double dm = integrate(
        [&](double u) {
            const double s = sigmoid((delta + logit(u)) / temperature);
            return s * (1.0 - s) / temperature;
        },
        0.0, 1.0);
    return {m, dm};
}

std::vector<ToyProblem> toy_problems(std::uint64_t seed, std::size_t num_ops) {
    Rng rng(stream_seed(seed, 0x746f79));
    const std::size_t d = 3;
    std::vector<ToyProblem> out;
    auto finish = [&](ToyProblem p) {
        p.num_ops = num_ops;
        for (std::size_t i = 0; i < p.cell.num_inputs; ++i) p.inputs.push_back(random_tensor(Shape{1, d}, rng));
        p.readout = random_tensor(Shape{1, d}, rng);
        p.logits.resize(p.cell.edges.size() * num_ops);
        for (auto& v : p.logits) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        out.push_back(std::move(p));
    };
    {
        ToyProblem p;
        p.name = "single_edge";
        p.cell.num_inputs = 1;
        p.cell.num_nodes = 2;
        p.cell.edges.push_back({0, 1, nonlinear_ops(num_ops, d, rng)});
        finish(std::move(p));
    }
    {
        ToyProblem p;
        p.name = "series";
        p.cell.num_inputs = 1;
        p.cell.num_nodes = 3;
        p.cell.edges.push_back({0, 1, linear_ops(num_ops, d, rng)});
        p.cell.edges.push_back({1, 2, linear_ops(num_ops, d, rng)});
        finish(std::move(p));
    }
    {
        ToyProblem p;
        p.name = "parallel";
        p.cell.num_inputs = 2;
        p.cell.num_nodes = 3;
        p.cell.edges.push_back({0, 2, nonlinear_ops(num_ops, d, rng)});
        p.cell.edges.push_back({1, 2, nonlinear_ops(num_ops, d, rng)});
        finish(std::move(p));
    }
    return out;
}

double toy_loss(const ToyProblem& problem, std::span<const double> z) {
    NoGradScope<double> ng;
    const auto masks = mask_rows(z, problem.num_ops, false);
    return dot(problem.cell.forward(problem.inputs, masks).nodes.back(), problem.readout).item();
}

std::vector<double> toy_local_losses(const ToyProblem& problem, std::span<const double> z) {
    const auto masks = mask_rows(z, problem.num_ops, true);
    Tape<double> tape;
    FunctionalCell<double>::Trace trace;
    {
        TapeScope<double> scope(tape);
        trace = problem.cell.forward(problem.inputs, masks);
        tape.backward(dot(trace.nodes.back(), problem.readout));
    }
    std::vector<Edge> edges;
    for (const auto& e : problem.cell.edges) edges.push_back({e.from, e.to});
    const CellActivations<double> acts{edges, trace.nodes, trace.op_outputs, trace.edge_outputs};
    auto local = edge_credit(acts).edge_credit;
    for (double& v : local) v = -v;
    return local;
}

std::vector<double> toy_reparam_sample(const ToyProblem& problem, double temperature, Rng& rng) {
    const std::size_t rows = problem.logits.size() / problem.num_ops;
    Tensor<double> logits(Shape{rows, problem.num_ops}, problem.logits, true);
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        const auto s = sample<double>(logits, temperature, rng);
        std::vector<Tensor<double>> masks;
        for (std::size_t e = 0; e < rows; ++e) masks.push_back(row(s.z, e));
        tape.backward(dot(problem.cell.forward(problem.inputs, masks).nodes.back(), problem.readout));
    }
    return to_doubles(Tensor<double>(logits.shape(), std::vector<double>(logits.grad().begin(), logits.grad().end())));
}

std::vector<double> toy_exact_categorical(const ToyProblem& problem) {
    const std::size_t k = problem.num_ops, rows = problem.logits.size() / k;
    std::vector<std::vector<double>> probs;
    for (std::size_t e = 0; e < rows; ++e) {
        probs.push_back(probabilities(std::span<const double>(problem.logits).subspan(e * k, k)));
    }
    std::vector<double> grad(problem.logits.size(), 0.0);
    std::vector<std::size_t> choice(rows, 0);
    while (true) {
        double p = 1.0;
        std::vector<double> z(problem.logits.size(), 0.0);
        for (std::size_t e = 0; e < rows; ++e) {
            p *= probs[e][choice[e]];
            z[e * k + choice[e]] = 1.0;
        }
        const double loss = toy_loss(problem, z);
        for (std::size_t e = 0; e < rows; ++e) {
            for (std::size_t j = 0; j < k; ++j) {
                const double score = (j == choice[e] ? 1.0 : 0.0) - probs[e][j];
                grad[e * k + j] += p * score * loss;
            }
        }
        std::size_t e = 0;
        while (e < rows && ++choice[e] == k) choice[e++] = 0;
        if (e == rows) break;
    }
    return grad;
}

std::vector<double> toy_exact_concrete(const ToyProblem& problem, double temperature) {
    if (problem.num_ops != 2) throw std::invalid_argument("toy_exact_concrete: needs two ops per edge");
    const std::size_t rows = problem.logits.size() / 2;
    std::vector<double> zbar(problem.logits.size());
    std::vector<double> dm(rows);
    for (std::size_t e = 0; e < rows; ++e) {
        const auto [m, d] = concrete_pair_mean(problem.logits[2 * e] - problem.logits[2 * e + 1], temperature);
        zbar[2 * e] = m;
        zbar[2 * e + 1] = 1.0 - m;
        dm[e] = d;
    }
    std::vector<double> grad(problem.logits.size());
    for (std::size_t e = 0; e < rows; ++e) {
        auto z0 = zbar, z1 = zbar;
        z0[2 * e] = 1.0;
        z0[2 * e + 1] = 0.0;
        z1[2 * e] = 0.0;
        z1[2 * e + 1] = 1.0;
        const double g = (toy_loss(problem, z0) - toy_loss(problem, z1)) * dm[e];
        grad[2 * e] = g;
        grad[2 * e + 1] = -g;
    }
    return grad;
}

std::vector<CheckResult> check_estimator_equivalence(const VerifyOptions& options) {
    constexpr double kSigmas = 3.0;
    constexpr double kConcreteTemperature = 1.0;
    std::vector<CheckResult> out;
    auto add_check = [&](const std::string& name, const MonteCarloEstimate& est, std::span<const double> exact) {
        double max_abs = 0.0;
        const double z = max_z_score(est, exact, &max_abs);
        out.push_back(make_check(name, z, kSigmas, z <= kSigmas, fmt("max |mean - exact| = %.3g", max_abs)));
    };

    for (const auto& p : toy_problems(options.seed, 3)) {
        Rng rng(stream_seed(options.seed, 0x736663 + out.size()));
        const auto est = score_function_grad(
            p.logits, p.num_ops, ScoreRegime{0.0},
            [&](std::span<const double> z) { return toy_local_losses(p, z); }, options.estimator_samples, rng);
        add_check("estimator.score_categorical." + p.name, est, toy_exact_categorical(p));
    }
    for (const auto& p : toy_problems(options.seed + 1, 2)) {
        const auto exact = toy_exact_concrete(p, kConcreteTemperature);
        Rng rng(stream_seed(options.seed, 0x636f6e + out.size()));
        const auto sf = score_function_grad(
            p.logits, p.num_ops, ScoreRegime{kConcreteTemperature},
            [&](std::span<const double> z) { return toy_local_losses(p, z); }, options.estimator_samples, rng);
        add_check("estimator.score_concrete." + p.name, sf, exact);
        const auto rp = monte_carlo(options.estimator_samples, rng,
                                    [&](Rng& r) { return toy_reparam_sample(p, kConcreteTemperature, r); });
        add_check("estimator.reparam_concrete." + p.name, rp, exact);
        const double ratio = total_variance(rp) / total_variance(sf);
        out.push_back(make_check("estimator.variance_ratio." + p.name, ratio, 1.0, ratio < 1.0,
                                 "reparameterized / score-function variance"));
    }
    return out;
}

// --- Taylor conservation -------------------------------------------------------

namespace {

TaylorEdge taylor_edge(std::size_t from, std::size_t to, const std::vector<std::size_t>& dims, Activation act,
                       Rng& rng, bool identity = false) {
    TaylorEdge e;
    e.from = from;
    e.to = to;
    e.activation = act;
    if (!identity) {
        e.weight = random_tensor(Shape{dims[from], dims[to]}, rng);
        for (auto& v : e.weight.data()) v *= std::sqrt(3.0 / static_cast<double>(dims[from]));
    }
    return e;
}

double conservation_error(const TaylorReport& r) {
    double worst = 0.0;
    for (double s : r.layer_sum) worst = std::max(worst, std::abs(s - r.f));
    return worst;
}

}  // namespace

std::vector<CheckResult> check_taylor_conservation(const VerifyOptions& options) {
    Rng rng(stream_seed(options.seed, 0x7461796c));
    std::vector<CheckResult> out;
    auto run = [&](const std::string& name, auto build) {
        double worst = 0.0, scale_f = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            const TaylorNet net = build();
            const auto report = taylor_credits(net, random_tensor(Shape{net.node_dims[0]}, rng));
            worst = std::max(worst, conservation_error(report));
            scale_f = std::max(scale_f, std::abs(report.f));
        }
        out.push_back(make_check("taylor." + name, worst, 1e-10, worst < 1e-10, fmt("max |f| = %.3g", scale_f)));
    };
    run("chain", [&] {
        TaylorNet net;
        net.node_dims = {5, 6, 6, 4};
        for (std::size_t j = 1; j < 4; ++j) net.edges.push_back(taylor_edge(j - 1, j, net.node_dims, Activation::relu, rng));
        net.readout = random_tensor(Shape{4}, rng);
        return net;
    });
    run("skip", [&] {
        TaylorNet net;
        net.node_dims = {6, 6, 6, 6, 3};
        net.edges.push_back(taylor_edge(0, 1, net.node_dims, Activation::relu, rng));
        net.edges.push_back(taylor_edge(1, 2, net.node_dims, Activation::relu, rng));
        net.edges.push_back(taylor_edge(0, 2, net.node_dims, Activation::none, rng, true));
        net.edges.push_back(taylor_edge(2, 3, net.node_dims, Activation::relu, rng));
        net.edges.push_back(taylor_edge(1, 3, net.node_dims, Activation::none, rng, true));
        net.edges.push_back(taylor_edge(3, 4, net.node_dims, Activation::none, rng));
        net.edges.push_back(taylor_edge(0, 4, net.node_dims, Activation::relu, rng));
        net.readout = random_tensor(Shape{3}, rng);
        return net;
    });
    run("cell_dag", [&] {
        // Two inputs feeding every later node, like a search cell.
        TaylorNet net;
        net.node_dims = {4, 4, 4, 4, 4, 4};
        net.edges.push_back(taylor_edge(0, 1, net.node_dims, Activation::relu, rng));
        for (std::size_t j = 2; j < 5; ++j) {
            for (std::size_t i = 0; i < j; ++i) {
                net.edges.push_back(taylor_edge(i, j, net.node_dims, (i + j) % 2 ? Activation::relu : Activation::none,
                                                rng, (i + j) % 3 == 0));
            }
        }
        net.edges.push_back(taylor_edge(4, 5, net.node_dims, Activation::relu, rng));
        net.edges.push_back(taylor_edge(2, 5, net.node_dims, Activation::none, rng, true));
        net.readout = random_tensor(Shape{4}, rng);
        return net;
    });
    return out;
}

// --- concrete limit ------------------------------------------------------------

std::vector<CheckResult> check_concrete_limit(const VerifyOptions& options) {
    constexpr double kTemperature = 0.01;
    constexpr double kTolerance = 0.01;
    Rng rng(stream_seed(options.seed, 0x6c696d));
    std::vector<CheckResult> out;
    for (std::size_t k : {4u, 8u}) {
        std::vector<double> alpha(k);
        for (auto& a : alpha) a = std::uniform_real_distribution<double>(0.2, 2.0)(rng);
        const double total = std::accumulate(alpha.begin(), alpha.end(), 0.0);
        Tensor<double> logits(Shape{1, k});
        for (std::size_t i = 0; i < k; ++i) logits[i] = std::log(alpha[i]);
        std::vector<double> freq(k, 0.0);
        NoGradScope<double> ng;
        for (std::size_t s = 0; s < options.limit_samples; ++s) {
            const auto z = sample<double>(logits, kTemperature, rng).z;
            freq[argmax_lowest(z.data())] += 1.0;
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            worst = std::max(worst, std::abs(freq[i] / static_cast<double>(options.limit_samples) - alpha[i] / total));
        }
        out.push_back(make_check(fmt("concrete_limit.k%zu", k), worst, kTolerance, worst < kTolerance,
                                 fmt("lambda = %g, %zu samples", kTemperature, options.limit_samples)));
    }
    return out;
}

// --- resource --------------------------------------------------------------------

std::vector<CheckResult> check_resource(const VerifyOptions& options) {
    Rng rng(stream_seed(options.seed, 0x636f7374));
    std::vector<CheckResult> out;
    NetworkConfig cfg;
    cfg.init_channels = 8;
    cfg.num_cells = 3;
    const NetworkSpec spec(cfg);
    const ParentGraph& g = spec.graph();
    const CostTable table = build_cost_table(spec, ResourceConfig{});

    std::size_t mismatches = 0;
    std::uniform_int_distribution<std::size_t> pick(0, g.num_ops() - 1);
    for (std::size_t s = 0; s < options.cost_samples; ++s) {
        Genotype geno;
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            geno.normal.push_back(g.candidates()[pick(rng)]);
            geno.reduce.push_back(g.candidates()[pick(rng)]);
        }
        std::vector<std::vector<double>> masks;
        for (std::size_t c = 0; c < spec.num_cells(); ++c) {
            std::vector<double> m(g.num_edges() * g.num_ops(), 0.0);
            const auto& ops = geno.ops(spec.cell_type(c));
            for (std::size_t e = 0; e < g.num_edges(); ++e) m[e * g.num_ops() + g.op_index(ops[e])] = 1.0;
            masks.push_back(std::move(m));
        }
        const auto masked = masked_raw_cost(table, masks);
        const OpCost walk = subgraph_walk_cost(spec, geno);
        if (masked[0] != static_cast<double>(walk.params) || masked[1] != static_cast<double>(walk.flops) ||
            masked[2] != static_cast<double>(walk.mac)) {
            ++mismatches;
        }
    }
    out.push_back(make_check("resource.masked_vs_walk", static_cast<double>(mismatches), 0.0, mismatches == 0,
                             fmt("%zu random children", options.cost_samples)));

    ArchParams<double> alpha(g.num_edges(), g.num_ops());
    for (auto* t : {&alpha.normal, &alpha.reduce}) {
        for (auto& v : t->data()) v = std::uniform_real_distribution<double>(-1.5, 1.5)(rng);
    }
    const double exact = expected_cost(table, alpha);
    auto draw_choices = [&](Rng& r) {
        std::vector<std::vector<std::size_t>> choices;
        for (std::size_t c = 0; c < spec.num_cells(); ++c) {
            const auto logits = to_doubles(alpha.of(spec.cell_type(c)));
            const auto z = draw_mask(logits, g.num_ops(), ScoreRegime{0.0}, r);
            std::vector<std::size_t> row;
            for (std::size_t e = 0; e < g.num_edges(); ++e) {
                row.push_back(argmax_lowest(std::span<const double>(z).subspan(e * g.num_ops(), g.num_ops())));
            }
            choices.push_back(std::move(row));
        }
        return choices;
    };
    const auto mc = monte_carlo(options.expected_cost_samples, rng, [&](Rng& r) {
        const auto choices = draw_choices(r);
        std::vector<std::vector<double>> masks;
        for (const auto& row : choices) {
            std::vector<double> m(g.num_edges() * g.num_ops(), 0.0);
            for (std::size_t e = 0; e < row.size(); ++e) m[e * g.num_ops() + row[e]] = 1.0;
            masks.push_back(std::move(m));
        }
        return std::vector<double>{sample_cost(table, masks)};
    });
    const double zc = std::abs(mc.mean[0] - exact) / mc.std_error(0);
    out.push_back(make_check("resource.expected_cost_vs_mc", zc, 3.0, zc <= 3.0,
                             fmt("exact %.6g, mc %.6g", exact, mc.mean[0])));

    const auto [gn, gr] = expected_cost_grad(table, alpha);
    std::vector<double> exact_grad(gn);
    exact_grad.insert(exact_grad.end(), gr.begin(), gr.end());
    const auto mg = monte_carlo(options.expected_cost_samples, rng, [&](Rng& r) {
        const auto choices = draw_choices(r);
        const auto [a, b] = cost_grad_from_choices(table, alpha, choices);
        std::vector<double> v(a);
        v.insert(v.end(), b.begin(), b.end());
        return v;
    });
    double max_abs = 0.0;
    const double zg = max_z_score(mg, exact_grad, &max_abs);
    // Family-wise threshold over all coordinates.
    out.push_back(make_check("resource.cost_grad_vs_mc", zg, 4.0, zg <= 4.0,
                             fmt("%zu coords, max |diff| = %.3g", exact_grad.size(), max_abs)));

    const OpCost ref = conv_layer_cost(ConvLayer{3, 3, 16, 16, 1}, 8, 8);
    const bool ref_ok = ref == OpCost{2304, 147456, 4352};
    out.push_back(make_check("resource.reference_triple", ref_ok ? 0.0 : 1.0, 0.0, ref_ok,
                             fmt("(%llu, %llu, %llu)", static_cast<unsigned long long>(ref.params),
                                 static_cast<unsigned long long>(ref.flops), static_cast<unsigned long long>(ref.mac))));
    return out;
}

// --- attention bias ------------------------------------------------------------

std::vector<CheckResult> check_attention_bias(const VerifyOptions& options) {
    std::vector<CheckResult> out;
    const Tensor<double> x(Shape{1}, 1.0);
    const std::vector<std::vector<double>> uniform{{0.0, 0.0}};
    const BiasGap relu_gap = attention_bias(relu_pair_cell(), {x}, uniform, [](const Tensor<double>& y) {
        const double d = y[0] - 1.0;
        return d * d;
    });
    const double err = std::abs(std::abs(relu_gap.gap()) - 0.25);
    out.push_back(make_check("attention_bias.relu_pair", std::abs(relu_gap.gap()), 1e-12, err < 1e-12,
                             fmt("target 0.25; E[L] = %.6g, L(E) = %.6g", relu_gap.expected_loss, relu_gap.mixture_loss)));

    double worst = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng(stream_seed(options.seed, 0x6c696e + s));
        FunctionalCell<double> cell;
        cell.num_inputs = 2;
        cell.num_nodes = 4;
        cell.edges.push_back({0, 2, linear_ops(3, 3, rng)});
        cell.edges.push_back({1, 2, linear_ops(3, 3, rng)});
        cell.edges.push_back({2, 3, linear_ops(3, 3, rng)});
        cell.edges.push_back({0, 3, linear_ops(3, 3, rng)});
        std::vector<std::vector<double>> logits(cell.edges.size(), std::vector<double>(3));
        for (auto& r : logits) {
            for (auto& v : r) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        }
        const Tensor<double> readout = random_tensor(Shape{1, 3}, rng);
        const BiasGap gap =
            attention_bias(cell, {random_tensor(Shape{1, 3}, rng), random_tensor(Shape{1, 3}, rng)}, logits,
                           [&](const Tensor<double>& y) { return dot(y, readout).item(); });
        worst = std::max(worst, std::abs(gap.gap()));
    }
    out.push_back(make_check("attention_bias.linear", worst, 1e-10, worst < 1e-10, "linear ops, linear loss"));
    return out;
}

// --- I/O ---------------------------------------------------------------------------

std::vector<CheckResult> check_io_roundtrip(const VerifyOptions& options) {
    Rng rng(stream_seed(options.seed, 0x696f));
    std::vector<CheckResult> out;
    std::vector<CifarRecord> records(16);
    std::uniform_int_distribution<int> byte(0, 255), label(0, 9);
    for (auto& r : records) {
        r.label = static_cast<std::uint8_t>(label(rng));
        for (auto& p : r.pixels) p = static_cast<std::uint8_t>(byte(rng));
    }
    const auto dir = std::filesystem::temp_directory_path() /
                     ("snas_verify_" + std::to_string(stream_seed(options.seed, static_cast<std::uint64_t>(
                                                                                   std::chrono::steady_clock::now()
                                                                                       .time_since_epoch()
                                                                                       .count()))));
    std::filesystem::create_directories(dir);
    bool cifar_ok = false, ckpt_ok = false;
    std::string detail;
    try {
        write_cifar_binary(dir / "data_batch_1.bin", records);
        const auto back = read_cifar_binary(dir / "data_batch_1.bin");
        cifar_ok = back.size() == records.size() &&
                   std::equal(back.begin(), back.end(), records.begin(), [](const CifarRecord& a, const CifarRecord& b) {
                       return a.label == b.label && a.pixels == b.pixels;
                   });
        const Dataset a = records_to_dataset(records), b = records_to_dataset(back);
        cifar_ok = cifar_ok && a.images == b.images && a.labels == b.labels;

        std::vector<NamedArray> arrays;
        arrays.push_back(to_named_array("w64", random_tensor(Shape{3, 4}, rng)));
        Tensor<float> wf(Shape{5});
        for (auto& v : wf.data()) v = static_cast<float>(uniform01(rng));
        arrays.push_back(to_named_array("w32", wf));
        write_checkpoint(dir / "ckpt.bin", arrays);
        const auto loaded = read_checkpoint(dir / "ckpt.bin");
        ckpt_ok = loaded.size() == arrays.size();
        for (std::size_t i = 0; ckpt_ok && i < arrays.size(); ++i) {
            ckpt_ok = loaded[i].name == arrays[i].name && loaded[i].shape == arrays[i].shape &&
                      loaded[i].values == arrays[i].values;
        }
    } catch (const std::exception& e) {
        detail = e.what();
    }
    std::filesystem::remove_all(dir);
    out.push_back(make_check("io.cifar_roundtrip", cifar_ok ? 0.0 : 1.0, 0.0, cifar_ok, detail));
    out.push_back(make_check("io.checkpoint_roundtrip", ckpt_ok ? 0.0 : 1.0, 0.0, ckpt_ok, detail));
    return out;
}

std::vector<CheckResult> run_all_checks(const VerifyOptions& options) {
    std::vector<CheckResult> all;
    for (auto* fn : {&check_gradient_correctness, &check_estimator_equivalence, &check_taylor_conservation,
                     &check_concrete_limit, &check_resource, &check_attention_bias, &check_io_roundtrip}) {
        auto part = fn(options);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

std::string format_report(const std::vector<CheckResult>& results) {
    std::size_t width = 5;
    for (const auto& r : results) width = std::max(width, r.name.size());
    std::ostringstream os;
    os << fmt("%-*s  %12s  %10s  %s\n", static_cast<int>(width), "check", "value", "tolerance", "result");
    std::size_t failed = 0;
    for (const auto& r : results) {
        os << fmt("%-*s  %12.4g  %10.3g  %s", static_cast<int>(width), r.name.c_str(), r.value, r.tolerance,
                  r.pass ? "PASS" : "FAIL");
        if (!r.detail.empty()) os << "  " << r.detail;
        os << '\n';
        failed += !r.pass;
    }
    os << results.size() - failed << " passed, " << failed << " failed\n";
    return os.str();
}

}  // namespace snas
