#include <cmath>

#include "doctest.h"
#include "snas/credit.hpp"
#include "snas/ops.hpp"
#include "snas/verify.hpp"
#include "support.hpp"

using namespace snas;

namespace {

FunctionalCell<double> scalar_cell(std::vector<double> gains) {
    FunctionalCell<double> cell;
    cell.num_inputs = 1;
    cell.num_nodes = 2;
    FunctionalCell<double>::EdgeOps edge{0, 1, {}};
    for (double g : gains) edge.ops.push_back([g](const Tensor<double>& x) { return scale(x, g); });
    cell.edges.push_back(edge);
    return cell;
}

struct ScalarPass {
    FunctionalCell<double>::Trace trace;
    std::vector<Edge> edges{{0, 1}};
    CellActivations<double> acts() const { return {edges, trace.nodes, trace.op_outputs, trace.edge_outputs}; }
};

ScalarPass run_scalar(const FunctionalCell<double>& cell, double x, std::vector<double> z) {
    ScalarPass pass;
    Tensor<double> mask(Shape{z.size()}, z, true);
    std::vector<Tensor<double>> masks{mask};
    Tape<double> tape;
    TapeScope<double> scope(tape);
    pass.trace = cell.forward({Tensor<double>(Shape{1}, x)}, masks);
    tape.backward(sum(pass.trace.nodes.back()));
    return pass;
}

}  // namespace

TEST_CASE("identical ops give a zero alpha gradient") {
    const auto cell = scalar_cell({2.0, 2.0, 2.0});
    const std::vector<double> z{0.2, 0.5, 0.3}, logits{0.1, -0.4, 0.7};
    const auto pass = run_scalar(cell, 1.5, z);
    for (double g : analytic_alpha_grad(pass.acts(), z, 0.7, logits)) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("two-op closed form matches symbolic differentiation") {
    // y = z1 a x + z2 b x with z = softmax((l + g) / lambda): dy/dl1 = z1 z2 (a - b) x / lambda.
    const double a = 1.7, b = -0.6, x = 0.9, lam = 0.6;
    const std::vector<double> logits{0.3, -0.2}, g{0.1, 0.4};
    const auto z = concrete_row(logits, g, lam);
    const auto pass = run_scalar(scalar_cell({a, b}), x, z);
    const auto grad = analytic_alpha_grad(pass.acts(), z, lam, logits);
    const double expected = z[0] * z[1] * (a - b) * x / lam;
    CHECK(grad[0] == doctest::Approx(expected).epsilon(1e-13));
    CHECK(grad[1] == doctest::Approx(-expected).epsilon(1e-13));
    const auto direct = analytic_alpha_grad(pass.acts(), z, lam, logits, AlphaForm::direct);
    CHECK(direct[0] == doctest::Approx(expected / std::exp(logits[0])).epsilon(1e-13));
}

TEST_CASE("closed form rejects missing activations") {
    const auto cell = scalar_cell({1.0, 2.0});
    ScalarPass pass;
    {
        NoGradScope<double> ng;
        std::vector<Tensor<double>> masks{Tensor<double>(Shape{2}, std::vector<double>{0.5, 0.5})};
        pass.trace = cell.forward({Tensor<double>(Shape{1}, 1.0)}, masks);
    }
    const std::vector<double> z{0.5, 0.5}, l{0.0, 0.0};
    CHECK_THROWS_AS(analytic_alpha_grad(pass.acts(), z, 1.0, l), std::logic_error);
    pass.trace.op_outputs[0][1] = Tensor<double>();
    CHECK_THROWS_AS(analytic_alpha_grad(pass.acts(), z, 1.0, l), std::logic_error);
}

TEST_CASE("edge credit sign convention") {
    // L = x_j with a single edge carrying c: R = -c.
    const auto pass = run_scalar(scalar_cell({3.0, 5.0}), 1.0, {1.0, 0.0});
    const auto report = edge_credit(pass.acts(), 7);
    CHECK(report.sample_id == 7);
    CHECK(report.edge_credit[0] == doctest::Approx(-3.0));
    CHECK(report.node_credit[1] == doctest::Approx(3.0));

    FunctionalCell<double> with_zero = scalar_cell({3.0});
    with_zero.edges[0].ops.push_back([](const Tensor<double>& x) { return Tensor<double>::zeros(x.shape()); });
    const auto zero_pass = run_scalar(with_zero, 2.0, {0.0, 1.0});
    CHECK(edge_credit(zero_pass.acts()).edge_credit[0] == 0.0);

    CreditSignFault fault;
    CHECK(CreditSignFault::active());
    CHECK(edge_credit(pass.acts()).edge_credit[0] == doctest::Approx(3.0));
}

TEST_CASE("credits are finite on random cells") {
    Rng rng(3);
    for (const auto& p : toy_problems(5, 3)) {
        for (int t = 0; t < 20; ++t) {
            const auto z = draw_mask(p.logits, p.num_ops, ScoreRegime{0.5}, rng);
            for (double v : toy_local_losses(p, z)) CHECK(std::isfinite(v));
        }
    }
}

TEST_CASE("score function estimator") {
    Rng rng(11);
    const std::vector<double> logits{0.4, -0.3};
    SUBCASE("loss independent of Z has zero mean") {
        const auto est = score_function_grad(
            logits, 2, ScoreRegime{0.0}, [](std::span<const double>) { return std::vector<double>{2.5}; }, 100000, rng);
        for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(est.mean[i]) < 4 * est.std_error(i));
    }
    SUBCASE("two fixed per-op losses") {
        const double l1 = 1.3, l2 = -0.4;
        const auto est = score_function_grad(
            logits, 2, ScoreRegime{0.0},
            [&](std::span<const double> z) { return std::vector<double>{z[0] * l1 + z[1] * l2}; }, 100000, rng);
        const auto p = probabilities(logits);
        const double exact = p[0] * p[1] * (l1 - l2);
        CHECK(std::abs(est.mean[0] - exact) < 3 * est.std_error(0));
        CHECK(std::abs(est.mean[1] + exact) < 3 * est.std_error(1));
    }
    CHECK_THROWS_AS(score_function_grad(logits, 2, ScoreRegime{0.0},
                                        [](std::span<const double>) { return std::vector<double>{0.0}; }, 0, rng),
                    std::invalid_argument);
}

TEST_CASE("monte carlo mean and variance") {
    Rng rng(1);
    std::size_t i = 0;
    const auto est = monte_carlo(4, rng, [&](Rng&) { return std::vector<double>{static_cast<double>(++i)}; });
    CHECK(est.mean[0] == doctest::Approx(2.5));
    CHECK(est.variance[0] == doctest::Approx(5.0 / 3.0));
    CHECK(est.std_error(0) == doctest::Approx(std::sqrt(5.0 / 12.0)));
}

TEST_CASE("concrete pair quadrature") {
    CHECK(concrete_pair_mean(0.0, 0.7).first == doctest::Approx(0.5).epsilon(1e-10));
    const auto [m, d] = concrete_pair_mean(0.4, 0.8);
    const double h = 1e-4;
    const double fd = (concrete_pair_mean(0.4 + h, 0.8).first - concrete_pair_mean(0.4 - h, 0.8).first) / (2 * h);
    CHECK(d == doctest::Approx(fd).epsilon(1e-7));
    CHECK(m > 0.5);
    // Low temperature approaches the categorical probability.
    CHECK(concrete_pair_mean(0.8, 0.01).first == doctest::Approx(1.0 / (1.0 + std::exp(-0.8))).epsilon(2e-3));
    // At lambda = 1 the mean has the closed form E[sigma(delta + logistic)].
    Rng rng(2);
    double mc = 0;
    for (int i = 0; i < 200000; ++i) {
        const double g1 = draw_gumbel(rng), g2 = draw_gumbel(rng);
        mc += 1.0 / (1.0 + std::exp(-(0.4 + g1 - g2) / 0.8));
    }
    CHECK(m == doctest::Approx(mc / 200000).epsilon(5e-3));
}

TEST_CASE("categorical oracle is the gradient of the enumerated expectation") {
    for (const auto& p : toy_problems(9, 3)) {
        const auto exact = toy_exact_categorical(p);
        auto expected_loss = [&](const std::vector<double>& logits) {
            ToyProblem q{p.name, p.cell, p.inputs, p.readout, logits, p.num_ops};
            const std::size_t rows = logits.size() / 3;
            double total = 0;
            for (std::size_t c = 0; c < std::size_t(std::pow(3, rows)); ++c) {
                std::vector<double> z(logits.size(), 0.0);
                double prob = 1;
                std::size_t code = c;
                for (std::size_t e = 0; e < rows; ++e) {
                    const auto pr = probabilities(std::span<const double>(logits).subspan(e * 3, 3));
                    z[e * 3 + code % 3] = 1;
                    prob *= pr[code % 3];
                    code /= 3;
                }
                total += prob * toy_loss(q, z);
            }
            return total;
        };
        for (std::size_t i = 0; i < p.logits.size(); ++i) {
            auto up = p.logits, down = p.logits;
            up[i] += 1e-6;
            down[i] -= 1e-6;
            CHECK(exact[i] == doctest::Approx((expected_loss(up) - expected_loss(down)) / 2e-6).epsilon(1e-6));
        }
    }
}

TEST_CASE("taylor decomposition") {
    Rng rng(4);
    SUBCASE("linear readout") {
        TaylorNet net;
        net.node_dims = {3, 3};
        net.edges.push_back(TaylorEdge{0, 1, {}, {}, Activation::none});
        net.readout = Tensor<double>(Shape{3}, std::vector<double>{1.0, -2.0, 0.5});
        const Tensor<double> x(Shape{3}, std::vector<double>{0.3, 0.1, -1.0});
        const auto r = taylor_credits(net, x);
        CHECK(r.f == doctest::Approx(0.3 - 0.2 - 0.5));
        CHECK(r.node_credit[0] == doctest::Approx(r.f));
        CHECK(r.edge_credit[0] == doctest::Approx(r.f));
    }
    SUBCASE("skip node integrates credit from both paths") {
        TaylorNet net;
        net.node_dims = {4, 4, 4};
        net.edges.push_back(TaylorEdge{0, 1, snas::test::random_tensor({4, 4}, rng), {}, Activation::relu});
        net.edges.push_back(TaylorEdge{1, 2, snas::test::random_tensor({4, 4}, rng), {}, Activation::relu});
        net.edges.push_back(TaylorEdge{0, 2, {}, {}, Activation::none});
        net.readout = snas::test::random_tensor({4}, rng);
        const auto r = taylor_credits(net, snas::test::random_tensor({4}, rng));
        // Edges into node 2 split its credit.
        CHECK(r.edge_credit[1] + r.edge_credit[2] == doctest::Approx(r.node_credit[2]).epsilon(1e-12));
        REQUIRE(r.layer_sum.size() == 3);
        CHECK(r.layer_sum[1] == doctest::Approx(r.node_credit[1] + r.edge_credit[2]).epsilon(1e-12));
        for (double s : r.layer_sum) CHECK(std::abs(s - r.f) < 1e-12);
    }
    SUBCASE("rejects biases and non-ReLU nonlinearities") {
        TaylorNet net;
        net.node_dims = {2, 2};
        net.edges.push_back(TaylorEdge{0, 1, {}, Tensor<double>(Shape{2}, 0.1), Activation::relu});
        net.readout = Tensor<double>(Shape{2}, 1.0);
        CHECK_THROWS_AS(taylor_credits(net, Tensor<double>(Shape{2}, 1.0)), std::invalid_argument);
        net.edges[0].bias = Tensor<double>();
        net.edges[0].activation = Activation::sigmoid;
        CHECK_THROWS_AS(taylor_credits(net, Tensor<double>(Shape{2}, 1.0)), std::invalid_argument);
    }
}

TEST_CASE("credit sign fault breaks estimator equivalence") {
    VerifyOptions options;
    options.estimator_samples = 20000;
    std::size_t failures_clean = 0, failures_fault = 0;
    for (const auto& r : check_estimator_equivalence(options)) failures_clean += !r.pass;
    {
        CreditSignFault fault;
        for (const auto& r : check_estimator_equivalence(options)) {
            if (r.name.find("score_") != std::string::npos) failures_fault += !r.pass;
        }
    }
    CHECK(failures_clean == 0);
    CHECK(failures_fault >= 4);
}
