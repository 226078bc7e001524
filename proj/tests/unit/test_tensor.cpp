#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "snas/checkpoint.hpp"
#include "snas/ops.hpp"
#include "support.hpp"

using namespace snas;
using snas::test::check_op;
using snas::test::random_tensor;

TEST_CASE("relu clamps negatives") {
    Tensor<double> x(Shape{3}, {-1.0, 0.0, 2.0});
    auto y = relu(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 2.0);
}

TEST_CASE("identity matmul returns its argument") {
    Rng rng(1);
    Tensor<double> eye(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto a = random_tensor({3, 3}, rng);
    auto y = matmul(eye, a);
    for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == a[i]);
}

TEST_CASE("3x3 all-ones convolution with padding") {
    Tensor<double> x(Shape{1, 1, 3, 3}, 1.0);
    Tensor<double> w(Shape{1, 1, 3, 3}, 1.0);
    auto y = conv2d(x, w, Conv2dOptions{1, 1, 1, 1});
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y[4] == 9.0);
    CHECK(y[0] == 4.0);
    CHECK(y[2] == 4.0);
    CHECK(y[6] == 4.0);
    CHECK(y[8] == 4.0);
    CHECK(y[1] == 6.0);
}

TEST_CASE("shape mismatch names the op") {
    Tensor<double> a(Shape{2, 3}), b(Shape{2, 2});
    try {
        add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("add") != std::string::npos);
    }
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("backward seeds simple gradients") {
    SUBCASE("sum") {
        Tensor<double> x(Shape{2, 3}, 0.5, true);
        Tape<double> tape;
        TapeScope<double> s(tape);
        tape.backward(sum(x));
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    SUBCASE("square") {
        auto x = Tensor<double>::scalar(3.0, true);
        Tape<double> tape;
        TapeScope<double> s(tape);
        tape.backward(mul(x, x));
        CHECK(x.grad()[0] == doctest::Approx(6.0));
    }
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor<double> x(Shape{2}, 1.0, true);
    Tape<double> tape;
    TapeScope<double> s(tape);
    auto y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("cross-entropy gradient is softmax minus one-hot") {
    Rng rng(7);
    auto z = random_tensor({1, 5}, rng, -2, 2);
    z.set_requires_grad(true);
    const int label = 3;
    Tape<double> tape;
    {
        TapeScope<double> s(tape);
        tape.backward(cross_entropy(z, std::span<const int>(&label, 1)));
    }
    auto p = softmax(z.detach());
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(z.grad()[k] == doctest::Approx(p[k] - (k == 3 ? 1.0 : 0.0)).epsilon(1e-12));
    }
    auto eval = [&] {
        NoGradScope<double> ng;
        return cross_entropy(z, std::span<const int>(&label, 1)).item();
    };
    std::vector<double> g(z.grad().begin(), z.grad().end());
    GradCheckOptions opt;
    opt.tolerance = 1e-6;
    auto r = check_gradient(z, g, eval, opt);
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("every primitive matches finite differences on random shapes") {
    Rng rng(2024);
    std::uniform_int_distribution<std::size_t> dim(1, 4);
    GradCheckResult total;
    auto run = [&](const char* name, auto f, std::vector<Tensor<double>> inputs) {
        auto r = check_op(f, std::move(inputs), rng);
        INFO(name << " rel err " << r.max_rel_error << " idx " << r.worst_index << " a=" << r.worst_analytic
                  << " n=" << r.worst_numeric);
        CHECK(r.failures == 0);
        total.merge(r);
    };
    using V = std::vector<Tensor<double>>;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = dim(rng), c = dim(rng), h = dim(rng) + 2, w = dim(rng) + 2;
        const Shape s4{n, c, h, w};
        run("add", [](const V& v) { return add(v[0], v[1]); }, V{random_tensor(s4, rng), random_tensor(s4, rng)});
        run("sub", [](const V& v) { return sub(v[0], v[1]); }, V{random_tensor(s4, rng), random_tensor(s4, rng)});
        run("mul", [](const V& v) { return mul(v[0], v[1]); }, V{random_tensor(s4, rng), random_tensor(s4, rng)});
        run("mul_scalar", [](const V& v) { return mul_scalar(v[0], v[1]); },
            V{random_tensor(s4, rng), random_tensor({1}, rng)});
        run("relu", [](const V& v) { return relu(v[0]); }, V{random_tensor(s4, rng)});
        run("exp", [](const V& v) { return exp(v[0]); }, V{random_tensor(s4, rng)});
        run("log", [](const V& v) { return log(v[0]); }, V{random_tensor(s4, rng, 0.5, 2.0)});
        run("mean", [](const V& v) { return mean(v[0]); }, V{random_tensor(s4, rng)});
        run("matmul", [](const V& v) { return matmul(v[0], v[1]); },
            V{random_tensor({n, c}, rng), random_tensor({c, h}, rng)});
        run("add_bias", [](const V& v) { return add_bias(v[0], v[1]); },
            V{random_tensor(s4, rng), random_tensor({c}, rng)});
        const std::size_t groups = (trial % 3 == 0) ? c : 1;
        const std::size_t out = groups == 1 ? dim(rng) : c;
        const std::size_t k = (trial % 2) ? 3 : 1;
        const Conv2dOptions copt{1 + static_cast<std::size_t>(trial % 2), k / 2 + (trial % 4 == 1 ? 1 : 0),
                                 1 + static_cast<std::size_t>(trial % 5 == 0), groups};
        run("conv2d", [copt](const V& v) { return conv2d(v[0], v[1], copt); },
            V{random_tensor({n, c, h + 2, w + 2}, rng), random_tensor({out, c / groups, k, k}, rng)});
        run("batch_norm", [](const V& v) { return batch_norm(v[0], v[1], v[2]); },
            V{random_tensor({n + 1, c, h, w}, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)});
        const Pool2dOptions popt{3, 1 + static_cast<std::size_t>(trial % 2), 1};
        run("avg_pool2d", [popt](const V& v) { return avg_pool2d(v[0], popt); }, V{random_tensor(s4, rng)});
        run("max_pool2d", [popt](const V& v) { return max_pool2d(v[0], popt); }, V{random_tensor(s4, rng)});
        run("global_avg_pool", [](const V& v) { return global_avg_pool(v[0]); }, V{random_tensor(s4, rng)});
        run("softmax", [](const V& v) { return softmax(v[0]); }, V{random_tensor({n, c + 1}, rng, -2, 2)});
        run("log_softmax", [](const V& v) { return log_softmax(v[0]); }, V{random_tensor({n, c + 1}, rng, -2, 2)});
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng() % (c + 1));
        run("cross_entropy", [labels](const V& v) { return cross_entropy(v[0], std::span<const int>(labels)); },
            V{random_tensor({n, c + 1}, rng, -2, 2)});
        run("concat", [](const V& v) { return concat_channels(V{v[0], v[1]}); },
            V{random_tensor(s4, rng), random_tensor({n, dim(rng), h, w}, rng)});
        run("row", [](const V& v) { return row(v[0], 1); }, V{random_tensor({3, c}, rng)});
        run("mix", [](const V& v) { return mix(v[0], V{v[1], v[2]}); },
            V{random_tensor({2}, rng), random_tensor(s4, rng), random_tensor(s4, rng)});
    }
    CHECK(total.kink_fraction() <= 0.01);
}

TEST_CASE("shared subexpressions accumulate gradients (diamond)") {
    Rng rng(3);
    auto f = [](const std::vector<Tensor<double>>& v) {
        Tensor<double> a = relu(v[0]);
        Tensor<double> left = mul(a, v[1]);
        Tensor<double> right = exp(scale(a, 0.5));
        return add(left, right);
    };
    auto r = check_op(f, {random_tensor({4, 5}, rng), random_tensor({4, 5}, rng)}, rng);
    CHECK(r.failures == 0);

    auto x = Tensor<double>::scalar(2.0, true);
    Tape<double> tape;
    {
        TapeScope<double> s(tape);
        auto y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x
        tape.backward(y);
    }
    CHECK(x.grad()[0] == doctest::Approx(7.0));
    CHECK(tape.backward_passes() == 1);
    CHECK(tape.visited_records() == tape.size());
}

TEST_CASE("forward is deterministic") {
    Rng a(5), b(5);
    auto x1 = random_tensor({2, 3, 5, 5}, a);
    auto w1 = random_tensor({4, 3, 3, 3}, a);
    auto x2 = random_tensor({2, 3, 5, 5}, b);
    auto w2 = random_tensor({4, 3, 3, 3}, b);
    auto y1 = batch_norm(conv2d(x1, w1, {1, 1, 1, 1}), Tensor<double>(Shape{4}, 1.0), Tensor<double>(Shape{4}, 0.0));
    auto y2 = batch_norm(conv2d(x2, w2, {1, 1, 1, 1}), Tensor<double>(Shape{4}, 1.0), Tensor<double>(Shape{4}, 0.0));
    for (std::size_t i = 0; i < y1.size(); ++i) REQUIRE(y1[i] == y2[i]);
}

TEST_CASE("grad shape equals data shape after backward") {
    Rng rng(9);
    auto x = random_tensor({2, 3}, rng);
    x.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> s(tape);
    tape.backward(sum(relu(x)));
    CHECK(x.grad().size() == x.size());
}

TEST_CASE("checkpoint round trip and corruption") {
    NamedArray a{"alpha.normal", {2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}};
    NamedArray b{"w", {4}, std::vector<float>{0.5f, -1.0f, 2.0f, 3.25f}};
    const auto bytes = encode_checkpoint(std::vector<NamedArray>{a, b});
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "SNASCKPT");
    const auto back = decode_checkpoint(bytes);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "alpha.normal");
    CHECK(back[0].shape == Shape{2, 3});
    CHECK(std::get<std::vector<double>>(back[0].values) == std::get<std::vector<double>>(a.values));
    CHECK(std::get<std::vector<float>>(back[1].values) == std::get<std::vector<float>>(b.values));

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(truncated), CheckpointError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointError);

    const auto path = std::filesystem::temp_directory_path() / "snas_ckpt_test.bin";
    write_checkpoint(path, std::vector<NamedArray>{a, b});
    CHECK(read_checkpoint(path).size() == 2);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
}
