#include "doctest.h"
#include "snas/nn_ops.hpp"
#include "support.hpp"

using namespace snas;
using snas::test::random_tensor;

TEST_CASE("op names round trip") {
    for (OpKind k : full_op_set()) CHECK(parse_op(op_name(k)) == k);
    CHECK_FALSE(parse_op("conv_7x7").has_value());
    CHECK(full_op_set().size() == 8);
    CHECK(reduced_op_set().back() == OpKind::zero);
}

TEST_CASE("reference conv cost") {
    const OpCost c = conv_layer_cost(ConvLayer{3, 3, 16, 16, 1}, 8, 8);
    CHECK(c.params == 2304);
    CHECK(c.flops == 147456);
    CHECK(c.mac == 4352);
}

TEST_CASE("parameter-free op costs") {
    CHECK(op_cost(OpKind::skip, 8, 8, 16, 16) == OpCost{0, 0, 2048});
    CHECK(op_cost(OpKind::zero, 8, 8, 16, 16) == OpCost{0, 0, 0});
    const OpCost pool = op_cost(OpKind::avg_pool_3x3, 8, 8, 16, 16);
    CHECK(pool.params == 0);
    CHECK(pool.flops == 8 * 8 * 9 * 16 * 16);
    CHECK(pool.mac == 2048);
}

TEST_CASE("conv flops are proportional to params") {
    for (OpKind k : full_op_set()) {
        if (!is_conv(k)) continue;
        for (std::uint64_t hw : {4u, 8u}) {
            const OpCost c = op_cost(k, hw, hw, 16, 16);
            CHECK(c.flops == hw * hw * c.params);
        }
    }
    const OpCost proj = op_cost(OpKind::skip, 4, 4, 16, 16, 2);
    CHECK(proj.params == 256);
    CHECK(proj.flops == 16 * proj.params);
}

TEST_CASE("separable conv cost sums its constituent layers") {
    const OpCost c = op_cost(OpKind::sep_conv_3x3, 8, 8, 16, 16);
    // two depthwise 3x3 (144 params each) and two pointwise (256 each)
    CHECK(c.params == 2 * 144 + 2 * 256);
    CHECK(c.mac == 4 * 2048 + c.params);
}

TEST_CASE("cost triple separates the four op classes") {
    const OpCost conv = op_cost(OpKind::sep_conv_3x3, 8, 8, 16, 16);
    const OpCost pool = op_cost(OpKind::max_pool_3x3, 8, 8, 16, 16);
    const OpCost skip = op_cost(OpKind::skip, 8, 8, 16, 16);
    const OpCost zero = op_cost(OpKind::zero, 8, 8, 16, 16);
    CHECK(conv.params != pool.params);
    CHECK(pool.flops != skip.flops);
    CHECK(skip.mac != zero.mac);
}

TEST_CASE("apply_op shapes and simple values") {
    Rng rng(11);
    ParamStore<double> params;
    auto x = random_tensor({2, 4, 6, 6}, rng);
    CandidateOp<double> zero(OpKind::zero, {4, 4, 1}, params, "z", rng);
    auto z = zero.forward(x);
    CHECK(z.shape() == x.shape());
    for (double v : z.data()) CHECK(v == 0.0);

    CandidateOp<double> skip(OpKind::skip, {4, 4, 1}, params, "s", rng);
    CHECK(skip.forward(x).same_storage(x));

    CandidateOp<double> avg(OpKind::avg_pool_3x3, {4, 4, 1}, params, "a", rng);
    auto c = avg.forward(Tensor<double>(Shape{1, 4, 6, 6}, 2.5));
    CHECK(c[1 * 6 + 1] == doctest::Approx(2.5));
    CHECK(c[0] == doctest::Approx(2.5 * 4.0 / 9.0));

    for (OpKind k : full_op_set()) {
        CandidateOp<double> strided(k, {4, 4, 2}, params, "r" + std::string(op_name(k)), rng);
        CHECK(strided.forward(x).shape() == Shape{2, 4, 3, 3});
        CandidateOp<double> same(k, {4, 4, 1}, params, "n" + std::string(op_name(k)), rng);
        CHECK(same.forward(x).shape() == x.shape());
    }
    CHECK_THROWS_AS(CandidateOp<double>(OpKind::max_pool_3x3, {4, 8, 1}, params, "bad", rng), std::invalid_argument);
    CHECK_THROWS_AS(skip.forward(random_tensor({1, 3, 4, 4}, rng)), ShapeError);
}

TEST_CASE("parameterized ops pass the gradient check") {
    Rng rng(12);
    for (OpKind k : {OpKind::sep_conv_3x3, OpKind::sep_conv_5x5, OpKind::dil_conv_3x3, OpKind::dil_conv_5x5,
                     OpKind::skip}) {
        for (std::size_t stride : {1u, 2u}) {
            if (k == OpKind::skip && stride == 1) continue;
            ParamStore<double> params;
            CandidateOp<double> op(k, {3, 3, stride}, params, "op", rng);
            auto x = random_tensor({3, 3, 5, 5}, rng);
            auto probe = random_tensor(op.output_shape(x.shape()), rng);
            Tape<double> tape;
            {
                TapeScope<double> s(tape);
                tape.backward(dot(op.forward(x), probe));
            }
            auto eval = [&] {
                NoGradScope<double> ng;
                return dot(op.forward(x), probe).item();
            };
            GradCheckResult total;
            for (auto& [name, p] : params) {
                std::vector<double> g(p.grad().begin(), p.grad().end());
                total.merge(check_gradient(p, g, eval));
            }
            INFO(op_name(k) << " stride " << stride << " err " << total.max_rel_error);
            CHECK(total.failures == 0);
            CHECK(total.kink_fraction() <= 0.01);
        }
    }
}
