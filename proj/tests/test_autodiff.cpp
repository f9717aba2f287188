#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "manr/optim.hpp"

using namespace manr;
using namespace manr::ad;
using manr::testing::check_gradients;
using manr::testing::random_array;

TEST(Primitives, SoftmaxSymmetric) {
    Tape t(false);
    Var s = softmax(t.constant(Array::row({0.0, 0.0})));
    EXPECT_DOUBLE_EQ(s.value().data[0], 0.5);
    EXPECT_DOUBLE_EQ(s.value().data[1], 0.5);
}

TEST(Primitives, MatmulIdentity) {
    Rng rng(1);
    Tape t(false);
    Array a = random_array(3, 4, rng);
    EXPECT_EQ(matmul(t.constant(Array::identity(3)), t.constant(a)).value(), a);
}

TEST(Primitives, Mean) {
    Tape t(false);
    EXPECT_DOUBLE_EQ(mean(t.constant(Array::row({1.0, 2.0, 3.0}))).item(), 2.0);
}

TEST(Primitives, ShapeErrorsNameBothShapes) {
    Tape t(false);
    Var a = t.constant(Array(2, 3));
    Var b = t.constant(Array(2, 3));
    try {
        matmul(a, b);
        FAIL();
    } catch (const ShapeError& e) {
        const std::string m = e.what();
        EXPECT_NE(m.find("[2x3]"), std::string::npos) << m;
    }
    EXPECT_THROW(add(a, t.constant(Array(3, 3))), ShapeError);
    EXPECT_THROW(concat_rows({a, t.constant(Array(1, 2))}), ShapeError);
    EXPECT_THROW(concat_cols({a, t.constant(Array(1, 2))}), ShapeError);
}

TEST(Backward, Square) {
    Tape t(true);
    Var x = t.variable(Array::scalar(3.0));
    Var y = mul(x, x);
    t.backward(y);
    EXPECT_DOUBLE_EQ(t.grad(x).item(), 6.0);
}

TEST(Backward, ConstantFunctionZeroGradient) {
    Tape t(true);
    Var x = t.variable(Array::row({1.0, 2.0}));
    Var y = sum(t.constant(Array::row({4.0, 5.0})));
    t.backward(y);
    EXPECT_EQ(t.grad(x), Array(1, 2));
}

TEST(Backward, NonScalarIsContractError) {
    Tape t(true);
    Var x = t.variable(Array::row({1.0, 2.0}));
    EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Backward, SoftmaxDotMatchesFiniteDifferences) {
    Rng rng(2);
    Array c = random_array(1, 5, rng);
    auto r = check_gradients({random_array(1, 5, rng)}, [&](Tape& t, const std::vector<Var>& v) {
        return sum(mul(softmax(v[0]), t.constant(c)));
    });
    EXPECT_LT(r.max_rel, 1e-6);
}

TEST(Backward, EveryPrimitiveMatchesFiniteDifferences) {
    Rng rng(3);
    for (int seed = 0; seed < 5; ++seed) {
        auto r = check_gradients(
            {random_array(3, 4, rng), random_array(4, 2, rng), random_array(1, 2, rng), random_array(3, 2, rng)},
            [](Tape&, const std::vector<Var>& v) {
                Var h = add(matmul(v[0], v[1]), v[2]);
                Var a = tanh(h);
                Var b = sigmoid(sub(h, v[3]));
                Var c = relu(add_scalar(mul(a, b), 0.1));
                Var d = log_softmax(concat_cols({a, c}));
                Var e = softmax(transpose(b));
                Var f = concat_rows({gather_rows(d, {2, 0}), broadcast_rows(mean_rows(d), 1)});
                Var g = log(add_scalar(square(slice_cols(f, 1, 3)), 1.0));
                return add(add(scale(sum(g), 0.7), mean(e)), pick(d, 1, 3));
            });
        EXPECT_LT(r.max_rel, 1e-6) << "seed " << seed;
    }
}

TEST(Backward, Deterministic) {
    Rng rng(4);
    Array a = random_array(4, 4, rng);
    auto run = [&]() {
        Tape t(true);
        Var x = t.variable(a);
        t.backward(sum(tanh(matmul(x, x))));
        return t.grad(x);
    };
    EXPECT_EQ(run(), run());
}

TEST(Backward, ParameterReferenceAccumulatesAcrossUses) {
    Tape t(true);
    Array w = Array::scalar(2.0);
    Var p = t.parameter(w);
    t.backward(add(mul(p, p), p));  // 2w + 1 = 5
    EXPECT_DOUBLE_EQ(t.grad(p).item(), 5.0);
}

TEST(Adam, ZeroGradientLeavesParams) {
    std::vector<Array> p{Array::row({1.0, -2.0})};
    auto st = OptimizerState::for_params(p, 5e-4);
    adam_step(p, {Array(1, 2)}, st, 5e-4);
    EXPECT_NEAR(p[0].data[0], 1.0, 1e-12);
    EXPECT_NEAR(p[0].data[1], -2.0, 1e-12);
}

TEST(Adam, FirstStepIsLrTimesSign) {
    std::vector<Array> p{Array::row({0.0, 0.0})};
    auto st = OptimizerState::for_params(p, 1e-3);
    adam_step(p, {Array::row({0.3, -7.0})}, st, 1e-3);
    EXPECT_NEAR(p[0].data[0], -1e-3, 1e-10);
    EXPECT_NEAR(p[0].data[1], 1e-3, 1e-10);
}

TEST(Adam, ConstantGradientDescends) {
    std::vector<Array> p{Array::scalar(1.0)};
    auto st = OptimizerState::for_params(p, 1e-2);
    for (int i = 0; i < 100; ++i) adam_step(p, {Array::scalar(0.5)}, st, 1e-2);
    EXPECT_LT(p[0].item(), 1.0);
    EXPECT_EQ(st.step, 100);
}

TEST(Adam, ShapeMismatch) {
    std::vector<Array> p{Array::scalar(1.0)};
    auto st = OptimizerState::for_params(p, 1e-2);
    EXPECT_THROW(adam_step(p, {Array(1, 2)}, st, 1e-2), ShapeError);
}

TEST(Clip, Examples) {
    std::vector<Array> g{Array::row({0.04, 0.0})};
    EXPECT_NEAR(clip_gradients(g, 0.05), 0.04, 1e-15);
    EXPECT_DOUBLE_EQ(g[0].data[0], 0.04);

    std::vector<Array> h{Array::row({0.06, 0.0}), Array::row({0.08})};
    EXPECT_NEAR(clip_gradients(h, 0.05), 0.10, 1e-15);
    EXPECT_NEAR(h[0].data[0], 0.03, 1e-15);
    EXPECT_NEAR(h[1].data[0], 0.04, 1e-15);

    std::vector<Array> z{Array(2, 2)};
    clip_gradients(z, 0.05);
    EXPECT_EQ(z[0], Array(2, 2));
    EXPECT_THROW(clip_gradients(z, 0.0), ContractError);
}

TEST(LearningRate, Staircase) {
    EXPECT_DOUBLE_EQ(lr_at(5e-4, 0), 5e-4);
    EXPECT_NEAR(lr_at(5e-4, 200), 4.5e-4, 1e-18);
    EXPECT_NEAR(lr_at(5e-4, 399), 4.5e-4, 1e-18);
    EXPECT_NEAR(lr_at(5e-4, 400), 4.05e-4, 1e-18);
    EXPECT_THROW(lr_at(5e-4, -1), ContractError);
}
