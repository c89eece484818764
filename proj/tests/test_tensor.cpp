#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "qstar/tensor.hpp"
#include "reference.hpp"

using namespace qstar;

namespace {

Tensor randt(Shape shape, Rng& rng, bool requires_grad = false) {
    return Tensor::gaussian(std::move(shape), rng, 1.0, requires_grad);
}

}  // namespace

TEST_CASE("matmul matches a triple-loop product") {
    Rng rng(101);
    Tensor a = randt({5, 7}, rng), b = randt({7, 4}, rng);
    Tensor c = matmul(a, b);
    ref::Mat expect = ref::matmul(ref::from_tensor2d(a), ref::from_tensor2d(b));
    REQUIRE(c.shape() == Shape{5, 4});
    CHECK(ref::max_abs_diff(c.data(), expect.d) < 1e-12);
}

TEST_CASE("matmul batches and broadcasts the leading extents") {
    Rng rng(102);
    Tensor a = randt({3, 4, 5}, rng), b = randt({3, 5, 2}, rng);
    Tensor c = matmul(a, b);
    REQUIRE(c.shape() == Shape{3, 4, 2});
    for (int64_t bi = 0; bi < 3; ++bi) {
        ref::Mat ma(4, 5), mb(5, 2);
        std::copy(a.data().begin() + bi * 20, a.data().begin() + (bi + 1) * 20, ma.d.begin());
        std::copy(b.data().begin() + bi * 10, b.data().begin() + (bi + 1) * 10, mb.d.begin());
        ref::Mat mc = ref::matmul(ma, mb);
        for (int64_t i = 0; i < 8; ++i) CHECK(c.data()[bi * 8 + i] == doctest::Approx(mc.d[i]).epsilon(1e-12));
    }

    // right operand shared across the batch
    Tensor shared = randt({5, 2}, rng);
    Tensor c2 = matmul(a, shared);
    REQUIRE(c2.shape() == Shape{3, 4, 2});
    for (int64_t bi = 0; bi < 3; ++bi) {
        ref::Mat ma(4, 5);
        std::copy(a.data().begin() + bi * 20, a.data().begin() + (bi + 1) * 20, ma.d.begin());
        ref::Mat mc = ref::matmul(ma, ref::from_tensor2d(shared));
        for (int64_t i = 0; i < 8; ++i) CHECK(c2.data()[bi * 8 + i] == doctest::Approx(mc.d[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul rejects mismatched inner extents") {
    Rng rng(103);
    Tensor a = randt({3, 4}, rng), b = randt({5, 2}, rng);
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(randt({4}, rng), b), ShapeError);
}

TEST_CASE("broadcast add and mul follow numpy rules") {
    Rng rng(104);
    Tensor a = randt({3, 4}, rng);
    Tensor row = randt({1, 4}, rng);
    Tensor s = add(a, row);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 4; ++j)
            CHECK(s.data()[i * 4 + j] == doctest::Approx(a.data()[i * 4 + j] + row.data()[j]));
    Tensor col = randt({3, 1}, rng);
    Tensor m = mul(a, col);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 4; ++j)
            CHECK(m.data()[i * 4 + j] == doctest::Approx(a.data()[i * 4 + j] * col.data()[i]));
    CHECK_THROWS_AS(add(a, randt({3, 5}, rng)), ShapeError);
}

TEST_CASE("softmax rows sum to one and match the stable reference") {
    Rng rng(105);
    Tensor x = randt({6, 9}, rng);
    Tensor y = softmax(x, 1);
    for (int64_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        std::vector<double> row(x.data().begin() + i * 9, x.data().begin() + (i + 1) * 9);
        std::vector<double> expect = ref::softmax(row);
        for (int64_t j = 0; j < 9; ++j) {
            sum += y.data()[i * 9 + j];
            CHECK(y.data()[i * 9 + j] == doctest::Approx(expect[j]).epsilon(1e-12));
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    // softmax along axis 0 of the transpose gives the same numbers
    Tensor yt = softmax(transpose2d(x), 0);
    for (int64_t i = 0; i < 6; ++i)
        for (int64_t j = 0; j < 9; ++j)
            CHECK(yt.data()[j * 6 + i] == doctest::Approx(y.data()[i * 9 + j]).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant and survives large magnitudes") {
    Tensor x = Tensor::from_data({4}, {1000.0, 1001.0, 999.0, 1000.5});
    Tensor y = softmax(x, 0);
    double sum = 0.0;
    for (double v : y.data()) {
        CHECK(std::isfinite(v));
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("reductions remove the axis and match loop sums") {
    Rng rng(106);
    Tensor x = randt({3, 4, 5}, rng);
    Tensor s1 = reduce_sum(x, 1);
    REQUIRE(s1.shape() == Shape{3, 5});
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t k = 0; k < 5; ++k) {
            double expect = 0.0;
            for (int64_t j = 0; j < 4; ++j) expect += x.data()[(i * 4 + j) * 5 + k];
            CHECK(s1.data()[i * 5 + k] == doctest::Approx(expect).epsilon(1e-12));
        }
    Tensor m0 = reduce_mean(x, 0);
    REQUIRE(m0.shape() == Shape{4, 5});
    for (int64_t j = 0; j < 20; ++j) {
        double expect = (x.data()[j] + x.data()[20 + j] + x.data()[40 + j]) / 3.0;
        CHECK(m0.data()[j] == doctest::Approx(expect).epsilon(1e-12));
    }
    double total = 0.0;
    for (double v : x.data()) total += v;
    CHECK(reduce_sum_all(x).item() == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("concat, stack, transpose, reshape and take rearrange data faithfully") {
    Rng rng(107);
    Tensor a = randt({2, 3}, rng), b = randt({2, 2}, rng);
    Tensor cat = concat({a, b}, 1);
    REQUIRE(cat.shape() == Shape{2, 5});
    for (int64_t i = 0; i < 2; ++i) {
        for (int64_t j = 0; j < 3; ++j) CHECK(cat.data()[i * 5 + j] == a.data()[i * 3 + j]);
        for (int64_t j = 0; j < 2; ++j) CHECK(cat.data()[i * 5 + 3 + j] == b.data()[i * 2 + j]);
    }
    CHECK_THROWS_AS(concat({a, b}, 0), ShapeError);

    Tensor st = stack0({a, a});
    REQUIRE(st.shape() == Shape{2, 2, 3});
    for (int64_t i = 0; i < 6; ++i) {
        CHECK(st.data()[i] == a.data()[i]);
        CHECK(st.data()[6 + i] == a.data()[i]);
    }

    Tensor x = randt({2, 3, 4}, rng);
    Tensor tr = transpose(x, {1, 0, 2});
    REQUIRE(tr.shape() == Shape{3, 2, 4});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j)
            for (int64_t k = 0; k < 4; ++k)
                CHECK(tr.data()[(j * 2 + i) * 4 + k] == x.data()[(i * 3 + j) * 4 + k]);

    Tensor rs = reshape(x, {6, 4});
    CHECK(rs.data() == x.data());
    CHECK_THROWS_AS(reshape(x, {5, 4}), ShapeError);

    Tensor tk = take(x, 0, 1);
    REQUIRE(tk.shape() == Shape{3, 4});
    for (int64_t i = 0; i < 12; ++i) CHECK(tk.data()[i] == x.data()[12 + i]);
    Tensor tk1 = take(x, 1, 2);
    REQUIRE(tk1.shape() == Shape{2, 4});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t k = 0; k < 4; ++k) CHECK(tk1.data()[i * 4 + k] == x.data()[(i * 3 + 2) * 4 + k]);
}

TEST_CASE("linear applies x W + b") {
    Rng rng(108);
    Tensor x = randt({3, 4}, rng), w = randt({4, 6}, rng), b = randt({6}, rng);
    Tensor y = linear(x, w, b);
    ref::Mat expect = ref::add_row(ref::matmul(ref::from_tensor2d(x), ref::from_tensor2d(w)), b.data());
    CHECK(ref::max_abs_diff(y.data(), expect.d) < 1e-12);
    Tensor y2 = linear(x, w, Tensor());
    ref::Mat expect2 = ref::matmul(ref::from_tensor2d(x), ref::from_tensor2d(w));
    CHECK(ref::max_abs_diff(y2.data(), expect2.d) < 1e-12);
}

TEST_CASE("conv1d matches the padded cross-correlation loop") {
    Rng rng(109);
    Tensor x = randt({3, 7}, rng);
    Tensor w = randt({5, 3, 3}, rng);
    Tensor b = randt({5}, rng);
    Tensor y = conv1d(x, w, b, 1);
    ref::Mat expect = ref::conv1d(ref::from_tensor2d(x), w, b, 1);
    REQUIRE(y.shape() == Shape{5, 7});
    CHECK(ref::max_abs_diff(y.data(), expect.d) < 1e-12);
    CHECK_THROWS_AS(conv1d(x, randt({5, 3, 4}, rng), b, 1), ShapeError);
    CHECK_THROWS_AS(conv1d(x, randt({5, 2, 3}, rng), b, 1), ShapeError);
}

TEST_CASE("batchnorm training mode normalizes with batch statistics") {
    Rng rng(110);
    Tensor x = randt({4, 6}, rng);
    Tensor gamma = randt({4}, rng), beta = randt({4}, rng);
    BatchNormState state;
    state.running_mean.assign(4, 0.0);
    state.running_var.assign(4, 1.0);
    Tensor y = batchnorm(x, gamma, beta, state, true, true);

    std::vector<double> mean, var;
    ref::Mat mx = ref::from_tensor2d(x);
    ref::instance_stats(mx, mean, var);
    ref::Mat expect = ref::batchnorm_with(mx, gamma.data(), beta.data(), mean, var);
    CHECK(ref::max_abs_diff(y.data(), expect.d) < 1e-12);

    // running = (1 - momentum) * running + momentum * batch
    for (int64_t c = 0; c < 4; ++c) {
        CHECK(state.running_mean[c] == doctest::Approx(0.1 * mean[c]).epsilon(1e-12));
        CHECK(state.running_var[c] == doctest::Approx(0.9 + 0.1 * var[c]).epsilon(1e-12));
    }

    // eval mode uses the running estimates, not the batch
    Tensor ye = batchnorm(x, gamma, beta, state, false, false);
    ref::Mat expect_ev =
        ref::batchnorm_with(mx, gamma.data(), beta.data(), state.running_mean, state.running_var);
    CHECK(ref::max_abs_diff(ye.data(), expect_ev.d) < 1e-12);

    // training without the update flag leaves the state untouched
    std::vector<double> before_m = state.running_mean, before_v = state.running_var;
    batchnorm(x, gamma, beta, state, true, false);
    CHECK(state.running_mean == before_m);
    CHECK(state.running_var == before_v);
}

TEST_CASE("layernorm matches the biased-variance reference") {
    Rng rng(111);
    Tensor x = randt({5, 8}, rng);
    Tensor gamma = randt({8}, rng), beta = randt({8}, rng);
    Tensor y = layernorm(x, gamma, beta);
    ref::Mat expect = ref::layernorm(ref::from_tensor2d(x), gamma.data(), beta.data());
    CHECK(ref::max_abs_diff(y.data(), expect.d) < 1e-12);
}

TEST_CASE("cross entropy equals log-sum-exp minus the target logit") {
    Rng rng(112);
    Tensor logits = randt({8}, rng, true);
    Tensor loss = cross_entropy_with_logits(logits, 3);
    double mx = *std::max_element(logits.data().begin(), logits.data().end());
    double lse = 0.0;
    for (double v : logits.data()) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    CHECK(loss.item() == doctest::Approx(lse - logits.data()[3]).epsilon(1e-12));

    backward(loss);
    std::vector<double> p = ref::softmax(logits.data());
    for (int64_t i = 0; i < 8; ++i) {
        double expect = p[i] - (i == 3 ? 1.0 : 0.0);
        CHECK(logits.grad()[i] == doctest::Approx(expect).epsilon(1e-10));
    }

    CHECK_THROWS_AS(cross_entropy_with_logits(logits, 8), ConfigError);
    CHECK_THROWS_AS(cross_entropy_with_logits(logits, -1), ConfigError);
    CHECK_THROWS_AS(cross_entropy_with_logits(randt({2, 4}, rng), 0), ShapeError);
}

TEST_CASE("backward accumulates over shared subgraphs") {
    Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    Tensor y = add(x, x);  // dy/dx = 2 per coordinate
    Tensor loss = reduce_sum_all(mul(y, y));  // d/dx sum((2x)^2) = 8x
    backward(loss);
    for (int64_t i = 0; i < 3; ++i)
        CHECK(x.grad()[i] == doctest::Approx(8.0 * x.data()[i]).epsilon(1e-12));
}

TEST_CASE("op counter advances once per graph node") {
    Rng rng(113);
    Tensor a = randt({2, 2}, rng), b = randt({2, 2}, rng);
    uint64_t before = op_counter();
    Tensor c = matmul(add(a, b), b);
    (void)c;
    CHECK(op_counter() - before == 2);
}

TEST_CASE("grad_check passes on a mixed composite expression") {
    Rng rng(114);
    Tensor x = randt({3, 4}, rng, true);
    Tensor w = randt({4, 4}, rng, true);
    Tensor g = randt({4}, rng, true);
    Tensor b = randt({4}, rng, true);
    Rng probe_rng(115);
    Tensor probe = Tensor::gaussian({3, 4}, probe_rng);
    auto closure = [&]() {
        Tensor h = layernorm(tanh_op(matmul(x, w)), g, b);
        return reduce_sum_all(mul(softmax(h, 1), probe));
    };
    GradCheckReport rep = grad_check("composite", closure, {x, w, g, b}, 1e-4);
    INFO(rep.op_name << " max_rel_error=" << rep.max_rel_error);
    CHECK(rep.passed);
}

TEST_CASE("relu and tanh gradients are exact") {
    Tensor x = Tensor::from_data({4}, {-1.5, -0.25, 0.25, 2.0}, true);
    Tensor loss = reduce_sum_all(relu(x));
    backward(loss);
    std::vector<double> expect = {0.0, 0.0, 1.0, 1.0};
    for (int64_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == expect[i]);

    Tensor x2 = Tensor::from_data({2}, {0.3, -0.7}, true);
    Tensor loss2 = reduce_sum_all(tanh_op(x2));
    backward(loss2);
    for (int64_t i = 0; i < 2; ++i) {
        double t = std::tanh(x2.data()[i]);
        CHECK(x2.grad()[i] == doctest::Approx(1.0 - t * t).epsilon(1e-12));
    }
}
