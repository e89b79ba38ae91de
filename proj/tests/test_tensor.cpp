#include <doctest.h>

#include <random>

#include "cfd/tensor.hpp"

using cfd::Tensor;
using TD = Tensor<double>;
using TF = Tensor<float>;

namespace {

// Independent sliding-window convolution oracle (plain loops, no tape).
std::vector<double> conv2d_oracle(const std::vector<double>& in, int h, int w, int cin,
                                  const std::vector<double>& wt, int k, int cout,
                                  const std::vector<double>& bias, int stride, int pad, int& ho,
                                  int& wo) {
    ho = (h + 2 * pad - k) / stride + 1;
    wo = (w + 2 * pad - k) / stride + 1;
    std::vector<double> out(static_cast<size_t>(ho) * wo * cout, 0.0);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
            for (int oc = 0; oc < cout; ++oc) {
                double acc = bias[static_cast<size_t>(oc)];
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        for (int ic = 0; ic < cin; ++ic) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += in[(static_cast<size_t>(iy) * w + ix) * cin + ic] *
                                   wt[((static_cast<size_t>(ky) * k + kx) * cin + ic) * cout + oc];
                        }
                out[(static_cast<size_t>(oy) * wo + ox) * cout + oc] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("conv2d identity: 1x1 per-channel identity kernel") {
    std::mt19937_64 rng(11);
    const TD input = cfd::rand_uniform<double>(rng, {4, 5, 3}, -1.0, 1.0);
    std::vector<double> wv(1 * 1 * 3 * 3, 0.0);
    for (int c = 0; c < 3; ++c) wv[static_cast<size_t>(c) * 3 + c] = 1.0;  // [1,1,Cin,Cout]
    const TD weight = TD::from_data({1, 1, 3, 3}, wv);
    const TD bias = TD::zeros({3});
    const TD out = cfd::conv2d(input, weight, bias, 1, 0);
    REQUIRE(out.shape() == input.shape());
    for (size_t i = 0; i < out.data().size(); ++i) CHECK(out.data()[i] == input.data()[i]);
}

TEST_CASE("conv2d all-ones 3x3 on all-ones 5x5 pad 1: interior 9, corners 4") {
    const TD input = TD::full({5, 5, 1}, 1.0);
    const TD weight = TD::full({3, 3, 1, 1}, 1.0);
    const TD bias = TD::zeros({1});
    const TD out = cfd::conv2d(input, weight, bias, 1, 1);
    // cross-check against the brute-force oracle as well
    int ho = 0, wo = 0;
    const auto oracle = conv2d_oracle(std::vector<double>(25, 1.0), 5, 5, 1,
                                      std::vector<double>(9, 1.0), 3, 1, {0.0}, 1, 1, ho, wo);
    REQUIRE(ho == 5);
    REQUIRE(wo == 5);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x)
            CHECK(out.at({y, x, 0}) == oracle[static_cast<size_t>(y) * 5 + x]);
    CHECK(out.at({2, 2, 0}) == 9.0);
    CHECK(out.at({0, 0, 0}) == 4.0);
    CHECK(out.at({0, 4, 0}) == 4.0);
    CHECK(out.at({4, 4, 0}) == 4.0);
    CHECK(out.at({0, 2, 0}) == 6.0);  // edge
}

TEST_CASE("conv2d forward matches oracle on random shapes, f64 exact") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        std::uniform_int_distribution<int> dc(1, 3), ds(1, 2), dm(2, 4);
        const int cin = dc(rng), cout = dc(rng), stride = ds(rng);
        const int ho_want = dm(rng), wo_want = dm(rng);
        const int h = (ho_want - 1) * stride + 1, w = (wo_want - 1) * stride + 1;
        const TD input = cfd::rand_uniform<double>(rng, {h, w, cin}, -1.0, 1.0);
        const TD weight = cfd::rand_uniform<double>(rng, {3, 3, cin, cout}, -1.0, 1.0);
        const TD bias = cfd::rand_uniform<double>(rng, {cout}, -0.5, 0.5);
        const TD out = cfd::conv2d(input, weight, bias, stride, 1);
        int ho = 0, wo = 0;
        const auto oracle = conv2d_oracle(
            {input.data().begin(), input.data().end()}, h, w, cin,
            {weight.data().begin(), weight.data().end()}, 3, cout,
            {bias.data().begin(), bias.data().end()}, stride, 1, ho, wo);
        REQUIRE(out.shape() == cfd::Shape{ho, wo, cout});
        for (size_t i = 0; i < oracle.size(); ++i)
            CHECK(out.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv2d rejects bad shapes and non-integer output sizes") {
    const TD input = TD::zeros({5, 5, 2});
    CHECK_THROWS(cfd::conv2d(input, TD::zeros({3, 3, 3, 4}), TD::zeros({4}), 1, 1));
    CHECK_THROWS(cfd::conv2d(input, TD::zeros({2, 2, 2, 4}), TD::zeros({4}), 1, 0));  // even k
    CHECK_THROWS(cfd::conv2d(input, TD::zeros({3, 3, 2, 4}), TD::zeros({3}), 1, 1));  // bias
    CHECK_THROWS(cfd::conv2d(input, TD::zeros({3, 3, 2, 4}), TD::zeros({4}), 2, 1));  // 4 % 2
}

TEST_CASE("gradient of sum(conv2d) w.r.t. weight matches finite differences") {
    std::mt19937_64 rng(17);
    const TD input = cfd::rand_uniform<double>(rng, {5, 6, 2}, -1.0, 1.0);
    TD weight = cfd::rand_uniform<double>(rng, {3, 3, 2, 2}, -1.0, 1.0, true);
    const TD bias = TD::zeros({2});
    const TD loss = cfd::sum(cfd::conv2d(input, weight, bias, 1, 1));
    loss.backward();
    const TD fd = cfd::finite_diff_grad<double>(
        [&](const TD& w) { return cfd::sum(cfd::conv2d(input, w, bias, 1, 1)).item(); }, weight);
    CHECK(cfd::max_rel_err<double>(weight.grad(), fd.data()) < 1e-5);
}

TEST_CASE("elementwise basics") {
    CHECK(cfd::sigmoid(TD::scalar(0.0)).item() == 0.5);
    const TD a = TD::from_data({2}, {2.0, 3.0});
    const TD b = TD::from_data({1}, {10.0});
    const TD prod = cfd::mul(a, b);  // broadcast single element
    CHECK(prod.at({0}) == 20.0);
    CHECK(prod.at({1}) == 30.0);
}

TEST_CASE("sigmoid derivative at zero is 0.25, analytic and finite difference") {
    TD x = TD::scalar(0.0);
    x.set_requires_grad(true);
    cfd::sigmoid(x).backward();
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
    const TD fd = cfd::finite_diff_grad<double>(
        [](const TD& t) { return cfd::sigmoid(t).item(); }, TD::scalar(0.0));
    CHECK(fd.data()[0] == doctest::Approx(0.25).epsilon(1e-8));
}

TEST_CASE("strict mode: log and divide reject non-positive input at f64") {
    CHECK_THROWS_AS((void)cfd::log(TD::scalar(0.0)), std::domain_error);
    CHECK_THROWS_AS((void)cfd::log(TD::scalar(-1.0)), std::domain_error);
    CHECK_THROWS_AS((void)cfd::divide(TD::scalar(1.0), TD::scalar(0.0)), std::domain_error);
    CHECK_THROWS_AS((void)cfd::sqrt(TD::scalar(-1.0)), std::domain_error);
}

TEST_CASE("training mode: log and sqrt are epsilon-clamped at f32") {
    CHECK(std::isfinite(cfd::log(TF::scalar(0.0f)).item()));
    CHECK(std::isfinite(cfd::sqrt(TF::scalar(-0.5f)).item()));
    CHECK(std::isfinite(cfd::divide(TF::scalar(1.0f), TF::scalar(0.0f)).item()));
}

TEST_CASE("global_avg_pool values and gradient") {
    const TD c = TD::full({3, 4, 2}, 1.5);
    const TD pooled = cfd::global_avg_pool(c);
    REQUIRE(pooled.shape() == cfd::Shape{1, 1, 2});
    CHECK(pooled.at({0, 0, 0}) == 1.5);

    const TD g = TD::from_data({2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
    CHECK(cfd::global_avg_pool(g).item() == doctest::Approx(2.5));

    TD x = TD::from_data({2, 2, 1}, {1.0, 2.0, 3.0, 4.0}, true);
    cfd::sum(cfd::global_avg_pool(x)).backward();
    for (double gv : x.grad()) CHECK(gv == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward: x^2 at x=3 gives 6; sum(a*b) gives b") {
    TD x = TD::scalar(3.0);
    x.set_requires_grad(true);
    cfd::square(x).backward();
    CHECK(x.grad()[0] == 6.0);

    std::mt19937_64 rng(3);
    TD a = cfd::rand_uniform<double>(rng, {3, 2, 2}, -1.0, 1.0, true);
    const TD b = cfd::rand_uniform<double>(rng, {3, 2, 2}, -1.0, 1.0);
    cfd::sum(cfd::mul(a, b)).backward();
    for (size_t i = 0; i < b.data().size(); ++i) CHECK(a.grad()[i] == b.data()[i]);
}

TEST_CASE("backward errors: non-scalar loss, repeated call") {
    TD x = cfd::rand_uniform<double>(*new std::mt19937_64(1), {2, 2}, 0.0, 1.0, true);
    const TD y = cfd::square(x);
    CHECK_THROWS_AS(y.backward(), std::invalid_argument);
    const TD loss = cfd::sum(y);
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), std::logic_error);
}

TEST_CASE("broadcast gradient reduces over expanded axes") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        const cfd::Shape full = {3, 4, 5};
        TD pa = cfd::rand_uniform<double>(rng, {3, 4, 1}, 0.1, 0.9, true);
        TD ca = cfd::rand_uniform<double>(rng, {1, 1, 5}, 0.1, 0.9, true);
        const TD f = cfd::rand_uniform<double>(rng, full, -1.0, 1.0);
        cfd::sum(cfd::mul(cfd::mul(f, pa), ca)).backward();
        REQUIRE(pa.grad().size() == 12);  // grad has the pre-broadcast shape
        REQUIRE(ca.grad().size() == 5);
        // spot-check the reduction: d/d pa[y,x] = sum_c f[y,x,c]*ca[c]
        double expect = 0.0;
        for (int c = 0; c < 5; ++c) expect += f.at({1, 2, c}) * ca.at({0, 0, c});
        CHECK(pa.grad()[1 * 4 + 2] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("forward and backward are bit-deterministic given identical inputs") {
    auto run = [](uint64_t seed) {
        std::mt19937_64 rng(seed);
        TD x = cfd::rand_uniform<double>(rng, {4, 4, 3}, -1.0, 1.0, true);
        const TD w = cfd::rand_uniform<double>(rng, {3, 3, 3, 2}, -1.0, 1.0);
        const TD loss =
            cfd::sum(cfd::sigmoid(cfd::conv2d(x, w, TD::zeros({2}), 1, 1)));
        loss.backward();
        std::vector<double> out(x.grad().begin(), x.grad().end());
        out.push_back(loss.item());
        return out;
    };
    CHECK(run(99) == run(99));
}

TEST_CASE("finite_diff_grad basics") {
    const TD ones_fd = cfd::finite_diff_grad<double>(
        [](const TD& t) { return cfd::sum(t).item(); }, TD::full({3, 2}, 0.7));
    for (double v : ones_fd.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    const TD sq = cfd::finite_diff_grad<double>(
        [](const TD& t) { return cfd::square(t).item(); }, TD::scalar(3.0));
    CHECK(sq.data()[0] == doctest::Approx(6.0).epsilon(1e-7));
}

TEST_CASE("backward agrees with finite differences on random composite graphs") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed * 7919 + 1);
        std::uniform_int_distribution<int64_t> dim(2, 4);
        const cfd::Shape s = {dim(rng), dim(rng), dim(rng)};
        TD x = cfd::rand_uniform<double>(rng, s, 0.2, 1.2, true);
        const TD a = cfd::rand_uniform<double>(rng, s, -1.0, 1.0);
        const TD pa = cfd::rand_uniform<double>(rng, {s[0], s[1], 1}, 0.1, 0.9);

        auto graph = [&](const TD& t) {
            const TD u = cfd::mul(cfd::sigmoid(cfd::mul(t, pa)), cfd::exp(cfd::mul_scalar(a, 0.3)));
            const TD v = cfd::add(cfd::tanh(u), cfd::square(t));
            return cfd::mean(cfd::mul(v, cfd::global_avg_pool(v)));
        };
        graph(x).backward();
        const TD fd = cfd::finite_diff_grad<double>(
            [&](const TD& t) { return graph(t).item(); }, x);
        CHECK(cfd::max_rel_err<double>(x.grad(), fd.data()) < 1e-5);
    }
}

TEST_CASE("detach cuts the tape") {
    TD x = TD::scalar(2.0);
    x.set_requires_grad(true);
    const TD y = cfd::square(x).detach();
    CHECK_FALSE(y.requires_grad());
    const TD z = cfd::mul(cfd::square(x), y);
    z.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0 * 2.0 * 4.0));  // d/dx x^2 * 4
}

TEST_CASE("NoGradGuard suppresses recording") {
    TD x = TD::scalar(1.5);
    x.set_requires_grad(true);
    cfd::NoGradGuard ng;
    const TD y = cfd::square(x);
    CHECK_FALSE(y.requires_grad());
}
