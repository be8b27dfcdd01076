#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "afford3d/errors.hpp"
#include "afford3d/nn.hpp"
#include "afford3d/rng.hpp"
#include "afford3d/tensor.hpp"
#include "oracles.hpp"

using namespace afford3d;

namespace {

Parameter random_param(const std::string& name, Shape shape, Rng& rng, double lo = -1.0,
                       double hi = 1.0) {
    Parameter p;
    p.name = name;
    p.tensor = Tensor::zeros(std::move(shape), true);
    for (auto& v : p.tensor.values()) v = rng.uniform(lo, hi);
    return p;
}

}  // namespace

TEST_CASE("linear: identity, zero weight, oracle") {
    Tensor x = Tensor::from({1, 2}, {1.0, 2.0});
    Tensor eye = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor zero_bias = Tensor::zeros({2});
    Tensor y = linear(x, eye, zero_bias);
    CHECK(y.at(0) == 1.0);
    CHECK(y.at(1) == 2.0);

    Tensor w0 = Tensor::zeros({2, 2});
    Tensor b = Tensor::from({2}, {3.0, 4.0});
    Tensor y2 = linear(x, w0, b);
    CHECK(y2.at(0) == 3.0);
    CHECK(y2.at(1) == 4.0);

    Rng rng(7);
    Parameter xr = random_param("x", {2, 3}, rng);
    Parameter wr = random_param("w", {3, 4}, rng);
    Parameter br = random_param("b", {4}, rng);
    Tensor out = linear(xr.tensor, wr.tensor, br.tensor);
    const auto expect = oracle::linear(oracle::from_tensor(xr.tensor), wr.tensor, br.tensor);
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 4; ++j)
            CHECK(out.at(i * 4 + j) ==
                  doctest::Approx(expect[size_t(i)][size_t(j)]).epsilon(1e-12));
}

TEST_CASE("linear: shape mismatch names both shapes") {
    Tensor x = Tensor::zeros({2, 3});
    Tensor w = Tensor::zeros({4, 5});
    Tensor b = Tensor::zeros({5});
    try {
        linear(x, w, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("4x5") != std::string::npos);
    }
}

TEST_CASE("softmax: equal logits, stability, oracle, row sums") {
    Tensor eq = softmax(Tensor::from({3}, {0.0, 0.0, 0.0}));
    for (int i = 0; i < 3; ++i) CHECK(eq.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    Tensor big = softmax(Tensor::from({2}, {1000.0, 0.0}));
    CHECK(big.at(0) == doctest::Approx(1.0));
    CHECK(big.at(1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::isfinite(big.at(0)));

    Rng rng(3);
    std::vector<double> logits(5);
    for (auto& v : logits) v = rng.uniform(-2.0, 2.0);
    Tensor sm = softmax(Tensor::from({5}, logits));
    const auto expect = oracle::softmax(logits);
    for (int i = 0; i < 5; ++i) CHECK(sm.at(i) == doctest::Approx(expect[size_t(i)]).epsilon(1e-12));

    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> row(7);
        for (auto& v : row) v = rng.uniform(-30.0, 30.0);
        Tensor y = softmax(Tensor::from({1, 7}, row));
        double sum = 0.0;
        for (int i = 0; i < 7; ++i) {
            CHECK(y.at(i) >= 0.0);
            sum += y.at(i);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }

    CHECK_THROWS_AS(softmax(Tensor::from({2}, {std::nan(""), 0.0})), NumericError);
}

TEST_CASE("layer_norm: row statistics before affine") {
    Rng rng(11);
    Tensor gamma = Tensor::full({16}, 1.0);
    Tensor beta = Tensor::zeros({16});
    std::vector<double> data(5 * 16);
    for (auto& v : data) v = rng.uniform(-3.0, 3.0);
    Tensor y = layer_norm(Tensor::from({5, 16}, data), gamma, beta);
    for (int r = 0; r < 5; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 16; ++c) mean += y.at(r * 16 + c);
        mean /= 16.0;
        for (int c = 0; c < 16; ++c) {
            const double d = y.at(r * 16 + c) - mean;
            var += d * d;
        }
        var /= 16.0;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("cross_attention: single key, identical keys, oracle") {
    Rng rng(5);
    MultiHeadAttention attn("attn", 8, 2, rng);

    Parameter key = random_param("key", {1, 8}, rng);
    Tensor query_a = Tensor::from({1, 8}, std::vector<double>(8, 0.3));
    Tensor query_b = Tensor::from({1, 8}, std::vector<double>(8, -1.7));
    Tensor out_a = attn(query_a, key.tensor, key.tensor);
    Tensor out_b = attn(query_b, key.tensor, key.tensor);
    for (int i = 0; i < 8; ++i) CHECK(out_a.at(i) == doctest::Approx(out_b.at(i)).epsilon(1e-14));
    // equals the output projection of the single projected value
    const auto v_proj = oracle::linear(oracle::from_tensor(key.tensor), attn.v.weight.tensor,
                                       attn.v.bias.tensor);
    const auto expect = oracle::linear(v_proj, attn.o.weight.tensor, attn.o.bias.tensor);
    for (int i = 0; i < 8; ++i) CHECK(out_a.at(i) == doctest::Approx(expect[0][size_t(i)]).epsilon(1e-12));

    // two identical keys: weights 0.5/0.5 by symmetry, same output as k=1
    std::vector<double> two;
    for (int rep = 0; rep < 2; ++rep)
        for (int i = 0; i < 8; ++i) two.push_back(key.tensor.at(i));
    Tensor out_two = attn(query_a, Tensor::from({2, 8}, two), Tensor::from({2, 8}, two));
    for (int i = 0; i < 8; ++i) CHECK(out_two.at(i) == doctest::Approx(out_a.at(i)).epsilon(1e-12));

    // random q=2, k=3 against the scripted per-head oracle
    Parameter q = random_param("q", {2, 8}, rng);
    Parameter k = random_param("k", {3, 8}, rng);
    Parameter v = random_param("v", {3, 8}, rng);
    Tensor out = attn(q.tensor, k.tensor, v.tensor);
    const auto expect2 = oracle::mha(oracle::from_tensor(q.tensor), oracle::from_tensor(k.tensor),
                                     oracle::from_tensor(v.tensor), attn);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 8; ++j)
            CHECK(out.at(i * 8 + j) == doctest::Approx(expect2[size_t(i)][size_t(j)]).epsilon(1e-10));

    CHECK_THROWS_AS(attn(query_a, Tensor::zeros({0, 8}), Tensor::zeros({0, 8})), InputError);
}

TEST_CASE("single-query attention is bitwise invariant to key order") {
    Rng rng(17);
    MultiHeadAttention attn("attn", 8, 4, rng);
    Parameter q = random_param("q", {1, 8}, rng);
    Parameter k = random_param("k", {6, 8}, rng);
    Tensor out = attn(q.tensor, k.tensor, k.tensor);

    // reverse the key rows
    std::vector<double> rev(6 * 8);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 8; ++j) rev[size_t(i * 8 + j)] = k.tensor.at((5 - i) * 8 + j);
    Tensor out_rev = attn(q.tensor, Tensor::from({6, 8}, rev), Tensor::from({6, 8}, rev));
    CHECK(out.same_values(out_rev));
}

TEST_CASE("grad_check: spec examples") {
    Rng rng(23);
    // linear layer, scalar-sum loss
    Parameter x = random_param("x", {3, 4}, rng);
    Parameter w = random_param("w", {4, 5}, rng);
    Parameter b = random_param("b", {5}, rng);
    auto loss = [&] { return sum_all(linear(x.tensor, w.tensor, b.tensor)); };
    const auto report = grad_check(loss, {&x, &w, &b});
    CHECK(report.max_rel_err < 1e-6);

    // constant function: analytic gradient exactly 0, FD ~ 0
    Parameter unused = random_param("u", {4}, rng);
    auto const_loss = [] { return Tensor::scalar(2.5); };
    const auto report2 = grad_check(const_loss, {&unused});
    CHECK(report2.max_rel_err == 0.0);
    unused.tensor.grad();
    for (double g : unused.tensor.grad()) CHECK(g == 0.0);
}

TEST_CASE("grad_check: every layer primitive against finite differences") {
    Rng rng(31);
    auto check = [&](const char* name, auto&& loss_fn, std::vector<Parameter*> params,
                     double tol = 1e-6) {
        const auto report = grad_check(loss_fn, params);
        INFO(name << " worst=" << report.worst);
        CHECK(report.max_rel_err < tol);
    };

    Parameter a = random_param("a", {3, 4}, rng, 0.2, 1.5);  // positive for log/div
    Parameter b = random_param("b", {3, 4}, rng, 0.3, 1.2);
    Parameter m = random_param("m", {4, 3}, rng);
    Parameter s = random_param("s", {1}, rng, 0.5, 1.5);
    Parameter gamma = random_param("gamma", {4}, rng, 0.5, 1.5);
    Parameter beta = random_param("beta", {4}, rng);

    check("add", [&] { return sum_all(mul(add(a.tensor, b.tensor), b.tensor)); }, {&a, &b});
    check("sub", [&] { return sum_all(mul(sub(a.tensor, b.tensor), a.tensor)); }, {&a, &b});
    check("div", [&] { return sum_all(div(a.tensor, b.tensor)); }, {&a, &b});
    check("log", [&] { return sum_all(log_t(a.tensor)); }, {&a});
    check("sigmoid", [&] { return sum_all(mul(sigmoid(a.tensor), b.tensor)); }, {&a});
    check("gelu", [&] { return sum_all(mul(gelu(a.tensor), b.tensor)); }, {&a});
    check("matmul", [&] { return sum_all(mul(matmul(a.tensor, m.tensor), matmul(b.tensor, m.tensor))); },
          {&a, &b, &m});
    check("transpose", [&] { return sum_all(matmul(transpose(a.tensor), b.tensor)); }, {&a, &b});
    check("softmax", [&] { return sum_all(mul(softmax(a.tensor), b.tensor)); }, {&a}, 1e-5);
    check("layer_norm",
          [&] { return sum_all(mul(layer_norm(a.tensor, gamma.tensor, beta.tensor), b.tensor)); },
          {&a, &gamma, &beta}, 1e-5);
    check("bmul_scalar", [&] { return sum_all(bmul_scalar(a.tensor, s.tensor)); }, {&a, &s});
    check("mean_rows", [&] { return sum_all(mul(mean_rows(a.tensor), row(b.tensor, 0))); }, {&a});
    check("concat+slice",
          [&] {
              Tensor c = concat_cols(a.tensor, b.tensor);
              return sum_all(mul(slice_cols(c, 2, 4), slice_cols(c, 1, 4)));
          },
          {&a, &b});
    check("concat_rows+slice_rows",
          [&] {
              Tensor c = concat_rows({a.tensor, b.tensor});
              return sum_all(mul(slice_rows(c, 1, 3), slice_rows(c, 2, 3)));
          },
          {&a, &b});
    check("clamp", [&] { return sum_all(clampv(scale(a.tensor, 2.0), 0.5, 2.0)); }, {&a}, 2e-4);

    Parameter scores = random_param("scores", {1, 5}, rng);
    Parameter values = random_param("values", {5, 4}, rng);
    check("softmax_weighted_sum",
          [&] { return sum_all(mul(softmax_weighted_sum(scores.tensor, values.tensor), row(b.tensor, 1))); },
          {&scores, &values}, 1e-5);

    std::vector<std::int32_t> nbrs = {0, 1, 1, 2, 2, 0};  // 3 points, k=2
    Parameter h = random_param("h", {3, 4}, rng);
    check("knn_max_pool", [&] { return sum_all(mul(knn_max_pool(h.tensor, nbrs, 2), b.tensor)); },
          {&h}, 1e-5);
}

TEST_CASE("parameter init is bit-reproducible and modes are exact") {
    Rng r1(99), r2(99);
    Parameter p1 = make_parameter("w", {8, 8}, InitMode::Xavier, r1);
    Parameter p2 = make_parameter("w", {8, 8}, InitMode::Xavier, r2);
    CHECK(p1.tensor.same_values(p2.tensor));

    Parameter z = make_parameter("z", {4, 4}, InitMode::Zeros, r1);
    for (double v : z.tensor.values()) CHECK(v == 0.0);
    Parameter c = make_parameter("c", {3}, InitMode::Constant, r1, -2.0);
    for (double v : c.tensor.values()) CHECK(v == -2.0);
}

TEST_CASE("backward accumulates across fan-out") {
    Parameter x = {"x", Tensor::from({2}, {1.5, -0.5}, true), InitMode::Xavier, 0.0};
    Tensor y = add(mul(x.tensor, x.tensor), x.tensor);  // x^2 + x
    Tensor loss = sum_all(y);
    loss.backward();
    CHECK(x.tensor.grad()[0] == doctest::Approx(2 * 1.5 + 1));
    CHECK(x.tensor.grad()[1] == doctest::Approx(2 * -0.5 + 1));
}

TEST_CASE("NoGradGuard suppresses graph recording") {
    Parameter x = {"x", Tensor::from({2}, {1.0, 2.0}, true), InitMode::Xavier, 0.0};
    NoGradGuard guard;
    Tensor y = scale(x.tensor, 3.0);
    CHECK_FALSE(y.requires_grad());
}
