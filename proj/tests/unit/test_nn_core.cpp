#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "methylgraph/adam.hpp"
#include "methylgraph/error.hpp"
#include "methylgraph/mlp.hpp"
#include "test_util.hpp"

using namespace methylgraph;

namespace {

/// Layer-by-layer scalar loops, no use of the library's matmul.
std::vector<std::vector<double>> scalar_forward(const Mlp& mlp, std::vector<std::vector<double>> x) {
    for (const Dense& d : mlp.layers()) {
        std::vector<std::vector<double>> y(x.size(), std::vector<double>(d.out_dim()));
        for (std::size_t r = 0; r < x.size(); ++r)
            for (std::size_t o = 0; o < d.out_dim(); ++o) {
                double acc = d.bias[o];
                for (std::size_t i = 0; i < d.in_dim(); ++i) acc += x[r][i] * d.weight(i, o);
                y[r][o] = (d.activation == Activation::relu && acc < 0) ? 0.0 : acc;
            }
        x = std::move(y);
    }
    return x;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (double& v : m.values()) v = n(rng);
    return m;
}

double weighted_sum(const Mlp& mlp, const Matrix& x, const Matrix& up) {
    Matrix y = mlp_forward(mlp, x);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * up.values()[i];
    return s;
}

}  // namespace

TEST_CASE("mlp_forward: engineered weights") {
    Dense id;
    id.weight = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    id.bias = {0, 0, 0};
    Mlp identity({id});
    CHECK(mlp_forward(identity, Matrix::from_rows({{1, 2, 3}})) == Matrix::from_rows({{1, 2, 3}}));

    Dense r;
    r.weight = Matrix(3, 1, 1.0);
    r.bias = {-10.0};
    r.activation = Activation::relu;
    Dense out;
    out.weight = Matrix(1, 1, 1.0);
    out.bias = {0.0};
    Mlp relu_net({r, out});
    CHECK(mlp_forward(relu_net, Matrix::from_rows({{1, 2, 3}}))(0, 0) == 0.0);
}

TEST_CASE("mlp_forward matches the scalar-loop oracle") {
    Rng rng(11);
    const std::size_t dims[] = {3, 5, 2};
    Mlp mlp = make_mlp(dims, rng);
    for (auto& d : mlp.layers())
        for (double& b : d.bias) b = std::normal_distribution<double>(0, 0.5)(rng);
    Matrix x = random_matrix(4, 3, rng);
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < 4; ++r) rows.emplace_back(x.row(r).begin(), x.row(r).end());
    auto ref = scalar_forward(mlp, rows);
    Matrix y = mlp_forward(mlp, x);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(y(r, c) - ref[r][c]) <= 1e-12);
}

TEST_CASE("mlp_forward is row-wise independent") {
    Rng rng(3);
    const std::size_t dims[] = {6, 8, 8, 3};
    Mlp mlp = make_mlp(dims, rng);
    Matrix x = random_matrix(7, 6, rng);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix xp(7, 6);
    for (std::size_t r = 0; r < 7; ++r) std::copy(x.row(perm[r]).begin(), x.row(perm[r]).end(), xp.row(r).begin());
    Matrix y = mlp_forward(mlp, x), yp = mlp_forward(mlp, xp);
    for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(yp(r, c) == y(perm[r], c));
}

TEST_CASE("mlp errors") {
    Rng rng(1);
    const std::size_t dims[] = {3, 2};
    Mlp mlp = make_mlp(dims, rng);
    CHECK_THROWS_AS(mlp_forward(mlp, Matrix(2, 4)), ShapeError);
    CHECK_THROWS_AS(backprop(mlp, Matrix(2, 3), Matrix(2, 3)), ShapeError);

    Dense a;
    a.weight = Matrix(3, 2);
    a.bias = {0, 0};
    a.activation = Activation::relu;
    Dense b;
    b.weight = Matrix(3, 1);
    b.bias = {0};
    CHECK_THROWS_AS(Mlp({a, b}), ShapeError);  // 2 -> 3 does not chain
    CHECK_THROWS_AS(Mlp({a}), ShapeError);     // final relu
}

TEST_CASE("backprop: closed forms") {
    Rng rng(2);
    const std::size_t dims[] = {4, 6, 3};
    Mlp mlp = make_mlp(dims, rng);
    Matrix x = random_matrix(5, 4, rng);
    auto zero = backprop(mlp, x, Matrix(5, 3));
    for (const auto& g : zero.grads.layers) {
        for (double v : g.weight.values()) CHECK(v == 0.0);
        for (double v : g.bias) CHECK(v == 0.0);
    }
    for (double v : zero.input_grad.values()) CHECK(v == 0.0);

    Dense lin;
    lin.weight = Matrix(1, 1, 2.5);
    lin.bias = {0.0};
    Mlp scalar({lin});
    auto bp = backprop(scalar, Matrix(1, 1, -1.75), Matrix(1, 1, 1.0));
    CHECK(bp.grads.layers[0].weight(0, 0) == -1.75);
    CHECK(bp.input_grad(0, 0) == 2.5);
    CHECK(bp.grads.layers[0].bias[0] == 1.0);
}

TEST_CASE("backprop matches central finite differences") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(seed);
        std::uniform_int_distribution<std::size_t> width(1, 32), depth(1, 3);
        std::vector<std::size_t> dims{width(rng)};
        const std::size_t layers = depth(rng);
        for (std::size_t k = 0; k < layers; ++k) dims.push_back(width(rng));
        Mlp mlp = make_mlp(dims, rng);
        for (auto& d : mlp.layers())
            for (double& b : d.bias) b = std::normal_distribution<double>(0, 0.3)(rng);
        Matrix x = random_matrix(4, dims.front(), rng);
        Matrix up = random_matrix(4, dims.back(), rng);
        auto bp = backprop(mlp, x, up);

        std::vector<ParamRef> params;
        mlp.collect_params("mlp", params);
        std::vector<ConstParamRef> grads;
        bp.grads.collect_params("mlp", grads);
        const double h = 1e-5;
        for (std::size_t p = 0; p < params.size(); ++p) {
            for (std::size_t i = 0; i < params[p].values.size(); ++i) {
                double& w = params[p].values[i];
                const double saved = w;
                w = saved + h;
                const double fp = weighted_sum(mlp, x, up);
                w = saved - h;
                const double fm = weighted_sum(mlp, x, up);
                w = saved;
                const double numeric = (fp - fm) / (2 * h);
                CHECK(test_util::rel_err(grads[p].values[i], numeric) <= 1e-6);
            }
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            double& v = x.values()[i];
            const double saved = v;
            v = saved + h;
            const double fp = weighted_sum(mlp, x, up);
            v = saved - h;
            const double fm = weighted_sum(mlp, x, up);
            v = saved;
            CHECK(test_util::rel_err(bp.input_grad.values()[i], (fp - fm) / (2 * h)) <= 1e-6);
        }
    }
}

TEST_CASE("adam_step: fixed point and first step") {
    std::vector<double> w{1.0, -2.0, 0.5};
    std::vector<double> g(3, 0.0);
    std::vector<ParamRef> params{{"w", w}};
    std::vector<ConstParamRef> grads{{"w", g}};
    AdamState state = AdamState::for_params(params);
    adam_step(params, grads, state, 0.01, 0.0);
    CHECK(w == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(state.m[0] == std::vector<double>(3, 0.0));
    CHECK(state.v[0] == std::vector<double>(3, 0.0));
    CHECK(state.step == 1);

    std::vector<double> w2{1.0, -2.0, 0.5};
    std::vector<double> g2{0.3, -4.0, 1e-3};
    std::vector<ParamRef> p2{{"w", w2}};
    std::vector<ConstParamRef> gr2{{"w", g2}};
    AdamState s2 = AdamState::for_params(p2);
    const double lr = 0.01;
    adam_step(p2, gr2, s2, lr, 0.0);
    const double start[] = {1.0, -2.0, 0.5};
    for (int i = 0; i < 3; ++i) {
        const double expected = -lr * g2[i] / (std::abs(g2[i]) + 1e-8);
        CHECK(w2[i] - start[i] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("adam_step: lr = 0 is the identity") {
    std::vector<double> w{0.25, -3.0};
    std::vector<double> g{5.0, -7.0};
    std::vector<ParamRef> params{{"w", w}};
    std::vector<ConstParamRef> grads{{"w", g}};
    AdamState state = AdamState::for_params(params);
    for (int k = 0; k < 5; ++k) adam_step(params, grads, state, 0.0, 0.0);
    CHECK(w == std::vector<double>{0.25, -3.0});
}

TEST_CASE("adam_step: quadratic matches an independent Adam loop") {
    // Independent loop, written out directly.
    double ref_w = 0.0, m = 0.0, v = 0.0;
    std::vector<double> ref_path;
    for (int t = 1; t <= 50; ++t) {
        const double g = 2.0 * (ref_w - 3.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        ref_w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        ref_path.push_back(ref_w);
    }

    std::vector<double> w{0.0}, g{0.0};
    std::vector<ParamRef> params{{"w", w}};
    std::vector<ConstParamRef> grads{{"w", g}};
    AdamState state = AdamState::for_params(params);
    std::vector<double> dist;
    for (int t = 0; t < 50; ++t) {
        g[0] = 2.0 * (w[0] - 3.0);
        adam_step(params, grads, state, 0.1, 0.0);
        dist.push_back(std::abs(w[0] - 3.0));
    }
    CHECK(std::abs(w[0] - ref_path.back()) <= 1e-12);
    // Approach phase: distance to the optimum shrinks every step until the first overshoot.
    std::size_t k = 1;
    while (k < dist.size() && dist[k] < dist[k - 1]) ++k;
    CHECK(k >= 25);
    CHECK(dist.back() < dist.front());
}

TEST_CASE("adam_step: decoupled weight decay and error paths") {
    std::vector<double> w{2.0}, g{0.0};
    std::vector<ParamRef> params{{"w", w}};
    std::vector<ConstParamRef> grads{{"w", g}};
    AdamState state = AdamState::for_params(params);
    adam_step(params, grads, state, 0.1, 0.5);
    CHECK(w[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
    CHECK(state.m[0][0] == 0.0);

    std::vector<double> bad{std::nan("")};
    std::vector<ConstParamRef> bad_grads{{"layer1.phi.0.weight", bad}};
    try {
        adam_step(params, bad_grads, state, 0.1, 0.0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer1.phi.0.weight") != std::string::npos);
    }
}
