#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "matz/autodiff.hpp"
#include "matz/gradcheck.hpp"
#include "matz/model.hpp"
#include "matz/rng.hpp"

using matz::Matrix;
using matz::ParamSet;
namespace ad = matz::ad;

namespace {

Matrix random_matrix(matz::Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.normal(0.0, sd);
    return m;
}

// Reduce an op output to a scalar through a fixed projection so every output
// coordinate influences the checked value.
matz::DifferentiableScalar make_probe(
    std::function<ad::Var(ad::Tape&, const ad::VarMap&)> build, const Matrix& weights) {
    auto run = [build, weights](const ParamSet& params, matz::Gradients* grads) {
        ad::Tape tape;
        ad::VarMap vars = ad::bind_params(tape, params);
        ad::Var out = build(tape, vars);
        ad::Var loss = ad::sum_all(ad::hadamard(out, ad::input(tape, weights)));
        if (grads) {
            tape.backward(loss.id);
            *grads = ad::collect_gradients(tape, vars);
        }
        return loss.scalar();
    };
    matz::DifferentiableScalar f;
    f.value = [run](const ParamSet& p) { return run(p, nullptr); };
    f.gradients = [run](const ParamSet& p) {
        matz::Gradients g;
        run(p, &g);
        return g;
    };
    return f;
}

}  // namespace

TEST_CASE("grad_check validates a hand-built polynomial") {
    // f(x) = sum x^2, gradient 2x.
    matz::DifferentiableScalar f;
    f.value = [](const ParamSet& p) {
        double s = 0.0;
        for (double v : p.at("x").data) s += v * v;
        return s;
    };
    f.gradients = [](const ParamSet& p) {
        matz::Gradients g;
        g["x"] = p.at("x");
        for (double& v : g["x"].data) v *= 2.0;
        return g;
    };
    ParamSet p;
    p["x"] = Matrix{{3.0, -1.5, 0.25}};
    REQUIRE(matz::grad_check(f, p, 1e-5) < 1e-6);
}

TEST_CASE("grad_check rejects bad eps and detects wrong gradients") {
    matz::DifferentiableScalar f;
    f.value = [](const ParamSet& p) { return p.at("x").at(0, 0); };
    f.gradients = [](const ParamSet&) {
        matz::Gradients g;
        g["x"] = Matrix{{2.0}};  // wrong on purpose; truth is 1
        return g;
    };
    ParamSet p;
    p["x"] = Matrix{{1.0}};
    REQUIRE_THROWS_AS(matz::grad_check(f, p, 0.5), std::invalid_argument);
    REQUIRE(matz::grad_check(f, p, 1e-5) > 0.5);
}

TEST_CASE("tape op gradients match central differences") {
    matz::Rng rng(99);
    struct Case {
        const char* name;
        std::function<ad::Var(ad::Tape&, const ad::VarMap&)> build;
        std::size_t out_rows, out_cols;
    };

    const std::vector<Case> cases = {
        {"matmul", [](ad::Tape& t, const ad::VarMap& v) { return ad::matmul(v.at("a"), v.at("b")); }, 3, 5},
        {"matmul_nt", [](ad::Tape& t, const ad::VarMap& v) { return ad::matmul_nt(v.at("a"), v.at("c")); }, 3, 3},
        {"add", [](ad::Tape& t, const ad::VarMap& v) { return ad::add(v.at("a"), v.at("a2")); }, 3, 4},
        {"sub", [](ad::Tape& t, const ad::VarMap& v) { return ad::sub(v.at("a"), v.at("a2")); }, 3, 4},
        {"hadamard", [](ad::Tape& t, const ad::VarMap& v) { return ad::hadamard(v.at("a"), v.at("a2")); }, 3, 4},
        {"gelu", [](ad::Tape& t, const ad::VarMap& v) { return ad::gelu(v.at("a")); }, 3, 4},
        {"row_softmax", [](ad::Tape& t, const ad::VarMap& v) { return ad::row_softmax(v.at("a")); }, 3, 4},
        {"row_logsumexp", [](ad::Tape& t, const ad::VarMap& v) { return ad::row_logsumexp(v.at("a")); }, 3, 1},
        {"normalize_rows", [](ad::Tape& t, const ad::VarMap& v) { return ad::normalize_rows(v.at("a")); }, 3, 4},
        {"rmsnorm", [](ad::Tape& t, const ad::VarMap& v) { return ad::rmsnorm(v.at("a"), v.at("g")); }, 3, 4},
        {"embed_rows", [](ad::Tape& t, const ad::VarMap& v) { return ad::embed_rows(v.at("a"), {2, 0, 2, 1}); }, 4, 4},
        {"concat_rows", [](ad::Tape& t, const ad::VarMap& v) { return ad::concat_rows({v.at("a"), v.at("a2")}); }, 6, 4},
        {"slice_cols", [](ad::Tape& t, const ad::VarMap& v) { return ad::slice_cols(v.at("a"), 2); }, 3, 2},
        {"select_row", [](ad::Tape& t, const ad::VarMap& v) { return ad::select_row(v.at("a"), 1); }, 1, 4},
        {"im2col", [](ad::Tape& t, const ad::VarMap& v) { return ad::im2col_k3s2(v.at("a")); }, 2, 12},
        {"row_dot", [](ad::Tape& t, const ad::VarMap& v) { return ad::row_dot(v.at("a"), v.at("a2")); }, 3, 1},
        {"sqrt+div", [](ad::Tape& t, const ad::VarMap& v) {
             return ad::div_elems(v.at("a"), ad::sqrt_elems(ad::add_const(ad::square(v.at("a2")), 1.0)));
         }, 3, 4},
        {"attention_pool", [](ad::Tape& t, const ad::VarMap& v) {
             return ad::attention_pool(v.at("a"), ad::select_row(v.at("q4"), 0));
         }, 1, 4},
    };

    for (const auto& c : cases) {
        CAPTURE(c.name);
        ParamSet p;
        p["a"] = random_matrix(rng, 3, 4);
        p["a2"] = random_matrix(rng, 3, 4);
        p["b"] = random_matrix(rng, 4, 5);
        p["c"] = random_matrix(rng, 3, 4);
        p["g"] = random_matrix(rng, 1, 4, 0.3);
        p["q4"] = random_matrix(rng, 1, 4);
        const Matrix w = random_matrix(rng, c.out_rows, c.out_cols);
        REQUIRE(matz::grad_check(make_probe(c.build, w), p, 1e-6) < 1e-4);
    }
}

TEST_CASE("constant inputs receive no gradient work") {
    ad::Tape tape;
    ad::Var frozen = ad::input(tape, Matrix{{1.0, 2.0}});
    ad::Var live = ad::leaf(tape, Matrix{{3.0, 4.0}});
    ad::Var loss = ad::sum_all(ad::hadamard(frozen, live));
    tape.backward(loss.id);
    REQUIRE_FALSE(tape.has_grad(frozen.id));
    REQUIRE(tape.grad(live.id).at(0, 0) == 1.0);
    REQUIRE(tape.grad(live.id).at(0, 1) == 2.0);
}

TEST_CASE("attention pooling forward cases") {
    // All rows identical: output equals that row regardless of the query.
    Matrix x{{0.5, -0.25}, {0.5, -0.25}, {0.5, -0.25}};
    Matrix q{{3.0, 1.0}};
    auto pooled = matz::attention_pool(x, q);
    REQUIRE(pooled[0] == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(pooled[1] == Catch::Approx(-0.25).margin(1e-12));

    // Zero query: uniform weights, output is the arithmetic mean.
    Matrix x2{{0.0, 2.0}, {0.0, 0.0}};
    Matrix q0{{0.0, 0.0}};
    auto mean = matz::attention_pool(x2, q0);
    REQUIRE(mean[0] == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(mean[1] == Catch::Approx(1.0).margin(1e-15));

    // Two-way softmax by hand: weight on row 1 is sigmoid(2 * 10 / sqrt(2)).
    Matrix x3{{1.0, 0.0}, {-1.0, 0.0}};
    Matrix q10{{10.0, 0.0}};
    const double w1 = 1.0 / (1.0 + std::exp(-20.0 / std::sqrt(2.0)));
    auto out = matz::attention_pool(x3, q10);
    REQUIRE(out[0] == Catch::Approx(w1 - (1.0 - w1)).margin(1e-12));
    REQUIRE(out[1] == 0.0);
}

TEST_CASE("attention pooling stays in the convex hull of rows") {
    matz::Rng rng(17);
    for (int trial = 0; trial < 40; ++trial) {
        Matrix x = random_matrix(rng, 1 + rng.index(6), 5);
        Matrix q = random_matrix(rng, 1, 5);
        auto pooled = matz::attention_pool(x, q);
        for (std::size_t j = 0; j < 5; ++j) {
            double lo = x.at(0, j), hi = x.at(0, j);
            for (std::size_t i = 1; i < x.rows; ++i) {
                lo = std::min(lo, x.at(i, j));
                hi = std::max(hi, x.at(i, j));
            }
            REQUIRE(pooled[j] >= lo - 1e-12);
            REQUIRE(pooled[j] <= hi + 1e-12);
        }
    }
}
