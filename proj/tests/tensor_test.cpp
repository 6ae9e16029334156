#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mtnat/kernels.hpp"
#include "mtnat/ops.hpp"
#include "mtnat/rng.hpp"
#include "mtnat/tensor.hpp"

using namespace mtnat;
namespace op = mtnat::ops;

namespace {

Tensor randt(Rng& rng, Shape shape, bool requires_grad = true, double lo = -2.0,
             double hi = 2.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("matmul: identity, zeros and hand-computed product") {
    Tape t(false);
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(op::matmul(t, eye, a).values() == std::vector<double>{1, 2, 3, 4});

    Tensor z = Tensor::zeros({2, 2});
    CHECK(op::matmul(t, a, z).values() == std::vector<double>{0, 0, 0, 0});

    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
    CHECK(op::matmul(t, a, b).values() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul: dimension error names both shapes") {
    Tape t(false);
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        op::matmul(t, a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("softmax: symmetry, stabilization, frozen reference values") {
    Tape t(false);
    Tensor u = Tensor::from({3}, {0, 0, 0});
    auto y = op::softmax(t, u, -1).values();
    for (double v : y) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Tensor big = Tensor::from({2}, {1000.0, 0.0});
    auto yb = op::softmax(t, big, 0).values();
    CHECK(yb[0] == doctest::Approx(1.0));
    CHECK(yb[1] == doctest::Approx(0.0));

    // e^x / sum e^x evaluated independently at high precision
    Tensor x = Tensor::from({3}, {1, 2, 3});
    auto yx = op::softmax(t, x, 0).values();
    CHECK(yx[0] == doctest::Approx(0.09003057317038046).epsilon(1e-10));
    CHECK(yx[1] == doctest::Approx(0.24472847105479767).epsilon(1e-10));
    CHECK(yx[2] == doctest::Approx(0.66524095577482190).epsilon(1e-10));

    CHECK_THROWS_AS(op::softmax(t, x, 3), ShapeError);
}

TEST_CASE("softmax: rows sum to one along the chosen axis") {
    Rng rng(3);
    Tape t(false);
    Tensor x = randt(rng, {2, 5, 3}, false, -10.0, 10.0);
    for (int axis : {0, 1, 2}) {
        Tensor y = op::softmax(t, x, axis);
        // sum along axis must be 1 for every lane
        std::size_t outer = 1, inner = 1;
        const auto& s = x.shape();
        for (int i = 0; i < axis; ++i) outer *= s[i];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
        const std::size_t n = s[axis];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                double acc = 0;
                for (std::size_t j = 0; j < n; ++j)
                    acc += y.values()[o * n * inner + j * inner + i];
                CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
            }
    }
}

TEST_CASE("cross_entropy: certain, uniform and frozen cases") {
    Tape t(false);
    Tensor onehot = Tensor::from({1, 3}, {1e9, 0, 0});
    CHECK(op::cross_entropy(t, onehot, {0}).item() == doctest::Approx(0.0).epsilon(1e-12));

    Tensor uniform = Tensor::zeros({1, 4});
    CHECK(op::cross_entropy(t, uniform, {2}).item() ==
          doctest::Approx(1.3862943611198906).epsilon(1e-12));

    // -log softmax([1,2,3])[0] via independent high-precision evaluation
    Tensor z = Tensor::from({1, 3}, {1, 2, 3});
    CHECK(op::cross_entropy(t, z, {0}).item() ==
          doctest::Approx(2.40760596444438).epsilon(1e-10));

    // ignored rows contribute nothing
    Tensor two = Tensor::from({2, 3}, {1, 2, 3, 9, 9, 9});
    CHECK(op::cross_entropy(t, two, {0, -1}, -1).item() ==
          doctest::Approx(2.40760596444438).epsilon(1e-10));

    CHECK_THROWS_AS(op::cross_entropy(t, two, {-1, -1}, -1), ContractError);
    CHECK_THROWS_AS(op::cross_entropy(t, two, {0, 7}, -1), ContractError);
}

TEST_CASE("backward: linear map, square, and accumulation over reuse") {
    {
        Tape tape;
        Rng rng(5);
        Tensor x = randt(rng, {2, 3});
        Tensor loss = op::sum(tape, x);
        op::backward(loss, tape);
        for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
    }
    {
        Tape tape;
        Tensor x = Tensor::scalar(3.0, true);
        Tensor loss = op::mul(tape, x, x);
        op::backward(loss, tape);
        CHECK(x.grad()[0] == doctest::Approx(6.0));
    }
    {
        // y = x + x: gradient accumulates to 2
        Tape tape;
        Tensor x = Tensor::scalar(1.5, true);
        Tensor loss = op::add(tape, x, x);
        op::backward(loss, tape);
        CHECK(x.grad()[0] == doctest::Approx(2.0));
    }
    {
        Tape tape;
        Tensor x = Tensor::from({2}, {1, 2}, true);
        Tensor nonScalar = op::scale(tape, x, 2.0);
        CHECK_THROWS_AS(op::backward(nonScalar, tape), ContractError);
    }
}

TEST_CASE("backward: 2-layer network matches central finite differences") {
    Rng rng(21);
    Tensor w1 = randt(rng, {4, 8});
    Tensor b1 = randt(rng, {8});
    Tensor w2 = randt(rng, {8, 3});
    Tensor x = randt(rng, {5, 4}, false);
    std::vector<std::int32_t> targets{0, 1, 2, 1, 0};

    auto f = [&](Tape& tape) {
        Tensor h = op::relu(tape, op::add(tape, op::matmul(tape, x, w1), b1));
        Tensor logits = op::matmul(tape, h, w2);
        return op::cross_entropy(tape, logits, targets);
    };
    auto report = op::check_gradients(f, {{"w1", w1}, {"b1", b1}, {"w2", w2}}, 1e-5, 1e-5);
    CHECK(report.passed);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("check_gradients: constant program passes, corrupted rule fails") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    auto constant = [&](Tape& tape) {
        (void)tape;
        return Tensor::scalar(42.0);
    };
    CHECK(op::check_gradients(constant, {{"x", x}}, 1e-5, 1e-4).passed);

    // Negative control: an extra bogus rule on the tape corrupts x's gradient.
    auto corrupted = [&](Tape& tape) {
        Tensor y = op::mul(tape, x, x);
        if (tape.recording()) {
            Tensor xc = x;
            tape.record([xc]() mutable { xc.grad()[0] += 0.5; });
        }
        return op::sum(tape, y);
    };
    auto report = op::check_gradients(corrupted, {{"x", x}}, 1e-5, 1e-4);
    CHECK_FALSE(report.passed);
    CHECK(report.max_rel_err > 1e-4);

    CHECK_THROWS_AS(op::check_gradients(constant, {{"x", x}}, 0.0, 1e-4), ContractError);
}

// Gradient soundness: every primitive participates in a composite program and
// the analytic gradients match central differences across 100 seeds.
TEST_CASE("gradient soundness of the full primitive set over 100 seeds") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        Tensor table = randt(rng, {7, 4});
        Tensor w = randt(rng, {4, 6});
        Tensor gamma = randt(rng, {6}, true, 0.5, 1.5);
        Tensor beta = randt(rng, {6});
        Tensor proj = randt(rng, {2, 3});
        std::vector<std::int32_t> ids{1, 4, 6, 2, 0, 3};
        std::vector<std::int32_t> targets{0, 1, 1, -1, 0, 1};
        std::vector<std::uint8_t> mask(36, 0);
        mask[3] = mask[7] = mask[20] = 1;

        auto f = [&](Tape& tape) {
            Tensor e = op::embedding(tape, table, ids, {2, 3});        // [2,3,4]
            Tensor h = op::matmul(tape, e, w);                         // [2,3,6]
            Tensor ln = op::layer_norm(tape, h, gamma, beta);          // [2,3,6]
            Tensor r = op::relu(tape, ln);
            Tensor sm = op::softmax(tape, r, -1);
            Tensor flat = op::reshape(tape, sm, {6, 6});
            Tensor tr = op::transpose(tape, flat, 0, 1);
            Tensor mixed = op::mul(tape, tr, flat);
            Tensor half = op::scale(tape, mixed, 0.5);
            Tensor sub = op::reshape(tape, half, {12, 3});
            Tensor filled = op::masked_fill(
                tape, op::reshape(tape, sub, {2, 2, 3, 3}), std::vector<std::uint8_t>(36, 0),
                0.0);
            Tensor logits3 = op::reshape(tape, filled, {12, 3});
            Tensor logits = op::matmul(tape, op::reshape(tape, logits3, {18, 2}), proj);  // [18,3]
            std::vector<std::int32_t> tg(18, -1);
            for (std::size_t i = 0; i < targets.size(); ++i) tg[i] = targets[i];
            Tensor ce = op::cross_entropy(tape, logits, tg, -1, 0.1);
            Tensor extra = op::sum(tape, op::masked_fill(tape, op::reshape(tape, half, {36}),
                                                          mask, -1.0));
            return op::add(tape, ce, op::scale(tape, extra, 0.1));
        };
        auto report = op::check_gradients(
            f, {{"table", table}, {"w", w}, {"gamma", gamma}, {"beta", beta}, {"proj", proj}},
            1e-5, 1e-4);
        worst = std::max(worst, report.max_rel_err);
        if (!report.passed) {
            CAPTURE(seed);
            CHECK(report.passed);
            break;
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("linearity of backward: grad(a*f + b*g) == a*grad(f) + b*grad(g)") {
    Rng rng(33);
    Tensor x = randt(rng, {4, 4});
    Tensor w = randt(rng, {4, 4});
    const double alpha = 0.37, beta = -1.25;

    auto run_f = [&](Tape& tape) { return op::sum(tape, op::mul(tape, x, x)); };
    auto run_g = [&](Tape& tape) {
        return op::sum(tape, op::relu(tape, op::matmul(tape, x, w)));
    };

    auto grads_of = [&](const std::function<Tensor(Tape&)>& prog) {
        x.zero_grad();
        w.zero_grad();
        Tape tape;
        op::backward(prog(tape), tape);
        return std::pair{x.grad(), w.grad()};
    };

    auto [gx_f, gw_f] = grads_of(run_f);
    auto [gx_g, gw_g] = grads_of(run_g);
    auto [gx_c, gw_c] = grads_of([&](Tape& tape) {
        return op::add(tape, op::scale(tape, run_f(tape), alpha),
                       op::scale(tape, run_g(tape), beta));
    });

    for (std::size_t i = 0; i < gx_c.size(); ++i)
        CHECK(std::fabs(gx_c[i] - (alpha * gx_f[i] + beta * gx_g[i])) < 1e-12);
    for (std::size_t i = 0; i < gw_c.size(); ++i)
        CHECK(std::fabs(gw_c[i] - (alpha * gw_f[i] + beta * gw_g[i])) < 1e-12);
}

TEST_CASE("determinism: serial and OpenMP backends produce bit-identical results") {
    const auto prev = kernels::backend();
    auto run = [&] {
        Rng rng(77);
        Tensor x = randt(rng, {6, 8});
        Tensor w = randt(rng, {8, 8});
        Tensor g = randt(rng, {8}, true, 0.5, 1.5);
        Tensor b = randt(rng, {8});
        Tape tape;
        Tensor y = op::layer_norm(tape, op::matmul(tape, x, w), g, b);
        Tensor loss = op::sum(tape, op::softmax(tape, y, -1));
        op::backward(loss, tape);
        auto out = y.values();
        auto gx = x.grad();
        out.insert(out.end(), gx.begin(), gx.end());
        out.push_back(loss.item());
        return out;
    };
    kernels::set_backend(kernels::Backend::Serial);
    auto a = run();
    kernels::set_backend(kernels::Backend::OpenMP);
    auto b = run();
    kernels::set_backend(prev);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("NaN policy: non-finite values abort with a diagnostic") {
    Tape t(false);
    Tensor huge = Tensor::from({1, 1}, {1e308});
    Tensor ten = Tensor::from({1, 1}, {1e10});
    CHECK_THROWS_AS(op::matmul(t, huge, ten), NumericError);
}

TEST_CASE("tensor invariants: shape/data agreement, grad sizing, scalar access") {
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.size() == 6);
    CHECK_FALSE(t.has_grad());
    t.grad();
    CHECK(t.has_grad());
    CHECK(t.grad().size() == 6);
    CHECK_THROWS_AS(t.item(), ContractError);
    CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("masked_fill and transpose round out the primitive contracts") {
    Tape tape;
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tensor y = op::masked_fill(tape, x, {0, 1, 1, 0}, -9.0);
    CHECK(y.values() == std::vector<double>{1, -9, -9, 4});
    op::backward(op::sum(tape, y), tape);
    CHECK(x.grad() == std::vector<double>{1, 0, 0, 1});

    Tape t2(false);
    Tensor m = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor mt = op::transpose(t2, m, 0, 1);
    CHECK(mt.shape() == Shape{3, 2});
    CHECK(mt.values() == std::vector<double>{1, 4, 2, 5, 3, 6});

    Tensor four = Tensor::from({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor sw = op::transpose(t2, four, 1, 2);
    CHECK(sw.shape() == Shape{2, 2, 1, 2});
    CHECK(sw.values() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
}
