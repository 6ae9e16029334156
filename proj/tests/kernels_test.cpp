#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "mtnat/kernels.hpp"
#include "mtnat/rng.hpp"

using namespace mtnat;
namespace k = mtnat::kernels;

namespace {

std::vector<double> randvec(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

// The OpenMP variants must agree with the serial reference bit-for-bit:
// parallelization only distributes independent outputs.
TEST_CASE("matmul variants: omp output is bit-identical to serial") {
    Rng rng(7);
    for (int iter = 0; iter < 30; ++iter) {
        const std::size_t batch = 1 + rng.below(4);
        const std::size_t m = 1 + rng.below(17);
        const std::size_t kk = 1 + rng.below(17);
        const std::size_t n = 1 + rng.below(17);
        const bool shared_b = rng.coin();
        const bool acc = rng.coin();

        auto a = randvec(rng, batch * m * kk);
        auto b = randvec(rng, (shared_b ? 1 : batch) * kk * n);
        auto c0 = randvec(rng, batch * m * n);
        auto c1 = c0;

        k::serial::matmul_nn(a.data(), b.data(), c0.data(), batch, m, kk, n, shared_b, acc);
        k::omp::matmul_nn(a.data(), b.data(), c1.data(), batch, m, kk, n, shared_b, acc);
        CHECK(bit_equal(c0, c1));

        auto d = randvec(rng, batch * m * n);
        auto e0 = randvec(rng, batch * m * kk);
        auto e1 = e0;
        k::serial::matmul_nt(d.data(), b.data(), e0.data(), batch, m, n, kk, shared_b, acc);
        k::omp::matmul_nt(d.data(), b.data(), e1.data(), batch, m, n, kk, shared_b, acc);
        CHECK(bit_equal(e0, e1));

        auto f0 = randvec(rng, batch * kk * n);
        auto f1 = f0;
        k::serial::matmul_tn(a.data(), d.data(), f0.data(), batch, m, kk, n, acc);
        k::omp::matmul_tn(a.data(), d.data(), f1.data(), batch, m, kk, n, acc);
        CHECK(bit_equal(f0, f1));

        auto g0 = randvec(rng, kk * n);
        auto g1 = g0;
        k::serial::matmul_tn_reduce(a.data(), d.data(), g0.data(), batch, m, kk, n, acc);
        k::omp::matmul_tn_reduce(a.data(), d.data(), g1.data(), batch, m, kk, n, acc);
        CHECK(bit_equal(g0, g1));
    }
}

TEST_CASE("row/lane kernels: omp output is bit-identical to serial") {
    Rng rng(11);
    for (int iter = 0; iter < 30; ++iter) {
        const std::size_t outer = 1 + rng.below(6);
        const std::size_t n = 1 + rng.below(23);
        const std::size_t inner = 1 + rng.below(6);
        const std::size_t total = outer * n * inner;

        auto x = randvec(rng, total, -30.0, 30.0);
        std::vector<double> y0(total), y1(total);
        k::serial::softmax_lanes(x.data(), y0.data(), outer, n, inner);
        k::omp::softmax_lanes(x.data(), y1.data(), outer, n, inner);
        CHECK(bit_equal(y0, y1));

        auto dy = randvec(rng, total);
        auto dx0 = randvec(rng, total);
        auto dx1 = dx0;
        k::serial::softmax_bwd_lanes(y0.data(), dy.data(), dx0.data(), outer, n, inner);
        k::omp::softmax_bwd_lanes(y0.data(), dy.data(), dx1.data(), outer, n, inner);
        CHECK(bit_equal(dx0, dx1));

        const std::size_t rows = outer * inner;
        auto ln_x = randvec(rng, rows * n);
        auto gamma = randvec(rng, n);
        auto beta = randvec(rng, n);
        std::vector<double> out0(rows * n), out1(rows * n), mean0(rows), mean1(rows),
            rstd0(rows), rstd1(rows);
        k::serial::layernorm(ln_x.data(), gamma.data(), beta.data(), 1e-5, out0.data(),
                             mean0.data(), rstd0.data(), rows, n);
        k::omp::layernorm(ln_x.data(), gamma.data(), beta.data(), 1e-5, out1.data(),
                          mean1.data(), rstd1.data(), rows, n);
        CHECK(bit_equal(out0, out1));
        CHECK(bit_equal(mean0, mean1));

        auto ln_dy = randvec(rng, rows * n);
        std::vector<double> dx_a(rows * n, 0.0), dx_b(rows * n, 0.0), dg_a(n, 0.0), dg_b(n, 0.0),
            db_a(n, 0.0), db_b(n, 0.0);
        k::serial::layernorm_bwd(ln_x.data(), gamma.data(), mean0.data(), rstd0.data(),
                                 ln_dy.data(), dx_a.data(), dg_a.data(), db_a.data(), rows, n);
        k::omp::layernorm_bwd(ln_x.data(), gamma.data(), mean0.data(), rstd0.data(),
                              ln_dy.data(), dx_b.data(), dg_b.data(), db_b.data(), rows, n);
        CHECK(bit_equal(dx_a, dx_b));
        CHECK(bit_equal(dg_a, dg_b));
        CHECK(bit_equal(db_a, db_b));
    }
}

TEST_CASE("cross entropy and elementwise kernels: omp bit-identical to serial") {
    Rng rng(13);
    for (int iter = 0; iter < 30; ++iter) {
        const std::size_t rows = 1 + rng.below(40);
        const std::size_t n = 2 + rng.below(50);
        auto logits = randvec(rng, rows * n, -5.0, 5.0);
        std::vector<std::int32_t> targets(rows);
        for (auto& t : targets)
            t = rng.coin() ? -1 : static_cast<std::int32_t>(rng.below(n));
        targets[0] = 0;  // at least one active row
        const double eps = rng.coin() ? 0.0 : 0.1;

        std::vector<double> loss0(rows), loss1(rows), lse0(rows), lse1(rows);
        k::serial::cross_entropy(logits.data(), targets.data(), -1, eps, loss0.data(),
                                 lse0.data(), rows, n);
        k::omp::cross_entropy(logits.data(), targets.data(), -1, eps, loss1.data(), lse1.data(),
                              rows, n);
        CHECK(bit_equal(loss0, loss1));
        CHECK(bit_equal(lse0, lse1));

        auto w = randvec(rng, rows, 0.0, 1.0);
        std::vector<double> dl0(rows * n, 0.0), dl1(rows * n, 0.0);
        k::serial::cross_entropy_bwd(logits.data(), targets.data(), -1, eps, lse0.data(),
                                     w.data(), dl0.data(), rows, n);
        k::omp::cross_entropy_bwd(logits.data(), targets.data(), -1, eps, lse0.data(), w.data(),
                                  dl1.data(), rows, n);
        CHECK(bit_equal(dl0, dl1));

        const std::size_t m = rows * n;
        auto xa = randvec(rng, m);
        auto xb = randvec(rng, m);
        std::vector<double> r0(m), r1(m);
        k::serial::add(xa.data(), xb.data(), r0.data(), m);
        k::omp::add(xa.data(), xb.data(), r1.data(), m);
        CHECK(bit_equal(r0, r1));
        k::serial::mul(xa.data(), xb.data(), r0.data(), m);
        k::omp::mul(xa.data(), xb.data(), r1.data(), m);
        CHECK(bit_equal(r0, r1));
        k::serial::colsum(logits.data(), r0.data(), rows, n);
        k::omp::colsum(logits.data(), r1.data(), rows, n);
        CHECK(bit_equal(r0, r1));
    }
}

TEST_CASE("embedding kernels agree and scatter accumulates duplicates") {
    Rng rng(17);
    const std::size_t v = 11, d = 7, count = 40;
    auto table = randvec(rng, v * d);
    std::vector<std::int32_t> ids(count);
    for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(v));

    std::vector<double> out0(count * d), out1(count * d);
    k::serial::embedding(table.data(), ids.data(), out0.data(), count, d);
    k::omp::embedding(table.data(), ids.data(), out1.data(), count, d);
    CHECK(bit_equal(out0, out1));

    auto dy = randvec(rng, count * d);
    std::vector<double> g0(v * d, 0.0), g1(v * d, 0.0);
    k::serial::embedding_bwd(dy.data(), ids.data(), g0.data(), count, d);
    k::omp::embedding_bwd(dy.data(), ids.data(), g1.data(), count, d);
    CHECK(bit_equal(g0, g1));

    // duplicate ids accumulate
    std::vector<std::int32_t> dup{3, 3};
    std::vector<double> dy2(2 * d, 1.0), g2(v * d, 0.0);
    k::serial::embedding_bwd(dy2.data(), dup.data(), g2.data(), 2, d);
    for (std::size_t j = 0; j < d; ++j) CHECK(g2[3 * d + j] == doctest::Approx(2.0));
}

TEST_CASE("backend dispatch is switchable and restores") {
    const auto prev = k::backend();
    k::set_backend(k::Backend::Serial);
    CHECK(k::backend() == k::Backend::Serial);
    k::set_backend(k::Backend::OpenMP);
    if (k::openmp_compiled())
        CHECK(k::backend() == k::Backend::OpenMP);
    else
        CHECK(k::backend() == k::Backend::Serial);
    k::set_backend(prev);
}

TEST_CASE("matmul_nn reference values") {
    // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
    std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8}, c(4, 0.0);
    k::serial::matmul_nn(a.data(), b.data(), c.data(), 1, 2, 2, 2, false, false);
    CHECK(c == std::vector<double>{19, 22, 43, 50});
}
