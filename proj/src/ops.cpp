#include "mtnat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "mtnat/kernels.hpp"

namespace mtnat::ops {

namespace {

thread_local OpCounts g_counts;

void count_op(const char* kind) {
    ++g_counts.by_kind[kind];
    ++g_counts.total;
}

void ensure_finite(const char* op, const char* what, const std::vector<double>& v) {
    if (!kernels::all_finite(v.data(), v.size()))
        throw NumericError(std::string(op) + ": non-finite " + what + " detected");
}

bool grad_wanted(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape.recording()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

Shape leading_dims(const Shape& s, std::size_t drop) {
    return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(drop));
}

// Copies src (with `shape`) into dst with axes a and b swapped.
void transpose_into(const double* src, double* dst, const Shape& shape, std::size_t a,
                    std::size_t b, bool acc) {
    const std::size_t r = shape.size();
    Shape out_shape = shape;
    std::swap(out_shape[a], out_shape[b]);
    std::vector<std::size_t> out_strides(r, 1);
    for (std::size_t i = r - 1; i > 0; --i) out_strides[i - 1] = out_strides[i] * out_shape[i];
    // Stride in the output for each input axis.
    std::vector<std::size_t> map_strides(r);
    for (std::size_t i = 0; i < r; ++i) map_strides[i] = out_strides[i];
    std::swap(map_strides[a], map_strides[b]);

    const std::size_t n = numel(shape);
    std::vector<std::size_t> coord(r, 0);
    std::size_t out_idx = 0;
    for (std::size_t l = 0; l < n; ++l) {
        if (acc)
            dst[out_idx] += src[l];
        else
            dst[out_idx] = src[l];
        for (std::size_t i = r; i-- > 0;) {
            if (++coord[i] < shape[i]) {
                out_idx += map_strides[i];
                break;
            }
            out_idx -= map_strides[i] * (shape[i] - 1);
            coord[i] = 0;
        }
    }
}

}  // namespace

void reset_op_counts() { g_counts = OpCounts{}; }
OpCounts op_counts() { return g_counts; }

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    count_op("matmul");
    if (a.rank() < 2)
        throw ShapeError("matmul: left operand must have rank >= 2, got " +
                         shape_str(a.shape()));
    const std::size_t m = a.dim(a.rank() - 2);
    const std::size_t k = a.dim(a.rank() - 1);
    const Shape lead = leading_dims(a.shape(), 2);
    const std::size_t batch = numel(lead);

    bool shared_b;
    std::size_t n;
    if (b.rank() == 2 && a.rank() != 2) {
        shared_b = true;
        n = b.dim(1);
        if (b.dim(0) != k)
            throw ShapeError("matmul: inner dimensions disagree between " +
                             shape_str(a.shape()) + " and " + shape_str(b.shape()));
    } else {
        if (b.rank() != a.rank() || !std::equal(lead.begin(), lead.end(), b.shape().begin()))
            throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
        if (b.dim(b.rank() - 2) != k)
            throw ShapeError("matmul: inner dimensions disagree between " +
                             shape_str(a.shape()) + " and " + shape_str(b.shape()));
        shared_b = false;
        n = b.dim(b.rank() - 1);
    }

    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(out_shape);
    kernels::matmul_nn(a.data(), b.data(), out.data(), batch, m, k, n, shared_b, false);
    ensure_finite("matmul", "output", out.values());

    if (grad_wanted(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape.record([ac, bc, oc, batch, m, k, n, shared_b]() mutable {
            const double* dout = oc.grad().data();
            if (ac.requires_grad()) {
                kernels::matmul_nt(dout, bc.data(), ac.grad().data(), batch, m, n, k, shared_b,
                                   true);
                ensure_finite("matmul", "gradient", ac.grad());
            }
            if (bc.requires_grad()) {
                if (shared_b)
                    kernels::matmul_tn_reduce(ac.data(), dout, bc.grad().data(), batch, m, k, n,
                                              true);
                else
                    kernels::matmul_tn(ac.data(), dout, bc.grad().data(), batch, m, k, n, true);
                ensure_finite("matmul", "gradient", bc.grad());
            }
        });
    }
    return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    count_op("add");
    const bool same = a.shape() == b.shape();
    bool suffix = false;
    if (!same) {
        if (b.rank() < a.rank())
            suffix = std::equal(b.shape().begin(), b.shape().end(),
                                a.shape().end() - static_cast<std::ptrdiff_t>(b.rank()));
        if (!suffix)
            throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }

    Tensor out = Tensor::zeros(a.shape());
    const std::size_t bn = b.size();
    const std::size_t rows = a.size() / bn;
    if (same)
        kernels::add(a.data(), b.data(), out.data(), a.size());
    else
        kernels::add_bias(a.data(), b.data(), out.data(), rows, bn);
    ensure_finite("add", "output", out.values());

    if (grad_wanted(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape.record([ac, bc, oc, same, rows, bn]() mutable {
            const auto& dout = oc.grad();
            if (ac.requires_grad()) {
                kernels::axpy(1.0, dout.data(), ac.grad().data(), dout.size());
                ensure_finite("add", "gradient", ac.grad());
            }
            if (bc.requires_grad()) {
                if (same)
                    kernels::axpy(1.0, dout.data(), bc.grad().data(), dout.size());
                else
                    kernels::colsum(dout.data(), bc.grad().data(), rows, bn);
                ensure_finite("add", "gradient", bc.grad());
            }
        });
    }
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    count_op("mul");
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    if (!(a.shape() == b.shape()) && !a_scalar && !b_scalar)
        throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));

    const Tensor& big = b_scalar ? a : (a_scalar ? b : a);
    Tensor out = Tensor::zeros(big.shape());
    if (a.shape() == b.shape())
        kernels::mul(a.data(), b.data(), out.data(), out.size());
    else if (b_scalar)
        kernels::scale(a.data(), b.values()[0], out.data(), out.size());
    else
        kernels::scale(b.data(), a.values()[0], out.data(), out.size());
    ensure_finite("mul", "output", out.values());

    if (grad_wanted(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        const bool elementwise = a.shape() == b.shape();
        tape.record([ac, bc, oc, elementwise]() mutable {
            const auto& dout = oc.grad();
            auto accumulate = [&](Tensor& target, const Tensor& other) {
                if (!target.requires_grad()) return;
                auto& g = target.grad();
                if (elementwise) {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        g[i] += dout[i] * other.values()[i];
                } else if (target.size() == 1) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < dout.size(); ++i)
                        s += dout[i] * other.values()[i];
                    g[0] += s;
                } else {
                    kernels::axpy(other.values()[0], dout.data(), g.data(), g.size());
                }
                ensure_finite("mul", "gradient", g);
            };
            accumulate(ac, bc);
            accumulate(bc, ac);
        });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
    count_op("scale");
    Tensor out = Tensor::zeros(a.shape());
    kernels::scale(a.data(), c, out.data(), out.size());
    ensure_finite("scale", "output", out.values());

    if (grad_wanted(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        tape.record([ac, oc, c]() mutable {
            kernels::axpy(c, oc.grad().data(), ac.grad().data(), ac.size());
            ensure_finite("scale", "gradient", ac.grad());
        });
    }
    return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
    count_op("sum");
    Tensor out = Tensor::scalar(kernels::sum(a.data(), a.size()));
    ensure_finite("sum", "output", out.values());

    if (grad_wanted(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        tape.record([ac, oc]() mutable {
            const double g = oc.grad()[0];
            auto& da = ac.grad();
            for (double& v : da) v += g;
            ensure_finite("sum", "gradient", da);
        });
    }
    return out;
}

Tensor softmax(Tape& tape, const Tensor& x, int axis) {
    count_op("softmax");
    const int r = static_cast<int>(x.rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("softmax: axis out of bounds for shape " + shape_str(x.shape()));

    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
    const std::size_t n = x.dim(axis);

    Tensor out = Tensor::zeros(x.shape());
    kernels::softmax_lanes(x.data(), out.data(), outer, n, inner);
    ensure_finite("softmax", "output", out.values());

    if (grad_wanted(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape.record([xc, oc, outer, n, inner]() mutable {
            kernels::softmax_bwd_lanes(oc.data(), oc.grad().data(), xc.grad().data(), outer, n,
                                       inner);
            ensure_finite("softmax", "gradient", xc.grad());
        });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
    count_op("relu");
    Tensor out = Tensor::zeros(x.shape());
    kernels::relu(x.data(), out.data(), out.size());
    ensure_finite("relu", "output", out.values());

    if (grad_wanted(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape.record([xc, oc]() mutable {
            kernels::relu_bwd(xc.data(), oc.grad().data(), xc.grad().data(), xc.size());
            ensure_finite("relu", "gradient", xc.grad());
        });
    }
    return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    count_op("layer_norm");
    if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
    const std::size_t n = x.dim(x.rank() - 1);
    if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
        throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(n) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    const std::size_t rows = x.size() / n;

    Tensor out = Tensor::zeros(x.shape());
    auto mean = std::make_shared<std::vector<double>>(rows);
    auto rstd = std::make_shared<std::vector<double>>(rows);
    kernels::layernorm(x.data(), gamma.data(), beta.data(), eps, out.data(), mean->data(),
                       rstd->data(), rows, n);
    ensure_finite("layer_norm", "output", out.values());

    if (grad_wanted(tape, {&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gamma, bc = beta, oc = out;
        tape.record([xc, gc, bc, oc, mean, rstd, rows, n]() mutable {
            // The kernel writes all three gradients; unneeded ones land in
            // scratch buffers.
            std::vector<double> scratch_x, scratch_g, scratch_b;
            double* dx = xc.requires_grad() ? xc.grad().data()
                                            : (scratch_x.assign(rows * n, 0.0), scratch_x.data());
            double* dg = gc.requires_grad() ? gc.grad().data()
                                            : (scratch_g.assign(n, 0.0), scratch_g.data());
            double* db = bc.requires_grad() ? bc.grad().data()
                                            : (scratch_b.assign(n, 0.0), scratch_b.data());
            kernels::layernorm_bwd(xc.data(), gc.data(), mean->data(), rstd->data(),
                                   oc.grad().data(), dx, dg, db, rows, n);
            if (xc.requires_grad()) ensure_finite("layer_norm", "gradient", xc.grad());
            if (gc.requires_grad()) ensure_finite("layer_norm", "gradient", gc.grad());
            if (bc.requires_grad()) ensure_finite("layer_norm", "gradient", bc.grad());
        });
    }
    return out;
}

Tensor embedding(Tape& tape, const Tensor& table, const std::vector<std::int32_t>& ids,
                 const Shape& leading) {
    count_op("embedding");
    if (table.rank() != 2)
        throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
    if (ids.size() != numel(leading))
        throw ShapeError("embedding: ids length " + std::to_string(ids.size()) +
                         " does not match leading shape " + shape_str(leading));
    const std::size_t v = table.dim(0);
    const std::size_t d = table.dim(1);
    for (std::int32_t id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ContractError("embedding: id " + std::to_string(id) +
                                " out of range for table " + shape_str(table.shape()));

    Shape out_shape = leading;
    out_shape.push_back(d);
    Tensor out = Tensor::zeros(out_shape);
    kernels::embedding(table.data(), ids.data(), out.data(), ids.size(), d);
    ensure_finite("embedding", "output", out.values());

    if (grad_wanted(tape, {&table})) {
        out.set_requires_grad(true);
        Tensor tc = table, oc = out;
        auto ids_copy = std::make_shared<std::vector<std::int32_t>>(ids);
        tape.record([tc, oc, ids_copy, d]() mutable {
            kernels::embedding_bwd(oc.grad().data(), ids_copy->data(), tc.grad().data(),
                                   ids_copy->size(), d);
            ensure_finite("embedding", "gradient", tc.grad());
        });
    }
    return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<std::int32_t>& targets,
                     std::int32_t ignore_index, double label_smoothing) {
    count_op("cross_entropy");
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy: logits must be rank 2, got " +
                         shape_str(logits.shape()));
    const std::size_t rows = logits.dim(0);
    const std::size_t n = logits.dim(1);
    if (targets.size() != rows)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
    std::size_t active = 0;
    for (std::int32_t t : targets) {
        if (t == ignore_index) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= n)
            throw ContractError("cross_entropy: target " + std::to_string(t) +
                                " out of range [0," + std::to_string(n) + ")");
        ++active;
    }
    if (active == 0) throw ContractError("cross_entropy: all positions ignored, mean undefined");

    auto row_loss = std::make_shared<std::vector<double>>(rows);
    auto row_lse = std::make_shared<std::vector<double>>(rows);
    kernels::cross_entropy(logits.data(), targets.data(), ignore_index, label_smoothing,
                           row_loss->data(), row_lse->data(), rows, n);
    const double mean_loss =
        kernels::sum(row_loss->data(), rows) / static_cast<double>(active);
    Tensor out = Tensor::scalar(mean_loss);
    ensure_finite("cross_entropy", "output", out.values());

    if (grad_wanted(tape, {&logits})) {
        out.set_requires_grad(true);
        Tensor lc = logits, oc = out;
        auto tgt = std::make_shared<std::vector<std::int32_t>>(targets);
        tape.record([lc, oc, tgt, row_lse, ignore_index, label_smoothing, rows, n, active]() mutable {
            const double g = oc.grad()[0] / static_cast<double>(active);
            std::vector<double> w(rows);
            for (std::size_t r = 0; r < rows; ++r)
                w[r] = ((*tgt)[r] == ignore_index) ? 0.0 : g;
            kernels::cross_entropy_bwd(lc.data(), tgt->data(), ignore_index, label_smoothing,
                                       row_lse->data(), w.data(), lc.grad().data(), rows, n);
            ensure_finite("cross_entropy", "gradient", lc.grad());
        });
    }
    return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
    count_op("reshape");
    if (numel(new_shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    Tensor out = Tensor::from(std::move(new_shape), x.values());

    if (grad_wanted(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape.record([xc, oc]() mutable {
            kernels::axpy(1.0, oc.grad().data(), xc.grad().data(), xc.size());
        });
    }
    return out;
}

Tensor transpose(Tape& tape, const Tensor& x, int axis_a, int axis_b) {
    count_op("transpose");
    const int r = static_cast<int>(x.rank());
    if (axis_a < 0) axis_a += r;
    if (axis_b < 0) axis_b += r;
    if (axis_a < 0 || axis_a >= r || axis_b < 0 || axis_b >= r)
        throw ShapeError("transpose: axis out of bounds for shape " + shape_str(x.shape()));
    const auto a = static_cast<std::size_t>(axis_a);
    const auto b = static_cast<std::size_t>(axis_b);

    Shape out_shape = x.shape();
    std::swap(out_shape[a], out_shape[b]);
    Tensor out = Tensor::zeros(out_shape);
    transpose_into(x.data(), out.data(), x.shape(), a, b, false);

    if (grad_wanted(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Shape oshape = out.shape();
        tape.record([xc, oc, oshape, a, b]() mutable {
            transpose_into(oc.grad().data(), xc.grad().data(), oshape, a, b, true);
        });
    }
    return out;
}

Tensor masked_fill(Tape& tape, const Tensor& x, std::vector<std::uint8_t> mask, double value) {
    count_op("masked_fill");
    if (mask.size() != x.size())
        throw ShapeError("masked_fill: mask length " + std::to_string(mask.size()) +
                         " does not match tensor " + shape_str(x.shape()));
    Tensor out = Tensor::zeros(x.shape());
    auto m = std::make_shared<std::vector<std::uint8_t>>(std::move(mask));
    kernels::masked_fill(x.data(), m->data(), value, out.data(), out.size());
    ensure_finite("masked_fill", "output", out.values());

    if (grad_wanted(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape.record([xc, oc, m]() mutable {
            kernels::masked_fill_bwd(m->data(), oc.grad().data(), xc.grad().data(), xc.size());
            ensure_finite("masked_fill", "gradient", xc.grad());
        });
    }
    return out;
}

void backward(const Tensor& loss, Tape& tape) {
    if (loss.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss.shape()));
    if (!tape.recording())
        throw ContractError("backward: loss was not produced under a recording tape");
    Tensor l = loss;
    l.grad()[0] += 1.0;
    tape.replay_reverse();
}

GradCheckReport check_gradients(const std::function<Tensor(Tape&)>& f,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                double step, double tolerance) {
    if (step <= 0.0) throw ContractError("check_gradients: step must be positive");

    auto eval = [&]() {
        Tape t(false);
        return f(t).item();
    };

    // Determinism gate: two evaluations must agree bit-for-bit.
    const double l1 = eval();
    const double l2 = eval();
    if (std::memcmp(&l1, &l2, sizeof(double)) != 0)
        throw ContractError("check_gradients: f is not deterministic (" + std::to_string(l1) +
                            " vs " + std::to_string(l2) + ")");

    // Analytic gradients.
    for (const auto& [name, p] : params) {
        Tensor t = p;
        t.grad();
        t.zero_grad();
    }
    Tape tape(true);
    Tensor loss = f(tape);
    backward(loss, tape);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        Tensor t = p;
        analytic.push_back(t.grad());
    }

    GradCheckReport report;
    report.tolerance = tolerance;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor t = params[pi].second;
        auto& vals = t.values();
        double worst = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + step;
            const double lp = eval();
            vals[i] = saved - step;
            const double lm = eval();
            vals[i] = saved;
            const double numeric = (lp - lm) / (2.0 * step);
            const double a = analytic[pi][i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
        report.params.push_back({params[pi].first, worst});
        report.max_rel_err = std::max(report.max_rel_err, worst);
    }
    report.passed = report.max_rel_err < tolerance;
    return report;
}

}  // namespace mtnat::ops
