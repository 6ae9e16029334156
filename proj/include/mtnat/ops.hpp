#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mtnat/tensor.hpp"

// The closed primitive set. Every model computation is composed from these so
// each backward rule stays small enough to audit and gradient-check.
namespace mtnat::ops {

// a: [..., m, k], b: [k, n] (shared weight) or [..., k, n] with matching
// leading dims. Result [..., m, n].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// Same shape, or b's shape a strict suffix of a's (bias broadcast).
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);

// Elementwise; one side may be scalar.
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

// Multiply by a compile-time constant (no gradient for the constant).
Tensor scale(Tape& tape, const Tensor& a, double c);

// Full reduction to a scalar.
Tensor sum(Tape& tape, const Tensor& a);

// Softmax along `axis` (negative counts from the end), max-stabilized.
Tensor softmax(Tape& tape, const Tensor& x, int axis);

Tensor relu(Tape& tape, const Tensor& x);

// x: [..., n]; gamma/beta: [n].
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// table: [V, d]; out: leading + [d]. ids.size() == numel(leading).
Tensor embedding(Tape& tape, const Tensor& table, const std::vector<std::int32_t>& ids,
                 const Shape& leading);

// logits: [N, C]; targets: N entries in [0, C) or == ignore_index. Mean
// label-smoothed negative log-likelihood over non-ignored rows.
Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<std::int32_t>& targets,
                     std::int32_t ignore_index = -1, double label_smoothing = 0.0);

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape);

// Swap two axes (copying).
Tensor transpose(Tape& tape, const Tensor& x, int axis_a, int axis_b);

// mask has one byte per element; where nonzero, output = value and no
// gradient flows.
Tensor masked_fill(Tape& tape, const Tensor& x, std::vector<std::uint8_t> mask, double value);

// Reverse pass: seeds d(loss)/d(loss) = 1 and replays the tape backwards.
// Gradients accumulate into every requires_grad leaf reachable from loss.
void backward(const Tensor& loss, Tape& tape);

// --- gradient checking -----------------------------------------------------

struct GradCheckReport {
    struct PerParam {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<PerParam> params;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Compares backward() against central finite differences (f(p+h)-f(p-h))/2h
// element-wise. Relative error uses denominator max(|analytic|, |numeric|,
// 1e-8). f must be deterministic; it is evaluated twice up front and must
// reproduce the same loss bit-for-bit.
GradCheckReport check_gradients(const std::function<Tensor(Tape&)>& f,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                double step, double tolerance);

// --- operation counting (inference-cost parity harness) ---------------------

struct OpCounts {
    std::map<std::string, std::uint64_t> by_kind;
    std::uint64_t total = 0;
    bool operator==(const OpCounts&) const = default;
};

void reset_op_counts();
OpCounts op_counts();

}  // namespace mtnat::ops
