#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mtnat/errors.hpp"

namespace mtnat {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. Value semantics on the handle, shared
// storage underneath: copies alias the same buffer, which is exactly what
// parameter sharing between the two decoder paths relies on.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const { return shape().at(i); }
    std::size_t size() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);

    std::vector<double>& values();
    const std::vector<double>& values() const;
    double* data() { return values().data(); }
    const double* data() const { return values().data(); }

    // Scalar (single-element) value.
    double item() const;

    // Gradient buffer, materialized as zeros on first access.
    std::vector<double>& grad();
    bool has_grad() const;
    void zero_grad();

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;

    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    Impl& impl();
    const Impl& impl() const;
};

// Recording of primitive applications in execution order. Every entry's
// operands were produced by an earlier entry or are leaves, so replaying the
// stored rules once, in reverse, implements reverse-mode differentiation.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    // Appends a backward rule; called by the op layer only.
    void record(std::function<void()> backward_rule) {
        entries_.push_back(std::move(backward_rule));
    }

    void replay_reverse() {
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> entries_;
    bool recording_ = false;
};

}  // namespace mtnat
