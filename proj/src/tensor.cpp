#include "mtnat/tensor.hpp"

#include <numeric>
#include <sstream>

namespace mtnat {

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = std::make_shared<Impl>();
    impl->value.assign(numel(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->value = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor::Impl& Tensor::impl() {
    if (!impl_) throw ContractError("use of an undefined tensor");
    return *impl_;
}

const Tensor::Impl& Tensor::impl() const {
    if (!impl_) throw ContractError("use of an undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::size() const { return impl().value.size(); }

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    impl().requires_grad = v;
    return *this;
}

std::vector<double>& Tensor::values() { return impl().value; }
const std::vector<double>& Tensor::values() const { return impl().value; }

double Tensor::item() const {
    if (size() != 1)
        throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    return impl().value[0];
}

std::vector<double>& Tensor::grad() {
    auto& im = impl();
    if (im.grad.size() != im.value.size()) im.grad.assign(im.value.size(), 0.0);
    return im.grad;
}

bool Tensor::has_grad() const { return impl().grad.size() == impl().value.size(); }

void Tensor::zero_grad() {
    auto& im = impl();
    if (!im.grad.empty()) std::fill(im.grad.begin(), im.grad.end(), 0.0);
}

}  // namespace mtnat
