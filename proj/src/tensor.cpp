#include "tacnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace tacnet {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  impl_->values.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from_values: shape " + shape_to_string(shape) + " holds " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(values);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("Tensor: use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw std::out_of_range("Tensor::dim: axis out of range for " + shape_to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<double> Tensor::values() { return impl_->values; }
std::span<const double> Tensor::values() const { return impl_->values; }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor of shape " + shape_to_string(shape()) + " is not a scalar");
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on) {
    impl_->grad.assign(impl_->values.size(), 0.0);
  } else {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

std::span<double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::clone() const { return from_values(shape(), impl_->values, false); }

Tensor Graph::make_output(Shape shape, std::initializer_list<const Tensor*> inputs) const {
  bool needs_grad = false;
  if (recording_) {
    for (const Tensor* t : inputs) needs_grad = needs_grad || t->requires_grad();
  }
  return Tensor(std::move(shape), 0.0, needs_grad);
}

void Graph::record(std::function<void()> backward_fn) {
  if (recording_) tape_.push_back(std::move(backward_fn));
}

void Graph::backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("Graph::backward: loss must be scalar, got shape " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.grad()[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  tape_.clear();
}

}  // namespace tacnet
