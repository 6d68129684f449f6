#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tacnet {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense double-precision n-d array. Copies share storage (handle semantics);
/// use clone() for an independent copy. 4-D data is laid out as (B, C, H, W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  /// Gradient buffer, empty when requires_grad() is false. Writable through
  /// const handles: accumulation is how backward closures communicate.
  std::span<double> grad() const;
  void zero_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Tape of executed differentiable operations. Operations append a backward
/// closure in execution order; backward() replays them in reverse, once each.
/// A graph is confined to one thread.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return tape_.size(); }

  /// Output tensor for an op over the given inputs; it requires grad iff the
  /// graph records and any input does.
  Tensor make_output(Shape shape, std::initializer_list<const Tensor*> inputs) const;

  void record(std::function<void()> backward_fn);

  /// Seeds d(loss)/d(loss) = 1 and runs the tape backward. Gradients
  /// accumulate into every requires_grad tensor.
  void backward(Tensor& loss);

 private:
  bool recording_;
  std::vector<std::function<void()>> tape_;
};

}  // namespace tacnet
