#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hact {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
struct TapeState;
}  // namespace detail

// Dense row-major double tensor with optional gradient tracking.
//
// A Tensor is a cheap handle; copies share storage. Values are treated as
// immutable once created, except for parameters updated by an optimizer
// through mutable_data() and the gradient buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  // Views into storage; rvalue access is deleted so a view cannot outlive a
  // temporary tensor.
  std::span<const double> data() const&;
  std::span<const double> data() const&& = delete;
  std::span<double> mutable_data() &;
  double at(std::size_t flat_index) const;
  /// Value of a one-element tensor.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const&;
  std::span<const double> grad() const&& = delete;
  std::span<double> mutable_grad() &;
  void zero_grad();
  /// Keep the adjoint of this (non-leaf) tensor after backward().
  void retain_grad();

  const std::string& name() const;
  Tensor& set_name(std::string name);

  /// Deep copy of the values; the copy is a fresh leaf with the same
  /// requires_grad flag and no gradient.
  Tensor clone() const;

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& checked() const;

  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor record_op(std::string, Shape, std::vector<double>, std::vector<Tensor>,
                          std::function<void(std::span<const double>,
                                             std::span<const std::span<double>>)>);
};

// Adjoint callback: receives dLoss/dOutput and one span per input to
// accumulate (+=) into. Spans for inputs that do not require grad are empty.
using Adjoint =
    std::function<void(std::span<const double> grad_output,
                       std::span<const std::span<double>> grad_inputs)>;

// Creates the result of a primitive. When a GradTape is active and any input
// requires grad, the operation is appended to the tape so backward() can
// replay `adjoint`. This is also the extension point for custom primitives.
Tensor record_op(std::string op_name, Shape shape, std::vector<double> data,
                 std::vector<Tensor> inputs, Adjoint adjoint);

// Records executed primitives in order while alive. Tapes nest; the innermost
// active tape receives new operations. Confined to the creating thread.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  std::size_t size() const;
  /// Names of recorded operations in execution order.
  std::vector<std::string> op_names() const;

 private:
  std::shared_ptr<detail::TapeState> state_;
  std::shared_ptr<detail::TapeState> previous_;
};

bool is_recording();

// Suspends recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  std::shared_ptr<detail::TapeState> previous_;
};

// Replays the adjoints of every operation recorded up to `loss` in reverse
// execution order. Leaf gradients accumulate; intermediate gradients are
// released unless retain_grad() was requested.
void backward(const Tensor& loss);

}  // namespace hact
