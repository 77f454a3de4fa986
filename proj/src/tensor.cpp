#include "hact/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "hact/error.hpp"

namespace hact {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  bool retain = false;
  std::string name;
  // Set for results of recorded operations.
  std::weak_ptr<TapeState> tape;
  std::size_t tape_index = 0;
};

struct TapeEntry {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  Adjoint adjoint;
};

struct TapeState {
  std::vector<TapeEntry> entries;
};

namespace {
thread_local std::shared_ptr<TapeState> active_tape;
}  // namespace

}  // namespace detail

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

detail::TensorImpl& Tensor::checked() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const& { return checked().data; }

std::span<double> Tensor::mutable_data() & { return checked().data; }

double Tensor::at(std::size_t flat_index) const {
  const auto& d = checked().data;
  if (flat_index >= d.size()) throw IndexError("flat index " + std::to_string(flat_index) + " out of range");
  return d[flat_index];
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return checked().data[0];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool value) { checked().requires_grad = value; }

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const& { return checked().grad; }

std::span<double> Tensor::mutable_grad() & {
  auto& impl = checked();
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void Tensor::zero_grad() { checked().grad.clear(); }

void Tensor::retain_grad() { checked().retain = true; }

const std::string& Tensor::name() const { return checked().name; }

Tensor& Tensor::set_name(std::string name) {
  checked().name = std::move(name);
  return *this;
}

Tensor Tensor::clone() const {
  const auto& impl = checked();
  Tensor copy(impl.shape, impl.data, impl.requires_grad);
  copy.impl_->name = impl.name;
  return copy;
}

Tensor record_op(std::string op_name, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                 Adjoint adjoint) {
  Tensor out(std::move(shape), std::move(data));
  if (!detail::active_tape) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;

  auto& impl = *out.impl_;
  impl.requires_grad = true;
  impl.tape = detail::active_tape;
  impl.tape_index = detail::active_tape->entries.size();

  detail::TapeEntry entry;
  entry.op = std::move(op_name);
  entry.inputs.reserve(inputs.size());
  for (auto& t : inputs) entry.inputs.push_back(t.impl());
  entry.output = out.impl_;
  entry.adjoint = std::move(adjoint);
  detail::active_tape->entries.push_back(std::move(entry));
  return out;
}

GradTape::GradTape() : state_(std::make_shared<detail::TapeState>()), previous_(detail::active_tape) {
  detail::active_tape = state_;
}

GradTape::~GradTape() { detail::active_tape = previous_; }

std::size_t GradTape::size() const { return state_->entries.size(); }

std::vector<std::string> GradTape::op_names() const {
  std::vector<std::string> names;
  names.reserve(state_->entries.size());
  for (const auto& e : state_->entries) names.push_back(e.op);
  return names;
}

bool is_recording() { return detail::active_tape != nullptr; }

NoGradGuard::NoGradGuard() : previous_(detail::active_tape) { detail::active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { detail::active_tape = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward on an undefined tensor");
  if (loss.numel() != 1) throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  auto& root = *loss.impl();
  auto tape = root.tape.lock();
  if (!tape || root.tape_index >= tape->entries.size() || tape->entries[root.tape_index].output.get() != &root) {
    throw UsageError("backward on a tensor that was not produced under an active GradTape");
  }

  root.grad.assign(1, 1.0);
  std::vector<std::span<double>> grad_spans;
  for (std::size_t k = root.tape_index + 1; k-- > 0;) {
    auto& entry = tape->entries[k];
    auto& out = *entry.output;
    if (out.grad.empty()) continue;
    grad_spans.clear();
    for (auto& in : entry.inputs) {
      if (in->requires_grad) {
        if (in->grad.empty()) in->grad.assign(in->data.size(), 0.0);
        grad_spans.emplace_back(in->grad);
      } else {
        grad_spans.emplace_back();
      }
    }
    entry.adjoint(out.grad, grad_spans);
    if (!out.retain) {
      out.grad.clear();
      out.grad.shrink_to_fit();
    }
  }
}

}  // namespace hact
