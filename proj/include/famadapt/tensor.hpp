#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "famadapt/error.hpp"

namespace famadapt {

using Index = std::int64_t;
using Shape = std::vector<Index>;

std::string shape_to_string(const Shape& s);
Index shape_numel(const Shape& s);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;

  Index numel() const { return static_cast<Index>(value.size()); }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

// Dense 64-bit row-major tensor. Copies share storage (a Tensor is a handle);
// clone() makes an independent copy. The gradient buffer stays absent until
// a backward pass touches it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  Index numel() const { return n_->numel(); }
  Index dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }

  std::vector<double>& values() { return n_->value; }
  const std::vector<double>& values() const { return n_->value; }
  double item() const;

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool on) { n_->requires_grad = on; }

  // A Tensor is a handle; grad mutation through a const handle is fine,
  // matching shared_ptr semantics.
  std::vector<double>& grad() const { return n_->ensure_grad(); }
  bool has_grad() const { return !n_->grad.empty(); }
  void zero_grad() { n_->grad.clear(); }

  Tensor clone() const;

  std::shared_ptr<detail::TensorNode> node() const { return n_; }

 private:
  std::shared_ptr<detail::TensorNode> n_;
};

// A named, freezable tensor. Frozen parameters take no gradient and are
// never touched by the optimizer.
struct Parameter {
  Tensor tensor;
  std::string name;
  bool frozen = false;

  Parameter() = default;
  Parameter(Tensor t, std::string n) : tensor(std::move(t)), name(std::move(n)) {
    tensor.set_requires_grad(true);
  }

  void freeze() {
    frozen = true;
    tensor.set_requires_grad(false);
    tensor.zero_grad();
  }
  void unfreeze() {
    frozen = false;
    tensor.set_requires_grad(true);
  }
};

// Reverse-mode tape for one forward/backward pass. Constructing a Graph makes
// it the current recording target for the constructing thread; ops append
// their backward steps in execution order, which is already topological.
// Graphs are thread-confined; independent threads may run their own.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* current();

  void record(Tensor output, std::function<void()> backward_step);

  // Seeds d(loss)/d(loss)=1 and runs the tape in reverse. Gradients of leaf
  // tensors (parameters, inputs) accumulate across calls; gradients of op
  // outputs are reset at the start of each call.
  void backward(Tensor& loss);

  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
  std::vector<std::shared_ptr<detail::TensorNode>> outputs_;
};

}  // namespace famadapt
