#include "famadapt/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace famadapt {

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  for (Index d : shape)
    if (d < 0) throw ShapeError("tensor dimensions must be nonnegative, got " + shape_to_string(shape));
  n_ = std::make_shared<detail::TensorNode>();
  n_->shape = std::move(shape);
  n_->value.assign(static_cast<std::size_t>(shape_numel(n_->shape)), fill);
  n_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<Index>(data.size()))
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_to_string(shape));
  Tensor t;
  t.n_ = std::make_shared<detail::TensorNode>();
  t.n_->shape = std::move(shape);
  t.n_->value = std::move(data);
  t.n_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() requires a scalar tensor, got shape " + shape_to_string(shape()));
  return n_->value[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.n_ = std::make_shared<detail::TensorNode>(*n_);
  return t;
}

namespace {
thread_local std::vector<Graph*> g_graph_stack;
}

Graph::Graph() { g_graph_stack.push_back(this); }

Graph::~Graph() { g_graph_stack.pop_back(); }

Graph* Graph::current() {
  return g_graph_stack.empty() ? nullptr : g_graph_stack.back();
}

void Graph::record(Tensor output, std::function<void()> backward_step) {
  outputs_.push_back(output.node());
  steps_.push_back(std::move(backward_step));
}

void Graph::backward(Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_to_string(loss.shape()));
  for (auto& node : outputs_)
    if (!node->grad.empty()) std::fill(node->grad.begin(), node->grad.end(), 0.0);
  loss.grad()[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

}  // namespace famadapt
