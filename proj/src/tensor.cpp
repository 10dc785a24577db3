#include "jmatch/tensor.hpp"

#include <cmath>
#include <sstream>

namespace jmatch {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<Scalar>(n, Scalar(0)));
}

Tensor Tensor::full(Shape shape, Scalar value) {
  auto n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<Scalar>(n, value));
}

Tensor Tensor::from_values(Shape shape, std::vector<Scalar> values) {
  if (shape_numel(shape) != values.size()) {
    throw TensorError("from_values: shape " + shape_string(shape) + " does not hold " +
                      std::to_string(values.size()) + " values");
  }
  for (auto v : values) {
    if (!std::isfinite(v)) throw TensorError("from_values: non-finite input");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Scalar value) { return from_values({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<Scalar> values) {
  Tensor t = from_values(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw TensorError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw TensorError("axis out of range");
  return s[axis];
}

std::span<const Scalar> Tensor::values() const {
  if (!node_) throw TensorError("use of undefined tensor");
  return node_->value;
}

Scalar Tensor::item() const {
  auto v = values();
  if (v.size() != 1) throw TensorError("item() on tensor of shape " + shape_string(shape()));
  return v[0];
}

Scalar Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw TensorError("at(): rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw TensorError("at(): index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

void Tensor::assign(std::span<const Scalar> values) {
  if (!node_) throw TensorError("assign to undefined tensor");
  if (node_->backward) throw TensorError("assign to a non-leaf tensor");
  if (values.size() != node_->value.size()) throw TensorError("assign: size mismatch");
  std::copy(values.begin(), values.end(), node_->value.begin());
}

Tensor Tensor::detach() const { return from_values(shape(), std::vector<Scalar>(values().begin(), values().end())); }

Tensor make_tensor(const char* op, Shape shape, std::vector<Scalar> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward) {
  for (auto v : values) {
    if (!std::isfinite(v)) throw TensorError(std::string(op) + ": produced a non-finite value");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (g_grad_enabled && backward) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->parents.push_back(in.node_);
    }
    if (!node->parents.empty()) {
      node->requires_grad = true;
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_tensor(const char* op, Shape shape, std::vector<Scalar> values, std::initializer_list<Tensor> inputs,
                   BackwardFn backward) {
  return make_tensor(op, std::move(shape), std::move(values), std::vector<Tensor>(inputs), std::move(backward));
}

std::span<Scalar> GradSink::slot(const Tensor& t) {
  if (!t.requires_grad()) return {};
  auto& buf = buffers_[t.node_.get()];
  if (buf.empty()) buf.assign(t.node_->value.size(), Scalar(0));
  return buf;
}

const Tensor& Gradients::operator[](const Tensor& param) const {
  auto it = grads_.find(param.id());
  if (it == grads_.end()) throw TensorError("no gradient recorded for the requested tensor");
  return it->second;
}

Gradients backward(const Tensor& loss, std::span<const Tensor> params) {
  if (loss.size() != 1) throw TensorError("backward: loss must be a scalar, got " + shape_string(loss.shape()));

  // Post-order DFS; reversed it is a valid reverse-mode schedule.
  std::vector<const detail::Node*> order;
  if (loss.requires_grad()) {
    std::unordered_set<const detail::Node*> done;
    std::unordered_set<const detail::Node*> on_stack;
    std::vector<std::pair<const detail::Node*, std::size_t>> stack{{loss.node_.get(), 0}};
    on_stack.insert(loss.node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        const detail::Node* parent = node->parents[next++].get();
        if (done.count(parent)) continue;
        if (on_stack.count(parent)) throw TensorError("backward: cycle in graph");
        on_stack.insert(parent);
        stack.emplace_back(parent, 0);
      } else {
        done.insert(node);
        on_stack.erase(node);
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  GradSink sink;
  if (!order.empty()) sink.buffers_[loss.node_.get()] = {Scalar(1)};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const detail::Node* node = *it;
    if (!node->backward) continue;
    auto found = sink.buffers_.find(node);
    if (found == sink.buffers_.end()) continue;
    std::vector<Scalar> grad = std::move(found->second);
    sink.buffers_.erase(found);
    node->backward(grad, sink);
  }

  Gradients out;
  for (const auto& p : params) {
    auto found = sink.buffers_.find(p.node_.get());
    if (found != sink.buffers_.end() && !found->second.empty()) {
      out.grads_[p.id()] = Tensor::from_values(p.shape(), std::move(found->second));
    } else {
      out.grads_[p.id()] = Tensor::zeros(p.shape());
    }
  }
  return out;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor uniform_parameter(Shape shape, std::size_t fan_in, std::mt19937& rng, double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  // Draws are made in double so the float and double builds see identical values.
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Scalar> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Scalar>(static_cast<float>(dist(rng)));
  return Tensor::parameter(std::move(shape), std::move(values));
}

}  // namespace jmatch
