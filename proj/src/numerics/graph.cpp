#include "mqir/numerics/graph.hpp"

#include <numeric>
#include <sstream>

namespace mqir::num {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "," : "") << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
Graph<T>::Graph(Mode mode, std::uint64_t dropout_seed)
    : mode_(mode), dropout_rng_(dropout_seed) {}

template <typename T>
Graph<T>::Scope::Scope(Graph& g, std::string label) : graph_(g) {
  graph_.scopes_.push_back(std::move(label));
}

template <typename T>
Graph<T>::Scope::~Scope() {
  graph_.scopes_.pop_back();
}

template <typename T>
std::string Graph<T>::describe(std::string_view op) const {
  std::string out = "node #" + std::to_string(nodes_.size()) + " '" +
                    std::string(op) + "'";
  if (!scopes_.empty()) {
    out += " in ";
    for (std::size_t i = 0; i < scopes_.size(); ++i) {
      out += (i ? "." : "") + scopes_[i];
    }
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::emplace(std::string op, Shape shape, std::vector<T> value,
                            bool needs_grad, Backward backward) {
  if (element_count(shape) != value.size()) {
    throw ShapeError(describe(op) + ": produced " + std::to_string(value.size()) +
                     " values for shape " + shape_string(shape));
  }
  Node& n = nodes_.emplace_back();
  n.op = std::move(op);
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) {
    n.backward = std::move(backward);
  }
  evaluated_ = true;
  return Tensor<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T> Graph<T>::constant(Shape shape, std::vector<T> values) {
  return emplace("constant", std::move(shape), std::move(values), false, {});
}

template <typename T>
Tensor<T> Graph<T>::constant(const Array<T>& array) {
  return constant(array.shape, array.values);
}

template <typename T>
Tensor<T> Graph<T>::parameter(Array<T>& array) {
  if (auto it = parameter_nodes_.find(&array); it != parameter_nodes_.end()) {
    return Tensor<T>(this, it->second);
  }
  if (element_count(array.shape) != array.values.size()) {
    throw ShapeError(describe("parameter") + ": shape " + shape_string(array.shape) +
                     " does not match " + std::to_string(array.values.size()) + " values");
  }
  Node& n = nodes_.emplace_back();
  n.op = "parameter";
  n.shape = array.shape;
  n.source = &array;
  n.parameter = array.requires_grad ? &array : nullptr;
  n.needs_grad = array.requires_grad;
  parameter_nodes_.emplace(&array, nodes_.size() - 1);
  evaluated_ = true;
  return Tensor<T>(this, nodes_.size() - 1);
}

template <typename T>
void Graph<T>::bind(const std::string& name, Array<T> value) {
  inputs_.insert_or_assign(name, std::move(value));
}

template <typename T>
Tensor<T> Graph<T>::input(const std::string& name) {
  auto it = inputs_.find(name);
  if (it == inputs_.end()) {
    throw std::invalid_argument(describe("input") + ": unbound input '" + name + "'");
  }
  return parameter(it->second);
}

template <typename T>
std::span<const T> Graph<T>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.source != nullptr) {
    return {n.source->values.data(), n.source->values.size()};
  }
  return {n.value.data(), n.value.size()};
}

template <typename T>
std::vector<T>& Graph<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    n.grad.assign(element_count(n.shape), T(0));
  }
  return n.grad;
}

template <typename T>
void Graph<T>::backpropagate(Tensor<T> output, std::span<const T> seed) {
  if (!evaluated_ || !output.valid() || &output.graph() != this) {
    throw std::logic_error("backpropagate called before evaluate");
  }
  if (seed.size() != output.size()) {
    throw ShapeError("backpropagate: seed has " + std::to_string(seed.size()) +
                     " values, output shape is " + shape_string(output.shape()));
  }
  for (Node& n : nodes_) {
    n.grad.clear();
  }
  if (!nodes_[output.id()].needs_grad) {
    return;
  }
  std::vector<T>& g = grad_buffer(output.id());
  std::copy(seed.begin(), seed.end(), g.begin());

  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.needs_grad) {
      continue;
    }
    if (n.backward) {
      n.backward(*this, i);
    }
    if (n.parameter != nullptr) {
      Array<T>& p = *n.parameter;
      if (p.grad.size() != p.values.size()) {
        p.zero_grad();
      }
      for (std::size_t k = 0; k < n.grad.size(); ++k) {
        p.grad[k] += n.grad[k];
      }
    }
  }
}

template <typename T>
void Graph<T>::backpropagate(Tensor<T> output) {
  if (!evaluated_ || !output.valid()) {
    throw std::logic_error("backpropagate called before evaluate");
  }
  if (output.size() != 1) {
    throw ShapeError("backpropagate: implicit seed needs a single-element output, got " +
                     shape_string(output.shape()));
  }
  const T one = T(1);
  backpropagate(output, std::span<const T>(&one, 1));
}

template class Graph<float>;
template class Graph<double>;

}  // namespace mqir::num
