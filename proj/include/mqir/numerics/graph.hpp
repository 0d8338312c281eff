#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mqir/numerics/array.hpp"
#include "mqir/numerics/random.hpp"

namespace mqir::num {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  std::size_t id() const { return id_; }
  Graph<T>& graph() const { return *graph_; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::span<const T> values() const;
  /// Gradient after backpropagation; empty when none reached this node.
  std::span<const T> grad() const;
  bool needs_grad() const;

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

enum class Mode { inference, training };

/// Define-by-run computation graph. Each operation evaluates immediately and
/// records a node; nodes are kept in creation order, which is a topological
/// order, and backpropagation walks it in reverse.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  struct Node {
    std::string op;
    Shape shape;
    std::vector<T> value;
    const Array<T>* source = nullptr;  // leaves reading external storage
    Array<T>* parameter = nullptr;     // gradient destination
    std::vector<T> grad;
    bool needs_grad = false;
    Backward backward;
  };

  explicit Graph(Mode mode = Mode::inference, std::uint64_t dropout_seed = 0);

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return mode_ == Mode::training; }
  Rng& dropout_stream() { return dropout_rng_; }

  Tensor<T> constant(Shape shape, std::vector<T> values);
  Tensor<T> constant(const Array<T>& array);
  /// Leaf reading `array` in place; gradients are added into array.grad when
  /// array.requires_grad is set. Repeated calls return the same node.
  Tensor<T> parameter(Array<T>& array);

  void bind(const std::string& name, Array<T> value);
  /// Leaf for a previously bound named input.
  Tensor<T> input(const std::string& name);

  /// Reverse pass from `output` seeded with `seed` (same size as output).
  void backpropagate(Tensor<T> output, std::span<const T> seed);
  /// Reverse pass from a single-element output, seeded with 1.
  void backpropagate(Tensor<T> output);

  std::size_t node_count() const { return nodes_.size(); }

  /// Label prefixed to error messages raised while the scope is alive.
  class Scope {
   public:
    Scope(Graph& g, std::string label);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph& graph_;
  };
  Scope scope(std::string label) { return Scope(*this, std::move(label)); }
  std::string describe(std::string_view op) const;

  // Kernel-facing API.
  Tensor<T> emplace(std::string op, Shape shape, std::vector<T> value,
                    bool needs_grad, Backward backward);
  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::span<const T> value(std::size_t id) const;
  /// Gradient buffer of a node, zero-initialised on first access.
  std::vector<T>& grad_buffer(std::size_t id);

 private:
  Mode mode_;
  Rng dropout_rng_;
  std::deque<Node> nodes_;
  std::unordered_map<const Array<T>*, std::size_t> parameter_nodes_;
  std::map<std::string, Array<T>> inputs_;
  std::vector<std::string> scopes_;
  bool evaluated_ = false;
};

template <typename T>
const Shape& Tensor<T>::shape() const {
  return graph_->node(id_).shape;
}

template <typename T>
std::size_t Tensor<T>::size() const {
  return element_count(shape());
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  return graph_->value(id_);
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  const auto& g = graph_->node(id_).grad;
  return {g.data(), g.size()};
}

template <typename T>
bool Tensor<T>::needs_grad() const {
  return graph_->node(id_).needs_grad;
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace mqir::num
