#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mqir::num {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. Parameters carry `requires_grad` and receive their
/// gradient in `grad`, which is either empty or shaped like `values`.
template <typename T>
struct Array {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  std::vector<T> grad;

  Array() = default;
  Array(Shape s, std::vector<T> v, bool trainable = false);

  static Array zeros(Shape s, bool trainable = false);

  std::size_t size() const { return values.size(); }
  bool has_grad() const { return !grad.empty(); }
  void zero_grad();
};

template <typename T>
Array<T>::Array(Shape s, std::vector<T> v, bool trainable)
    : shape(std::move(s)), values(std::move(v)), requires_grad(trainable) {
  if (element_count(shape) != values.size()) {
    throw ShapeError("array of shape " + shape_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
}

template <typename T>
Array<T> Array<T>::zeros(Shape s, bool trainable) {
  const std::size_t n = element_count(s);
  return Array(std::move(s), std::vector<T>(n, T(0)), trainable);
}

template <typename T>
void Array<T>::zero_grad() {
  grad.assign(values.size(), T(0));
}

}  // namespace mqir::num
