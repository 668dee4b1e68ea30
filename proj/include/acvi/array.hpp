#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "acvi/errors.hpp"

namespace acvi {

using Shape = std::vector<std::size_t>;
using Mask = std::vector<std::uint8_t>;  // 1 = real position, 0 = padding

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Plain dense row-major value. The taped Tensor handle wraps one of these.
template <typename S>
struct Array {
  Shape shape;
  std::vector<S> data;

  Array() = default;
  explicit Array(Shape s) : shape(std::move(s)), data(numel(shape), S(0)) {}
  Array(Shape s, std::vector<S> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
      throw ShapeError("array: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
  }

  static Array scalar(S v) { return Array({1}, {v}); }
  static Array zeros(Shape s) { return Array(std::move(s)); }
  static Array full(Shape s, S v) {
    Array a(std::move(s));
    for (auto& x : a.data) x = v;
    return a;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_scalar() const { return data.size() == 1; }

  S& operator[](std::size_t i) { return data[i]; }
  const S& operator[](std::size_t i) const { return data[i]; }
  S& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  const S& at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  template <typename T>
  Array<T> cast() const {
    Array<T> out;
    out.shape = shape;
    out.data.reserve(data.size());
    for (const S& v : data) out.data.push_back(static_cast<T>(v));
    return out;
  }
};

}  // namespace acvi
