#pragma once

#include <map>
#include <string>

#include "acvi/array.hpp"
#include "acvi/rng.hpp"
#include "acvi/tape.hpp"

namespace acvi {

// Named trainable arrays. Dot-separated hierarchical names; iteration order is
// lexicographic (std::map), which fixes the order of every whole-store
// operation (Adam updates, clipping, serialization, gradient checks).
template <typename S>
class ParamStore {
 public:
  using Map = std::map<std::string, Array<S>>;

  bool contains(const std::string& name) const { return params_.count(name); }

  Array<S>& create(const std::string& name, Shape shape) {
    if (params_.count(name))
      throw ConfigError("parameter already exists: " + name);
    return params_.emplace(name, Array<S>(std::move(shape))).first->second;
  }

  Array<S>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("no such parameter: " + name);
    return it->second;
  }
  const Array<S>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("no such parameter: " + name);
    return it->second;
  }

  // Shapes are immutable after creation; values may be replaced.
  void set(const std::string& name, const Array<S>& value) {
    Array<S>& p = get(name);
    if (p.shape != value.shape)
      throw ShapeError("parameter " + name + ": shape " +
                       shape_str(value.shape) + " does not match " +
                       shape_str(p.shape));
    p.data = value.data;
  }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v.size();
    return n;
  }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& [k, v] : params_)
      out.create(k, v.shape).data = v.template cast<T>().data;
    return out;
  }

 private:
  Map params_;
};

// Parameters bound onto a tape for one forward/backward pass. Leafing copies
// the values in; gradients are read back per name after backward().
template <typename S>
struct BoundParams {
  Tape<S>* tape = nullptr;
  ParamStore<S>* store = nullptr;
  std::map<std::string, Tensor<S>> vars;

  Tensor<S> operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ConfigError("parameter not bound: " + name);
    return it->second;
  }

  const Array<S>& grad(const std::string& name) const {
    return tape->grad((*this)[name]);
  }
};

template <typename S>
BoundParams<S> bind(ParamStore<S>& store, Tape<S>& tape,
                    bool requires_grad = true) {
  BoundParams<S> b;
  b.tape = &tape;
  b.store = &store;
  for (auto& [name, value] : store)
    b.vars.emplace(name, tape.leaf(value, requires_grad));
  return b;
}

// Uniform init on [-range, range], addressed by parameter name so values do
// not depend on creation order.
template <typename S>
void init_uniform(Array<S>& a, const std::string& name,
                  const NoiseSource& noise, double range) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the name
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double u = noise.uniform(Stream::kParamInit, h, i);
    a[i] = static_cast<S>((2.0 * u - 1.0) * range);
  }
}

}  // namespace acvi
