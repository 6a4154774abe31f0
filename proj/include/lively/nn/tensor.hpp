#pragma once

#include "lively/error.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace lively::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatRef = Eigen::Ref<Mat<T>>;
template <typename T>
using ConstMatRef = Eigen::Ref<const Mat<T>>;

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major tensor. Rank-0 tensors hold a single value.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(element_count(shape_), T{0}) {}
  Tensor(Shape shape, const std::vector<T>& values) : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    require(values_.size() == element_count(shape_), Errc::ShapeMismatch,
            "value count does not match shape " + shape_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  // 2-D view with the trailing axis as columns and all leading axes folded into rows.
  Eigen::Map<Mat<T>> matrix() { return {values_.data(), rows(), cols()}; }
  Eigen::Map<const Mat<T>> matrix() const { return {values_.data(), rows(), cols()}; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Eigen::Index cols() const { return shape_.empty() ? 1 : static_cast<Eigen::Index>(shape_.back()); }
  Eigen::Index rows() const {
    const Eigen::Index c = cols();
    return c == 0 ? 0 : static_cast<Eigen::Index>(values_.size()) / c;
  }

  Shape shape_;
  // Aligned so Eigen's vectorized reductions split the same way on every run.
  std::vector<T, Eigen::aligned_allocator<T>> values_;
};

// Named weights with a parallel gradient for every entry. std::map keeps a
// stable iteration order, which checkpoint bytes and optimizer updates rely on.
template <typename T>
class ParamTree {
 public:
  Tensor<T>& add(const std::string& name, Shape shape) {
    require(!weights_.contains(name), Errc::BadConfig, "duplicate parameter " + name);
    grads_.emplace(name, Tensor<T>(shape));
    return weights_.emplace(name, Tensor<T>(std::move(shape))).first->second;
  }

  bool contains(const std::string& name) const { return weights_.contains(name); }

  Tensor<T>& weight(const std::string& name) { return lookup(weights_, name); }
  const Tensor<T>& weight(const std::string& name) const { return lookup(weights_, name); }
  Tensor<T>& grad(const std::string& name) { return lookup(grads_, name); }
  const Tensor<T>& grad(const std::string& name) const { return lookup(grads_, name); }

  Eigen::Map<Mat<T>> w(const std::string& name) { return weight(name).matrix(); }
  Eigen::Map<const Mat<T>> w(const std::string& name) const { return weight(name).matrix(); }
  Eigen::Map<Mat<T>> g(const std::string& name) { return grad(name).matrix(); }

  void zero_grad() {
    for (auto& [_, g] : grads_) g.fill(T{0});
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : weights_) out.push_back(name);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : weights_) n += t.size();
    return n;
  }

  std::map<std::string, Tensor<T>>& weights() { return weights_; }
  const std::map<std::string, Tensor<T>>& weights() const { return weights_; }
  std::map<std::string, Tensor<T>>& grads() { return grads_; }

  template <typename U>
  ParamTree<U> cast() const {
    ParamTree<U> out;
    for (const auto& [name, t] : weights_) {
      out.add(name, t.shape()) = t.template cast<U>();
    }
    return out;
  }

 private:
  template <typename Map>
  static auto& lookup(Map& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) fail(Errc::BadIndex, "no parameter named " + name);
    return it->second;
  }

  std::map<std::string, Tensor<T>> weights_;
  std::map<std::string, Tensor<T>> grads_;
};

}  // namespace lively::nn
