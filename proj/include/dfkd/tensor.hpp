#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfkd {

/// Dense n-dimensional array, row-major, value-semantic.
/// T is float for training, double for gradient checking, uint8_t for
/// quantized code storage.
template <class T>
struct TensorT {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(shape), T(0));
  }
  TensorT(std::vector<std::size_t> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape))
      throw std::invalid_argument("tensor: data length " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape_str());
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
  }

  static TensorT zeros(std::vector<std::size_t> s) { return TensorT(std::move(s)); }
  static TensorT full(std::vector<std::size_t> s, T v) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return data.size() == 1 && shape.size() <= 1; }

  std::size_t dim(std::size_t i) const { return shape.at(i); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // Row-major indexed access for the common ranks.
  T& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  T& at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
  }
  const T& at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
      os << shape[i] << (i + 1 < shape.size() ? "x" : "");
    os << ']';
    return os.str();
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

/// Concatenates tensors along the leading (batch) dimension.
template <class T>
TensorT<T> concat_batch(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_batch: no tensors");
  std::vector<std::size_t> shape = parts.front().shape;
  if (shape.empty()) throw std::invalid_argument("concat_batch: scalar tensor");
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto& s = parts[i].shape;
    if (s.size() != shape.size() ||
        !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
      throw std::invalid_argument("concat_batch: trailing shape mismatch " +
                                  parts[i].shape_str() + " vs " +
                                  parts.front().shape_str());
    shape[0] += s[0];
  }
  TensorT<T> out(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
    off += p.size();
  }
  return out;
}

}  // namespace dfkd
