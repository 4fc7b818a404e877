#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "translob/error.hpp"

namespace translob {

/// When enabled, ops reject NaN/Inf at their boundaries. Off by default;
/// tests flip it on.
inline bool& checked_mode() {
  static bool on = false;
  return on;
}

/// Dense row-major tensor of 64-bit reals.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != checked_numel(shape))
      throw ShapeError("tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return rank() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }

  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  static std::int64_t checked_numel(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void require_shape(const Tensor& t, const std::vector<int>& want, const char* what) {
  if (t.shape != want)
    throw ShapeError(std::string(what) + ": expected " + shape_str(want) + ", got " +
                     shape_str(t.shape));
}

inline void require_finite(const Tensor& t, const char* where) {
  if (checked_mode() && !t.all_finite())
    throw ValidationError(std::string("non-finite value at ") + where);
}

}  // namespace translob
