#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "translob/autodiff.hpp"
#include "translob/error.hpp"

namespace translob {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers aligned with a fixed param list, plus the
/// shared step counter t.
struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(std::span<Param* const> params, AdamConfig cfg = {}) {
    AdamState st;
    st.cfg = cfg;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const Param* p : params) {
      st.m.push_back(Tensor::zeros(p->value.shape));
      st.v.push_back(Tensor::zeros(p->value.shape));
    }
    return st;
  }
};

/// One Adam update with bias correction:
///   t += 1; m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
///   theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
inline void adam_step(std::span<Param* const> params, AdamState& st) {
  if (params.size() != st.m.size())
    throw ValidationError("adam_step: state was initialized for a different param list");
  st.t += 1;
  const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (!p.value.same_shape(st.m[i]))
      throw ValidationError("adam_step: shape drift for param " + p.id);
    double* m = st.m[i].ptr();
    double* v = st.v[i].ptr();
    double* th = p.value.ptr();
    const double* g = p.grad.ptr();
    const std::int64_t n = p.value.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / corr1;
      const double vhat = v[j] / corr2;
      th[j] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
    }
  }
}

}  // namespace translob
