#pragma once

#include <cmath>

#include "translob/rng.hpp"
#include "translob/tensor.hpp"

namespace translob {

/// Glorot (Xavier) uniform fill: U(-limit, limit), limit = sqrt(6/(fan_in+fan_out)).
inline void glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
}

}  // namespace translob
