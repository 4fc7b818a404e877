#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "translob/error.hpp"
#include "translob/lob.hpp"
#include "translob/tensor.hpp"

namespace translob {

/// Attention matrix as plain CSV, one row per query position.
inline void write_attention_csv(const Tensor& map, const std::string& path) {
  if (map.rank() != 2) throw ShapeError("attention map must be rank-2");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const int n = map.shape[0], m = map.shape[1];
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (j) out << ',';
      out << detail::format_double(map.at(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

/// 8-bit grayscale PGM (binary P5), intensity scaled by the matrix maximum.
inline void write_attention_pgm(const Tensor& map, const std::string& path) {
  if (map.rank() != 2) throw ShapeError("attention map must be rank-2");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const int rows = map.shape[0], cols = map.shape[1];
  double mx = 0.0;
  for (double v : map.data) mx = std::max(mx, v);
  if (mx <= 0.0) mx = 1.0;
  out << "P5\n" << cols << " " << rows << "\n255\n";
  for (double v : map.data) {
    const int px = static_cast<int>(std::lround(255.0 * std::clamp(v / mx, 0.0, 1.0)));
    out.put(static_cast<char>(px));
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace translob
