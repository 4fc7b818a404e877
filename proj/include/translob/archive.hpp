#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "translob/error.hpp"
#include "translob/lob.hpp"

namespace translob {

// Window archive: little-endian binary dump of LabeledWindows plus a JSON
// sidecar at <path>.json recording the labeling config, stats provenance and
// generator seed. Layout:
//   magic "TLOBWND1" | u32 version | u32 count | u32 rows | u32 cols
//   then per window: i64 anchor_t | i32 label | rows*cols f64 (row-major)

inline constexpr char kArchiveMagic[8] = {'T', 'L', 'O', 'B', 'W', 'N', 'D', '1'};
inline constexpr std::uint32_t kArchiveVersion = 1;

namespace detail {

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError("window archive truncated");
  return v;
}

}  // namespace detail

inline void write_window_archive(const std::string& path,
                                 std::span<const LabeledWindow> windows,
                                 nlohmann::json sidecar_meta = {}) {
  std::uint32_t rows = 0, cols = 0;
  if (!windows.empty()) {
    rows = static_cast<std::uint32_t>(windows.front().input.shape[0]);
    cols = static_cast<std::uint32_t>(windows.front().input.shape[1]);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kArchiveMagic, sizeof kArchiveMagic);
  detail::write_raw(out, kArchiveVersion);
  detail::write_raw(out, static_cast<std::uint32_t>(windows.size()));
  detail::write_raw(out, rows);
  detail::write_raw(out, cols);
  for (const LabeledWindow& w : windows) {
    if (w.input.shape != std::vector<int>{static_cast<int>(rows), static_cast<int>(cols)})
      throw ValidationError("window archive: inconsistent window shapes");
    detail::write_raw(out, w.anchor_t);
    detail::write_raw(out, static_cast<std::int32_t>(w.label));
    out.write(reinterpret_cast<const char*>(w.input.data.data()),
              static_cast<std::streamsize>(w.input.data.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path);

  sidecar_meta["format"] = "translob-windows";
  sidecar_meta["version"] = kArchiveVersion;
  sidecar_meta["count"] = windows.size();
  sidecar_meta["rows"] = rows;
  sidecar_meta["cols"] = cols;
  std::ofstream side(path + ".json");
  if (!side) throw IoError("cannot open " + path + ".json for writing");
  side << sidecar_meta.dump(2) << '\n';
  if (!side) throw IoError("failed writing " + path + ".json");
}

inline std::vector<LabeledWindow> read_window_archive(const std::string& path,
                                                      nlohmann::json* sidecar_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kArchiveMagic, sizeof magic) != 0)
    throw ParseError(path + ": not a translob window archive");
  const auto version = detail::read_raw<std::uint32_t>(in);
  if (version != kArchiveVersion)
    throw ParseError(path + ": unsupported archive version " + std::to_string(version));
  const auto count = detail::read_raw<std::uint32_t>(in);
  const auto rows = detail::read_raw<std::uint32_t>(in);
  const auto cols = detail::read_raw<std::uint32_t>(in);
  std::vector<LabeledWindow> windows;
  windows.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    LabeledWindow w;
    w.anchor_t = detail::read_raw<std::int64_t>(in);
    w.label = detail::read_raw<std::int32_t>(in);
    if (w.label < 0 || w.label > 2)
      throw ParseError(path + ": bad label in window " + std::to_string(i));
    w.input = Tensor({static_cast<int>(rows), static_cast<int>(cols)});
    in.read(reinterpret_cast<char*>(w.input.data.data()),
            static_cast<std::streamsize>(w.input.data.size() * sizeof(double)));
    if (!in) throw ParseError(path + ": truncated window data");
    windows.push_back(std::move(w));
  }
  if (sidecar_out) {
    std::ifstream side(path + ".json");
    if (side) {
      try {
        side >> *sidecar_out;
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ".json: " + e.what());
      }
    } else {
      *sidecar_out = nullptr;
    }
  }
  return windows;
}

}  // namespace translob
