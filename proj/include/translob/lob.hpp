#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "translob/error.hpp"
#include "translob/tensor.hpp"

namespace translob {

inline constexpr int kLobLevels = 10;
inline constexpr int kLobFeatures = 4 * kLobLevels;

struct LobLevel {
  double price = 0.0;
  double volume = 0.0;
  bool operator==(const LobLevel&) const = default;
};

/// One order-book snapshot: 10 ask and 10 bid levels, level 1 = best.
struct LobEvent {
  std::array<LobLevel, kLobLevels> ask{};
  std::array<LobLevel, kLobLevels> bid{};
  std::int64_t timestamp = 0;  // event ordinal; events are non-uniform in time

  bool operator==(const LobEvent&) const = default;

  /// Ask prices strictly increasing, bid prices strictly decreasing,
  /// best bid < best ask, all volumes positive.
  void validate() const {
    for (int i = 0; i < kLobLevels; ++i) {
      if (ask[i].volume <= 0.0 || bid[i].volume <= 0.0)
        throw ValidationError("volume must be positive at level " + std::to_string(i + 1));
      if (i > 0 && ask[i].price <= ask[i - 1].price)
        throw ValidationError("ask prices not strictly increasing at level " + std::to_string(i + 1));
      if (i > 0 && bid[i].price >= bid[i - 1].price)
        throw ValidationError("bid prices not strictly decreasing at level " + std::to_string(i + 1));
    }
    if (bid[0].price >= ask[0].price) throw ValidationError("crossed book: best bid >= best ask");
  }

  /// Feature vector in level-major order (p_a^i, v_a^i, p_b^i, v_b^i), i = 1..10.
  std::array<double, kLobFeatures> features() const {
    std::array<double, kLobFeatures> f{};
    for (int i = 0; i < kLobLevels; ++i) {
      f[4 * i + 0] = ask[i].price;
      f[4 * i + 1] = ask[i].volume;
      f[4 * i + 2] = bid[i].price;
      f[4 * i + 3] = bid[i].volume;
    }
    return f;
  }

  static LobEvent from_features(const double* f, std::int64_t ts) {
    LobEvent e;
    for (int i = 0; i < kLobLevels; ++i) {
      e.ask[i] = {f[4 * i + 0], f[4 * i + 1]};
      e.bid[i] = {f[4 * i + 2], f[4 * i + 3]};
    }
    e.timestamp = ts;
    return e;
  }
};

/// Name of feature column j in the level-major layout, e.g. "p_a1", "v_b10".
inline std::string feature_name(int j) {
  static const char* kKind[4] = {"p_a", "v_a", "p_b", "v_b"};
  return std::string(kKind[j % 4]) + std::to_string(j / 4 + 1);
}

inline double mid_price(const LobEvent& e) { return (e.ask[0].price + e.bid[0].price) / 2.0; }

/// Ordered event stream with a per-event day tag used for normalization
/// statistics and train/test splitting.
struct LobSeries {
  std::vector<LobEvent> events;
  std::vector<int> day_ids;

  bool operator==(const LobSeries&) const = default;

  std::size_t size() const { return events.size(); }

  void validate() const {
    if (events.size() != day_ids.size())
      throw ValidationError("LobSeries: day_ids must parallel events");
    for (std::size_t i = 1; i < events.size(); ++i) {
      if (events[i].timestamp < events[i - 1].timestamp)
        throw ValidationError("LobSeries: timestamps must be non-decreasing");
      if (day_ids[i] < day_ids[i - 1])
        throw ValidationError("LobSeries: day_ids must be non-decreasing");
    }
  }

  std::vector<int> distinct_days() const {
    std::vector<int> days;
    for (int d : day_ids)
      if (days.empty() || days.back() != d) days.push_back(d);
    return days;
  }
};

/// Per-feature mean and (strictly positive) standard deviation.
struct NormStats {
  std::array<double, kLobFeatures> mean{};
  std::array<double, kLobFeatures> stdev{};
};

namespace detail {

template <typename Pred>
NormStats stats_over(const LobSeries& series, Pred&& keep, const char* empty_msg) {
  NormStats st;
  std::array<double, kLobFeatures> sum{}, sumsq{};
  std::int64_t n = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!keep(i)) continue;
    const auto f = series.events[i].features();
    for (int j = 0; j < kLobFeatures; ++j) {
      sum[j] += f[j];
      sumsq[j] += f[j] * f[j];
    }
    ++n;
  }
  if (n == 0) throw ValidationError(empty_msg);
  for (int j = 0; j < kLobFeatures; ++j) {
    st.mean[j] = sum[j] / n;
    const double var = std::max(0.0, sumsq[j] / n - st.mean[j] * st.mean[j]);
    st.stdev[j] = std::sqrt(var);
    if (!(st.stdev[j] > 0.0))
      throw ValidationError("zero variance in feature column " + std::to_string(j) + " (" +
                            feature_name(j) + "); cannot z-score a constant feature");
  }
  return st;
}

}  // namespace detail

/// Sample mean and population standard deviation per feature over the single
/// day immediately preceding `day` (the largest day id < day present).
inline NormStats compute_norm_stats(const LobSeries& series, int day) {
  std::optional<int> prev;
  for (int d : series.day_ids)
    if (d < day && (!prev || d > *prev)) prev = d;
  if (!prev)
    throw ValidationError("no data before day " + std::to_string(day) +
                          "; normalization needs a preceding day");
  return detail::stats_over(
      series, [&](std::size_t i) { return series.day_ids[i] == *prev; },
      "no data in preceding day");
}

/// Alternative reading: statistics over all days strictly before `day`.
inline NormStats compute_norm_stats_all_prior(const LobSeries& series, int day) {
  bool any = false;
  for (int d : series.day_ids) any |= (d < day);
  if (!any)
    throw ValidationError("no data before day " + std::to_string(day) +
                          "; normalization needs preceding history");
  return detail::stats_over(
      series, [&](std::size_t i) { return series.day_ids[i] < day; },
      "no data before requested day");
}

inline std::array<double, kLobFeatures> zscore_normalize(const std::array<double, kLobFeatures>& x,
                                                         const NormStats& st) {
  std::array<double, kLobFeatures> out;
  for (int j = 0; j < kLobFeatures; ++j) out[j] = (x[j] - st.mean[j]) / st.stdev[j];
  return out;
}

inline std::array<double, kLobFeatures> zscore_denormalize(const std::array<double, kLobFeatures>& z,
                                                           const NormStats& st) {
  std::array<double, kLobFeatures> out;
  for (int j = 0; j < kLobFeatures; ++j) out[j] = z[j] * st.stdev[j] + st.mean[j];
  return out;
}

/// Readings of the smoothed future mean m+_k(t). The paper's printed formula
/// sums p(t..t+k) (k+1 terms) and divides by k; `literal` keeps that,
/// `mean_k_plus_1` divides by k+1, `exclude_current` averages p(t+1..t+k).
enum class Smoothing { literal, mean_k_plus_1, exclude_current };

inline const char* to_string(Smoothing s) {
  switch (s) {
    case Smoothing::literal: return "literal";
    case Smoothing::mean_k_plus_1: return "mean_k_plus_1";
    case Smoothing::exclude_current: return "exclude_current";
  }
  return "?";
}

inline Smoothing smoothing_from_string(const std::string& s) {
  if (s == "literal") return Smoothing::literal;
  if (s == "mean_k_plus_1") return Smoothing::mean_k_plus_1;
  if (s == "exclude_current") return Smoothing::exclude_current;
  throw ValidationError("unknown smoothing mode: " + s);
}

struct LabelConfig {
  int horizon_k = 10;
  double alpha = 0.002;
  Smoothing smoothing = Smoothing::literal;

  void validate() const {
    if (horizon_k < 1) throw ValidationError("horizon_k must be >= 1");
    if (alpha < 0.0) throw ValidationError("alpha must be non-negative");
  }
};

inline constexpr int kLabelDown = 0;
inline constexpr int kLabelNeutral = 1;
inline constexpr int kLabelUp = 2;

/// Smoothed mean of future mid-prices at event t. Requires events t..t+k.
inline double smoothed_future_mean(const LobSeries& series, std::size_t t, int k,
                                   Smoothing mode = Smoothing::literal) {
  if (k < 1) throw ValidationError("smoothed_future_mean: k must be >= 1");
  if (t + static_cast<std::size_t>(k) >= series.size())
    throw ValidationError("smoothed_future_mean: events t..t+k not all present (t=" +
                          std::to_string(t) + ", k=" + std::to_string(k) + ", size=" +
                          std::to_string(series.size()) + ")");
  double s = 0.0;
  const std::size_t first = mode == Smoothing::exclude_current ? t + 1 : t;
  for (std::size_t n = first; n <= t + static_cast<std::size_t>(k); ++n)
    s += mid_price(series.events[n]);
  const double divisor = mode == Smoothing::mean_k_plus_1 ? k + 1 : k;
  return s / divisor;
}

/// Direction of r_k(t) = (m+_k(t) - p(t)) / p(t) against the threshold:
/// up(2) iff r > alpha, down(0) iff r < -alpha, neutral(1) otherwise
/// (both inequalities strict, so r = +-alpha is neutral).
inline int label_direction(const LobSeries& series, std::size_t t, const LabelConfig& cfg) {
  cfg.validate();
  const double p = mid_price(series.events.at(t));
  const double m = smoothed_future_mean(series, t, cfg.horizon_k, cfg.smoothing);
  const double r = (m - p) / p;
  if (r > cfg.alpha) return kLabelUp;
  if (r < -cfg.alpha) return kLabelDown;
  return kLabelNeutral;
}

/// Normalized input window plus its direction label. anchor_t is the
/// timestamp (event ordinal) of the last input row.
struct LabeledWindow {
  Tensor input;  // [window, 40]
  int label = kLabelNeutral;
  std::int64_t anchor_t = 0;
};

enum class StatsPolicy { prev_day, all_prev_days, explicit_stats };

struct WindowOptions {
  StatsPolicy stats_policy = StatsPolicy::prev_day;
  std::optional<NormStats> stats;  // required for explicit_stats
  bool cross_day = false;          // when true, windows may span day boundaries
  int window = 100;
};

/// One labeled window per anchor t whose `window`-event history and k-event
/// future exist within the allowed day boundaries, each row z-scored with the
/// stats for that row's day. Days with no usable normalization history yield
/// no rows (and no windows, when windows may not cross days).
inline std::vector<LabeledWindow> make_windows(const LobSeries& series, const LabelConfig& cfg,
                                               const WindowOptions& opt = {}) {
  cfg.validate();
  if (opt.window < 1) throw ValidationError("window length must be >= 1");
  if (opt.stats_policy == StatsPolicy::explicit_stats && !opt.stats)
    throw ValidationError("explicit_stats policy requires stats");
  series.validate();

  const std::size_t n = series.size();
  std::vector<LabeledWindow> out;
  if (n == 0) return out;

  // Per-day index range.
  std::map<int, std::pair<std::size_t, std::size_t>> day_range;  // day -> [first, last]
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] = day_range.try_emplace(series.day_ids[i], i, i);
    if (!fresh) it->second.second = i;
  }

  // Normalization stats per day. Days with no prior history are unusable
  // (nullopt); degenerate (zero-variance) history is a hard error.
  std::map<int, std::optional<NormStats>> day_stats;
  for (const auto& [day, range] : day_range) {
    if (opt.stats_policy == StatsPolicy::explicit_stats) {
      day_stats[day] = *opt.stats;
      continue;
    }
    const bool has_prior = std::any_of(series.day_ids.begin(), series.day_ids.end(),
                                       [day](int d) { return d < day; });
    if (!has_prior) {
      day_stats[day] = std::nullopt;
      continue;
    }
    day_stats[day] = opt.stats_policy == StatsPolicy::prev_day
                         ? compute_norm_stats(series, day)
                         : compute_norm_stats_all_prior(series, day);
  }

  const std::size_t w = static_cast<std::size_t>(opt.window);
  const std::size_t k = static_cast<std::size_t>(cfg.horizon_k);
  for (std::size_t t = 0; t + k < n; ++t) {
    if (t + 1 < w) continue;
    const std::size_t first = t + 1 - w;
    if (!opt.cross_day) {
      const int day = series.day_ids[t];
      const auto& [day_first, day_last] = day_range.at(day);
      if (first < day_first || t + k > day_last) continue;
    }
    bool usable = true;
    for (std::size_t r = first; r <= t && usable; ++r)
      usable = day_stats.at(series.day_ids[r]).has_value();
    if (!usable) continue;

    LabeledWindow lw;
    lw.input = Tensor({opt.window, kLobFeatures});
    for (std::size_t r = first; r <= t; ++r) {
      const NormStats& st = *day_stats.at(series.day_ids[r]);
      const auto z = zscore_normalize(series.events[r].features(), st);
      std::copy(z.begin(), z.end(), lw.input.ptr() + (r - first) * kLobFeatures);
    }
    lw.label = label_direction(series, t, cfg);
    lw.anchor_t = series.events[t].timestamp;
    out.push_back(std::move(lw));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV input/output
//
// One event per line, 40 comma-separated decimal fields in level-major order
// (p_a^i, v_a^i, p_b^i, v_b^i) for i = 1..10, optionally preceded by an
// integer day_id column. '#'-prefixed comment lines and blank lines are
// ignored. LF or CRLF endings. Doubles are written in shortest
// round-trippable form, so parse(write(s)) == s bitwise.
// ---------------------------------------------------------------------------

enum class OnInvalid { abort, skip };

struct LobFileFormat {
  bool day_column = false;
  OnInvalid on_invalid = OnInvalid::abort;
  int default_day = 1;  // day id assigned when no day column is present
};

struct ParseReport {
  std::size_t rows_skipped = 0;
};

namespace detail {

inline double parse_double_field(std::string_view field, std::size_t row, std::size_t col) {
  const char* b = field.data();
  const char* e = b + field.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  double v = 0.0;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e)
    throw ParseError("malformed numeric field '" + std::string(field) + "'", row, col);
  return v;
}

inline long parse_int_field(std::string_view field, std::size_t row, std::size_t col) {
  const char* b = field.data();
  const char* e = b + field.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  long v = 0;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e)
    throw ParseError("malformed integer field '" + std::string(field) + "'", row, col);
  return v;
}

inline std::string format_double(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

inline LobSeries parse_lob_csv(std::istream& in, const LobFileFormat& fmt = {},
                               ParseReport* report = nullptr) {
  LobSeries series;
  std::string line;
  std::size_t row = 0;
  std::size_t skipped = 0;
  const std::size_t want_fields = kLobFeatures + (fmt.day_column ? 1 : 0);
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;

    std::vector<std::string_view> fields;
    std::string_view sv(line);
    std::size_t start = 0;
    for (std::size_t i = 0; i <= sv.size(); ++i) {
      if (i == sv.size() || sv[i] == ',') {
        fields.push_back(sv.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != want_fields)
      throw ParseError("expected " + std::to_string(want_fields) + " fields, got " +
                           std::to_string(fields.size()),
                       row);

    int day = fmt.default_day;
    std::size_t off = 0;
    if (fmt.day_column) {
      day = static_cast<int>(detail::parse_int_field(fields[0], row, 1));
      off = 1;
    }
    double f[kLobFeatures];
    for (int j = 0; j < kLobFeatures; ++j)
      f[j] = detail::parse_double_field(fields[off + j], row, off + j + 1);

    LobEvent e = LobEvent::from_features(f, static_cast<std::int64_t>(series.size()));
    try {
      e.validate();
      if (!series.day_ids.empty() && day < series.day_ids.back())
        throw ValidationError("day_id decreased");
    } catch (const ValidationError& err) {
      if (fmt.on_invalid == OnInvalid::skip) {
        ++skipped;
        continue;
      }
      throw ValidationError("invalid event at row " + std::to_string(row) + ": " + err.what());
    }
    series.events.push_back(e);
    series.day_ids.push_back(day);
  }
  if (report) report->rows_skipped = skipped;
  return series;
}

inline LobSeries parse_lob_file(const std::string& path, const LobFileFormat& fmt = {},
                                ParseReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_lob_csv(in, fmt, report);
}

inline void write_lob_csv(const LobSeries& series, std::ostream& out, bool day_column = true) {
  out << "# translob LOB CSV v1\n";
  out << "# columns:" << (day_column ? " day_id," : " ")
      << " then (p_a,v_a,p_b,v_b) per level, levels 1..10\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (day_column) out << series.day_ids[i] << ',';
    const auto f = series.events[i].features();
    for (int j = 0; j < kLobFeatures; ++j) {
      if (j) out << ',';
      out << detail::format_double(f[j]);
    }
    out << '\n';
  }
}

inline void write_lob_file(const LobSeries& series, const std::string& path,
                           bool day_column = true) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_lob_csv(series, out, day_column);
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace translob
