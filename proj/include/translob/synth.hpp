#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "translob/error.hpp"
#include "translob/lob.hpp"
#include "translob/rng.hpp"

namespace translob {

enum class Regime { trend_up, trend_down, mean_revert, mixed };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::trend_up: return "trend_up";
    case Regime::trend_down: return "trend_down";
    case Regime::mean_revert: return "mean_revert";
    case Regime::mixed: return "mixed";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "trend_up") return Regime::trend_up;
  if (s == "trend_down") return Regime::trend_down;
  if (s == "mean_revert") return Regime::mean_revert;
  if (s == "mixed") return Regime::mixed;
  throw ValidationError("unknown regime: " + s);
}

/// Generated series plus per-event ground-truth segment direction
/// (0 down, 1 flat, 2 up) for auditing label quality. Tags are flat for the
/// single-direction regimes and alternate per segment for `mixed`.
struct SyntheticLob {
  LobSeries series;
  std::vector<int> segment_dir;
};

namespace detail {

// Symmetric book around a given mid, so mid_price() reproduces the path value
// exactly. Level gaps and volumes carry jitter so every feature column has
// variance within a day.
inline LobEvent book_from_mid(double mid, std::int64_t ts, Rng& rng) {
  LobEvent e;
  const double half_spread = mid * 2.5e-4 * (1.0 + 0.2 * rng.uniform());
  e.ask[0].price = mid + half_spread;
  e.bid[0].price = mid - half_spread;
  for (int i = 1; i < kLobLevels; ++i) {
    e.ask[i].price = e.ask[i - 1].price + mid * 1e-4 * (0.5 + rng.uniform());
    e.bid[i].price = e.bid[i - 1].price - mid * 1e-4 * (0.5 + rng.uniform());
  }
  for (int i = 0; i < kLobLevels; ++i) {
    e.ask[i].volume = rng.uniform(50.0, 150.0);
    e.bid[i].volume = rng.uniform(50.0, 150.0);
  }
  e.timestamp = ts;
  return e;
}

}  // namespace detail

/// Mixed-regime segment length in events. A window's label is predictable
/// from its input unless its k-event future crosses a segment boundary, so
/// the accuracy ceiling is about 1 - k/length (>= 95% for k <= 25).
inline constexpr int kMixedSegmentLength = 500;

/// Deterministic synthetic LOB stream. Events are split evenly over
/// `n_days` consecutive day ids starting at 1.
///
/// Regimes: trend_up / trend_down move the mid by a strictly positive
/// (negative) relative drift per event; mean_revert is an
/// Ornstein-Uhlenbeck walk in log-mid around the start price; mixed cycles
/// up -> flat -> down segments of kMixedSegmentLength events with drift
/// strong enough that within-segment windows label as the segment direction
/// at alpha = 0.002, k <= 100.
inline SyntheticLob generate_synthetic_lob_tagged(std::uint64_t seed, int n_events, Regime regime,
                                                  int n_days = 2) {
  if (n_events < 1) throw ValidationError("n_events must be >= 1");
  if (n_days < 1) throw ValidationError("n_days must be >= 1");
  Rng rng(seed);
  SyntheticLob out;
  out.series.events.reserve(n_events);
  out.series.day_ids.reserve(n_events);
  out.segment_dir.reserve(n_events);

  const int events_per_day = (n_events + n_days - 1) / n_days;
  const double start_mid = 100.0;
  double mid = start_mid;
  double log_anchor = std::log(start_mid);

  for (int i = 0; i < n_events; ++i) {
    int tag = kLabelNeutral;
    switch (regime) {
      case Regime::trend_up:
        mid *= 1.0 + 1e-3 * (1.0 + 0.5 * rng.uniform());
        tag = kLabelUp;
        break;
      case Regime::trend_down:
        mid *= 1.0 - 1e-3 * (1.0 + 0.5 * rng.uniform());
        tag = kLabelDown;
        break;
      case Regime::mean_revert: {
        double x = std::log(mid);
        x += 0.05 * (log_anchor - x) + 5e-4 * rng.normal();
        mid = std::exp(x);
        tag = kLabelNeutral;
        break;
      }
      case Regime::mixed: {
        const int segment = i / kMixedSegmentLength;
        const int phase = segment % 3;  // up, flat, down
        double factor = 1.0;
        if (phase == 0) {
          factor = 1.0 + 2e-3 + 2e-4 * rng.normal();
          tag = kLabelUp;
        } else if (phase == 1) {
          factor = 1.0 + 1e-4 * rng.normal();
          tag = kLabelNeutral;
        } else {
          factor = 1.0 - 2e-3 + 2e-4 * rng.normal();
          tag = kLabelDown;
        }
        mid *= std::max(factor, 0.5);
        break;
      }
    }
    out.series.events.push_back(detail::book_from_mid(mid, i, rng));
    out.series.day_ids.push_back(1 + i / events_per_day);
    out.segment_dir.push_back(tag);
  }
  return out;
}

inline LobSeries generate_synthetic_lob(std::uint64_t seed, int n_events, Regime regime,
                                        int n_days = 2) {
  return generate_synthetic_lob_tagged(seed, n_events, regime, n_days).series;
}

}  // namespace translob
