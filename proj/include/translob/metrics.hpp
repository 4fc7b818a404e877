#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "translob/lob.hpp"
#include "translob/model.hpp"

namespace translob {

/// Confusion matrix ([actual][predicted]) and derived scores, as percentages.
/// Macro averages are unweighted means of the per-class values.
struct Metrics {
  std::array<std::array<std::int64_t, 3>, 3> confusion{};
  std::int64_t total = 0;
  double accuracy = 0.0;
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
  std::array<double, 3> f1{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

/// Derive all scores from raw counts. Undefined ratios (0/0) are 0.
inline Metrics metrics_from_confusion(const std::array<std::array<std::int64_t, 3>, 3>& m) {
  Metrics out;
  out.confusion = m;
  std::int64_t trace = 0;
  for (int a = 0; a < 3; ++a)
    for (int p = 0; p < 3; ++p) out.total += m[a][p];
  for (int c = 0; c < 3; ++c) trace += m[c][c];
  out.accuracy = out.total == 0 ? 0.0 : 100.0 * trace / out.total;
  for (int c = 0; c < 3; ++c) {
    std::int64_t pred_c = 0, actual_c = 0;
    for (int r = 0; r < 3; ++r) {
      pred_c += m[r][c];
      actual_c += m[c][r];
    }
    const std::int64_t tp = m[c][c];
    const double prec = pred_c == 0 ? 0.0 : static_cast<double>(tp) / pred_c;
    const double rec = actual_c == 0 ? 0.0 : static_cast<double>(tp) / actual_c;
    const double f = (prec + rec) == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
    out.precision[c] = 100.0 * prec;
    out.recall[c] = 100.0 * rec;
    out.f1[c] = 100.0 * f;
  }
  out.macro_precision = (out.precision[0] + out.precision[1] + out.precision[2]) / 3.0;
  out.macro_recall = (out.recall[0] + out.recall[1] + out.recall[2]) / 3.0;
  out.macro_f1 = (out.f1[0] + out.f1[1] + out.f1[2]) / 3.0;
  return out;
}

/// Argmax with ties broken toward the lower class index.
inline int argmax_class(const Tensor& probs) {
  int best = 0;
  for (std::int64_t j = 1; j < probs.numel(); ++j)
    if (probs.data[j] > probs.data[best]) best = static_cast<int>(j);
  return best;
}

/// Worker-thread count for read-only parallel work; TRANSLOB_THREADS caps it.
inline int worker_threads(std::size_t n_items) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* s = std::getenv("TRANSLOB_THREADS")) {
    const int cap = std::atoi(s);
    if (cap >= 1 && cap < n) n = cap;
  }
  const int per_item = static_cast<int>(n_items / 64);  // below ~64 items threads cost more than they pay
  return std::max(1, std::min(n, std::max(1, per_item)));
}

/// Eval-mode predictions for every window. Parallel over windows; the output
/// order is the input order, so results are deterministic.
inline std::vector<int> predict_all(const ModelParams& mp,
                                    std::span<const LabeledWindow> windows) {
  std::vector<int> preds(windows.size());
  const int nthreads = worker_threads(windows.size());
  if (nthreads == 1) {
    for (std::size_t i = 0; i < windows.size(); ++i)
      preds[i] = argmax_class(forward(mp, windows[i].input).probs);
    return preds;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (windows.size() + nthreads - 1) / nthreads;
  for (int t = 0; t < nthreads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(windows.size(), lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i)
        preds[i] = argmax_class(forward(mp, windows[i].input).probs);
    });
  }
  for (std::thread& th : pool) th.join();
  return preds;
}

inline Metrics evaluate(const ModelParams& mp, std::span<const LabeledWindow> windows) {
  if (windows.empty()) throw ValidationError("evaluate: empty window set");
  const std::vector<int> preds = predict_all(mp, windows);
  std::array<std::array<std::int64_t, 3>, 3> confusion{};
  for (std::size_t i = 0; i < windows.size(); ++i) ++confusion[windows[i].label][preds[i]];
  return metrics_from_confusion(confusion);
}

struct DaySplitPolicy {
  int train_days = 7;
  int test_days = 3;
};

/// Partition a series by day: the first train_days distinct days become the
/// training side, the following test_days days the test side.
inline std::pair<LobSeries, LobSeries> split_train_test(const LobSeries& series,
                                                        DaySplitPolicy policy) {
  if (policy.train_days < 1 || policy.test_days < 1)
    throw ValidationError("split: day counts must be >= 1");
  const std::vector<int> days = series.distinct_days();
  if (static_cast<int>(days.size()) < policy.train_days + policy.test_days)
    throw ValidationError("split: need " + std::to_string(policy.train_days + policy.test_days) +
                          " days, series has " + std::to_string(days.size()));
  const int last_train_day = days[policy.train_days - 1];
  const int last_test_day = days[policy.train_days + policy.test_days - 1];
  LobSeries train, test;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const int d = series.day_ids[i];
    if (d <= last_train_day) {
      train.events.push_back(series.events[i]);
      train.day_ids.push_back(d);
    } else if (d <= last_test_day) {
      test.events.push_back(series.events[i]);
      test.day_ids.push_back(d);
    }
  }
  return {std::move(train), std::move(test)};
}

struct WindowSplit {
  std::vector<LabeledWindow> train;
  std::vector<LabeledWindow> test;
};

/// Partition windows by their anchor's day. Windows are wholly inside one
/// day by construction, so no window straddles the boundary.
inline WindowSplit split_windows_by_day(const LobSeries& series,
                                        std::vector<LabeledWindow> windows,
                                        DaySplitPolicy policy) {
  const std::vector<int> days = series.distinct_days();
  if (static_cast<int>(days.size()) < policy.train_days + policy.test_days)
    throw ValidationError("split: need " + std::to_string(policy.train_days + policy.test_days) +
                          " days, series has " + std::to_string(days.size()));
  const int last_train_day = days[policy.train_days - 1];
  const int last_test_day = days[policy.train_days + policy.test_days - 1];
  WindowSplit out;
  for (LabeledWindow& w : windows) {
    const auto idx = static_cast<std::size_t>(w.anchor_t);
    if (idx >= series.size()) throw ValidationError("window anchor outside series");
    const int d = series.day_ids[idx];
    if (d <= last_train_day)
      out.train.push_back(std::move(w));
    else if (d <= last_test_day)
      out.test.push_back(std::move(w));
  }
  return out;
}

}  // namespace translob
