// Estimates with standard errors, fixed-order reductions and the parallel
// loop over outer draws.
#pragma once

#include "sfl/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace sfl {

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_outer = 0;
  bool one_sided = false;  // finite difference taken at a box boundary
};

/// Sum in a fixed binary-tree order over the index-ordered array, so the
/// result depends only on the values, never on how they were produced.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double pairwise_mean(std::span<const double> v) {
  return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

/// Mean of per-draw values with the delete-one jackknife standard error.
inline Estimate jackknife_mean(std::span<const double> v) {
  Estimate e;
  e.n_outer = v.size();
  if (v.empty()) return e;
  const double total = pairwise_sum(v);
  const double nn = static_cast<double>(v.size());
  e.value = total / nn;
  if (v.size() < 2) return e;
  std::vector<double> dev(v.size());
  // theta_i - mean(theta) = (mean - v_i) / (n - 1)
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = (e.value - v[i]) / (nn - 1.0);
    dev[i] = d * d;
  }
  e.std_error = std::sqrt((nn - 1.0) / nn * pairwise_sum(dev));
  return e;
}

inline Estimate jackknife_mean(const std::vector<double>& v) { return jackknife_mean(std::span<const double>(v)); }

/// Combined standard error of a difference of two estimates.
inline double combined_se(const Estimate& a, const Estimate& b) {
  return std::hypot(a.std_error, b.std_error);
}

inline std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  const auto hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(i) for i in [0, count). Work is handed out dynamically; callers
/// write into index-addressed slots so the outcome is thread-count invariant.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::min(resolve_threads(threads), std::max<std::size_t>(count, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace sfl
