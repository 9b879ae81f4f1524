#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

namespace avb {

// Worker count for bound evaluation: hardware concurrency, capped by the
// ANALYTIC_VB_THREADS environment variable when set.
inline std::size_t evaluation_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ANALYTIC_VB_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
    } catch (...) {
    }
  }
  return n;
}

// Evaluates fn(i) for i in [0, n) into slot i. Work is only split across
// threads when each would get at least `min_per_thread` items.
template <typename Fn>
auto ordered_parallel_map(std::size_t n, Fn&& fn, std::size_t min_per_thread = 32) {
  using R = std::invoke_result_t<Fn&, std::size_t>;
  std::vector<R> parts(n);
  const std::size_t threads =
      std::min(evaluation_threads(), n / std::max<std::size_t>(1, min_per_thread));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) parts[i] = fn(i);
    return parts;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> failures(threads);
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) parts[i] = fn(i);
      } catch (...) {
        failures[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
  return parts;
}

// Sum of fn(i) accumulated in index order, so the total does not depend on
// the number of threads.
template <typename Fn>
double ordered_parallel_sum(std::size_t n, Fn&& fn, std::size_t min_per_thread = 32) {
  double s = 0.0;
  for (double v : ordered_parallel_map(n, fn, min_per_thread)) s += v;
  return s;
}

}  // namespace avb
