#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace weakrank {

/// Worker count: explicit request if positive, else `WEAKRANK_THREADS`, else
/// hardware concurrency. The environment variable also caps explicit requests.
inline std::size_t resolve_workers(std::size_t requested = 0) {
  std::size_t cap = 0;
  if (const char* env = std::getenv("WEAKRANK_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) cap = static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  std::size_t n = requested;
  if (n == 0) n = cap != 0 ? cap : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (cap != 0) n = std::min(n, cap);
  return std::max<std::size_t>(1, n);
}

/// Runs body(begin, end) over contiguous chunks of [0, n). The partition only
/// affects scheduling: callers keep per-index work independent so results do
/// not depend on the worker count.
template <typename Body>
void parallel_for(std::size_t n, std::size_t workers, Body&& body) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    if (n > 0) body(std::size_t{0}, n);
    return;
  }
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace weakrank
