#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace cgd::detail {

/// Runs fn(i) for every i in [0, count) with at most `limit` calls in flight.
/// Results must be written by index; completion order is unspecified. If any
/// call throws, the exception from the lowest index is rethrown after all
/// workers have joined, so failures are reported deterministically.
template <typename Fn>
void bounded_parallel_for(std::size_t count, std::size_t limit, Fn&& fn) {
  if (count == 0) return;
  std::vector<std::exception_ptr> errors(count);
  const std::size_t workers = std::min(count, std::max<std::size_t>(limit, 1));

  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }  // jthreads join here

  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace cgd::detail
