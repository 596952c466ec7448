#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pathtrace {

// Runs fn(i) for i in [0, count) on up to `workers` threads. Work items are
// claimed dynamically, so fn must write only to index-addressed outputs. The
// first exception thrown (lowest index among those observed) is rethrown
// after all threads join.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::size_t error_index = count;
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= count) return;
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (i < error_index) {
              error_index = i;
              error = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace pathtrace
