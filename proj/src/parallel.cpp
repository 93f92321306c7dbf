#include "glbm/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace glbm {

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int n) { g_threads = std::max(1, n); }
int thread_count() { return g_threads; }

void parallel_for(int n, const std::function<void(int, int)>& body) {
  const int t = std::min(g_threads.load(), n / 64);
  if (t <= 1) {
    if (n > 0) body(0, n);
    return;
  }
  std::exception_ptr err;
  std::mutex m;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(t));
  for (int k = 0; k < t; ++k) {
    const int b = static_cast<int>(static_cast<long>(n) * k / t);
    const int e = static_cast<int>(static_cast<long>(n) * (k + 1) / t);
    pool.emplace_back([&, b, e] {
      try {
        body(b, e);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace glbm
