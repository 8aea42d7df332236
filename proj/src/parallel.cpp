#include "ltla/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace ltla {

namespace {
std::atomic<std::size_t> g_max_threads{1};
}

void set_max_threads(std::size_t n) { g_max_threads.store(std::max<std::size_t>(1, n)); }

std::size_t max_threads() { return g_max_threads.load(); }

std::size_t parallel_chunks(std::size_t n) { return std::max<std::size_t>(1, std::min(n, max_threads())); }

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  const std::size_t chunks = parallel_chunks(n);
  if (chunks <= 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(chunks);
  workers.reserve(chunks);
  for (std::size_t w = 0; w < chunks; ++w) {
    const std::size_t begin = n * w / chunks;
    const std::size_t end = n * (w + 1) / chunks;
    workers.emplace_back([&, begin, end, w] {
      try {
        fn(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace ltla
