#include "gcnkit/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace gcnkit {
namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }
int num_threads() { return g_threads.load(); }

void parallel_for(std::size_t count, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(num_threads());
  if (threads <= 1 || count <= grain || count < 2) {
    fn(0, count);
    return;
  }
  const std::size_t chunks = std::min(threads, (count + grain - 1) / std::max<std::size_t>(grain, 1));
  const std::size_t step = (count + chunks - 1) / chunks;
  std::vector<std::jthread> workers;
  workers.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) {
    const std::size_t b = c * step;
    const std::size_t e = std::min(count, b + step);
    if (b < e) workers.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min(count, step));
}

}  // namespace gcnkit
