#pragma once

#include <cstddef>
#include <functional>

namespace gcnkit {

// Intra-op thread count. Defaults to 1; work is split over independent
// output rows, so results do not depend on the count.
void set_num_threads(int n);
int num_threads();

// Calls fn(begin, end) over disjoint chunks of [0, count). Runs inline when
// one thread is configured or the work is below `grain` items.
void parallel_for(std::size_t count, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace gcnkit
