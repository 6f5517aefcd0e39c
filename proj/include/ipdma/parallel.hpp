#pragma once

#include <cstddef>
#include <functional>

namespace ipdma {

/// Runs fn(0) .. fn(n-1), possibly on several threads. Callers must write
/// results into per-index slots; aggregation order is then independent of the
/// thread count, which keeps parallel runs byte-identical to serial ones.
/// threads <= 1 runs inline; threads == 0 uses the hardware concurrency.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

} // namespace ipdma
