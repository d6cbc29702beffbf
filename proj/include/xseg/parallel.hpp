#pragma once

#include <cstddef>
#include <functional>

namespace xseg {

/// Number of workers used when a caller passes jobs <= 0.
int default_jobs();

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is
/// processed exactly once; callers write results into pre-sized slots so the
/// outcome never depends on scheduling. The first exception thrown by any
/// worker is rethrown on the calling thread.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace xseg
