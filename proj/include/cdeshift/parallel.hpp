#pragma once

#include <cstddef>
#include <functional>

namespace cdeshift {

//! Caps worker threads used by `parallel_for` (0 = hardware concurrency).
void set_max_threads(std::size_t n);
std::size_t max_threads();

//! Runs body(i) for i in [0, n). Each index is visited exactly once; callers
//! write to per-index slots so results do not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace cdeshift
