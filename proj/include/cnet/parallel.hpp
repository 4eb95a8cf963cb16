#pragma once

#include <cstddef>
#include <functional>

namespace cnet {

// Caps the worker count used by parallel_for (0 = hardware concurrency).
void set_thread_limit(std::size_t n);
std::size_t thread_limit();

// Runs body(i) for i in [0, n). Each index runs exactly once; callers must
// write to disjoint outputs so results never depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace cnet
