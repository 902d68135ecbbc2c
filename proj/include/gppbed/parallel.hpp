#pragma once

#include <cstddef>
#include <functional>

namespace gppbed {

/// Worker count used by batch forward evaluation. Defaults to the GPPBED_THREADS
/// environment variable when set, otherwise 1.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs body(i) for i in [0, n). Each index is handled by exactly one worker and results
/// must be written to per-index slots, so output does not depend on the worker count.
/// If several indices throw, the exception of the lowest index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace gppbed
