#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace foresight {

/// Worker count: FORESIGHT_THREADS when set and positive, else hardware concurrency.
[[nodiscard]] std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads.
/// Callers write results into per-index slots and reduce them in index order,
/// so outcomes never depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// SplitMix64 finalizer; used to derive independent seeds from (seed, tag...) tuples.
[[nodiscard]] std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                                     std::uint64_t d = 0) noexcept;

}  // namespace foresight
