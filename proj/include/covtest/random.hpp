#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>

namespace covtest {

using Engine = std::mt19937_64;

/// Independent stream for the node at `path` below `seed`.
///
/// Streams are addressed, not advanced: the engine for replicate 17 of a
/// study is the same no matter how many threads ran or what was drawn
/// before it. All randomness in the library flows through here.
Engine make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

/// Stable 64-bit child seed; used to hand a sub-seed to nested components.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

/// Runs body(i) for i in [0, n) on up to `threads` workers with static
/// contiguous chunks. Bodies must only write to slots they own.
/// threads <= 0 means std::thread::hardware_concurrency().
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

int resolve_threads(int threads) noexcept;

}  // namespace covtest
