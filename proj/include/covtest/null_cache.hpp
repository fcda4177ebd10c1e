#pragma once

#include "covtest/exact_lrt.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace covtest {

/// Binary null-distribution record, version 1. Every integer and double is
/// stored little-endian regardless of the host:
///
///   char[8]  "COVTNULL"
///   u32      version
///   u32      kind (0 = lrt, 1 = rlrt)
///   i32      m, p, d, K, h
///   u64      seed
///   u64      K, then f64 mu[K], f64 zeta[K]
///   u64      G, then f64 grid[G]
///   u64      n, then f64 samples[n]
inline constexpr std::uint32_t null_file_version = 1;

void save_null(const NullDistribution& null, const std::filesystem::path& path);
NullDistribution load_null(const std::filesystem::path& path);

/// Key over (kind, m, p, d, h, K, eigenvalue hash, grid hash, n_sims, seed)
/// rendered as a file-name-safe string.
std::string null_cache_key(const SpectralCache& cache, LrtKind kind, int h, const LambdaGrid& grid,
                           std::size_t n_sims, std::uint64_t seed);

/// COVTEST_CACHE_DIR if set, otherwise `fallback`.
std::filesystem::path resolve_cache_dir(const std::filesystem::path& fallback);

/// simulate_null through an on-disk cache. With no directory this is
/// simulate_null. A record whose stored key fields disagree with the request
/// is ignored and rewritten.
NullDistribution cached_simulate_null(const std::optional<std::filesystem::path>& dir, const SpectralCache& cache,
                                      LrtKind kind, int h, const LambdaGrid& grid, std::size_t n_sims,
                                      std::uint64_t seed, int threads = 1, bool* hit = nullptr);

}  // namespace covtest
