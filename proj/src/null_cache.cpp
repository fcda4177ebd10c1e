#include "covtest/null_cache.hpp"

#include "covtest/errors.hpp"

#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace covtest {

namespace {

constexpr char magic[8] = {'C', 'O', 'V', 'T', 'N', 'U', 'L', 'L'};

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}

    void u32(std::uint32_t v) { bytes(v, 4); }
    void i32(std::int32_t v) { bytes(static_cast<std::uint32_t>(v), 4); }
    void u64(std::uint64_t v) { bytes(v, 8); }
    void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }

private:
    void bytes(std::uint64_t v, int count)
    {
        for (int i = 0; i < count; ++i) {
            os_.put(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }
    std::ostream& os_;
};

class Reader {
public:
    Reader(std::istream& is, std::string origin) : is_(is), origin_(std::move(origin)) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
    std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(bytes(4))); }
    std::uint64_t u64() { return bytes(8); }
    double f64() { return std::bit_cast<double>(bytes(8)); }

    std::uint64_t count(std::uint64_t limit)
    {
        std::uint64_t n = u64();
        if (n > limit) {
            fail(ErrorCategory::data, "corrupt null-distribution file '" + origin_ + "' (bad length)");
        }
        return n;
    }

private:
    std::uint64_t bytes(int count)
    {
        std::uint64_t v = 0;
        for (int i = 0; i < count; ++i) {
            int c = is_.get();
            if (c == std::char_traits<char>::eof()) {
                fail(ErrorCategory::data, "truncated null-distribution file '" + origin_ + "'");
            }
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
        }
        return v;
    }
    std::istream& is_;
    std::string origin_;
};

// FNV-1a over the little-endian bit patterns.
class Fnv {
public:
    void add(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            h_ ^= (v >> (8 * i)) & 0xffu;
            h_ *= 0x100000001b3ULL;
        }
    }
    void add(double v) { add(std::bit_cast<std::uint64_t>(v)); }
    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string hex(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

bool same_key(const NullDistribution& a, const SpectralCache& cache, LrtKind kind, int h, const LambdaGrid& grid,
              std::size_t n_sims, std::uint64_t seed)
{
    return a.kind == kind && a.h == h && a.seed == seed && a.samples.size() == n_sims && a.cache.m == cache.m &&
           a.cache.p == cache.p && a.cache.d == cache.d && a.cache.K == cache.K && a.cache.mu == cache.mu &&
           a.cache.zeta == cache.zeta && a.grid.values == grid.values;
}

}  // namespace

void save_null(const NullDistribution& null, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            fail(ErrorCategory::config, "cannot write null-distribution file '" + tmp.string() + "'");
        }
        os.write(magic, sizeof(magic));
        Writer w(os);
        w.u32(null_file_version);
        w.u32(null.kind == LrtKind::lrt ? 0 : 1);
        w.i32(null.cache.m);
        w.i32(null.cache.p);
        w.i32(null.cache.d);
        w.i32(null.cache.K);
        w.i32(null.h);
        w.u64(null.seed);
        w.u64(static_cast<std::uint64_t>(null.cache.mu.size()));
        for (double v : null.cache.mu) {
            w.f64(v);
        }
        for (double v : null.cache.zeta) {
            w.f64(v);
        }
        w.u64(null.grid.values.size());
        for (double v : null.grid.values) {
            w.f64(v);
        }
        w.u64(null.samples.size());
        for (double v : null.samples) {
            w.f64(v);
        }
        if (!os) {
            fail(ErrorCategory::config, "write to '" + tmp.string() + "' failed");
        }
    }
    std::filesystem::rename(tmp, path);
}

NullDistribution load_null(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        fail(ErrorCategory::config, "cannot open null-distribution file '" + path.string() + "'");
    }
    char head[8];
    is.read(head, sizeof(head));
    if (!is || std::memcmp(head, magic, sizeof(magic)) != 0) {
        fail(ErrorCategory::data, "'" + path.string() + "' is not a null-distribution file");
    }
    Reader r(is, path.string());
    std::uint32_t version = r.u32();
    if (version != null_file_version) {
        fail(ErrorCategory::data, "unsupported null-distribution file version " + std::to_string(version));
    }
    NullDistribution out;
    std::uint32_t kind = r.u32();
    if (kind > 1) {
        fail(ErrorCategory::data, "corrupt null-distribution file '" + path.string() + "' (kind)");
    }
    out.kind = kind == 0 ? LrtKind::lrt : LrtKind::rlrt;
    out.cache.m = r.i32();
    out.cache.p = r.i32();
    out.cache.d = r.i32();
    out.cache.K = r.i32();
    out.h = r.i32();
    out.seed = r.u64();
    constexpr std::uint64_t limit = 1ULL << 32;
    auto k = static_cast<Eigen::Index>(r.count(limit));
    out.cache.mu.resize(k);
    out.cache.zeta.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        out.cache.mu(i) = r.f64();
    }
    for (Eigen::Index i = 0; i < k; ++i) {
        out.cache.zeta(i) = r.f64();
    }
    out.grid.values.resize(r.count(limit));
    for (auto& v : out.grid.values) {
        v = r.f64();
    }
    out.samples.resize(r.count(limit));
    std::size_t zeros = 0;
    for (auto& v : out.samples) {
        v = r.f64();
        if (v <= zero_tolerance) {
            ++zeros;
        }
    }
    out.zero_mass = out.samples.empty() ? 0.0 : static_cast<double>(zeros) / static_cast<double>(out.samples.size());
    return out;
}

std::string null_cache_key(const SpectralCache& cache, LrtKind kind, int h, const LambdaGrid& grid,
                           std::size_t n_sims, std::uint64_t seed)
{
    Fnv eig;
    for (double v : cache.mu) {
        eig.add(v);
    }
    for (double v : cache.zeta) {
        eig.add(v);
    }
    Fnv g;
    for (double v : grid.values) {
        g.add(v);
    }
    std::ostringstream os;
    os << lrt_kind_name(kind) << "_m" << cache.m << "_p" << cache.p << "_d" << cache.d << "_h" << h << "_K"
       << cache.K << "_e" << hex(eig.value()) << "_g" << hex(g.value()) << "_n" << n_sims << "_s" << seed;
    return os.str();
}

std::filesystem::path resolve_cache_dir(const std::filesystem::path& fallback)
{
    if (const char* env = std::getenv("COVTEST_CACHE_DIR"); env && *env) {
        return std::filesystem::path(env);
    }
    return fallback;
}

NullDistribution cached_simulate_null(const std::optional<std::filesystem::path>& dir, const SpectralCache& cache,
                                      LrtKind kind, int h, const LambdaGrid& grid, std::size_t n_sims,
                                      std::uint64_t seed, int threads, bool* hit)
{
    if (hit) {
        *hit = false;
    }
    if (!dir) {
        return simulate_null(cache, kind, h, grid, n_sims, seed, threads);
    }
    auto path = *dir / (null_cache_key(cache, kind, h, grid, n_sims, seed) + ".bin");
    if (std::filesystem::exists(path)) {
        try {
            NullDistribution stored = load_null(path);
            if (same_key(stored, cache, kind, h, grid, n_sims, seed)) {
                if (hit) {
                    *hit = true;
                }
                return stored;
            }
        } catch (const Error&) {
            // unreadable record: fall through and regenerate
        }
    }
    NullDistribution fresh = simulate_null(cache, kind, h, grid, n_sims, seed, threads);
    save_null(fresh, path);
    return fresh;
}

}  // namespace covtest
