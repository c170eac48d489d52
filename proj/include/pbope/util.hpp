#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace pbope {

// Thrown for malformed input data, files or configs. The CLI maps this to
// exit code 2; usage errors exit with 1.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic hashing / RNG stream derivation
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Per-session RNG stream seed from (seed, day, index). Streams are
// independent of iteration order, so sessions can be simulated in parallel.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t day, std::uint64_t index) {
    std::uint64_t s = splitmix64(seed ^ (0x9E3779B97F4A7C15ull * (day + 1)));
    return splitmix64(s ^ (0xC2B2AE3D27D4EB4Full * (index + 1)));
}

// FNV-1a over bytes, seeded. Pinned algorithm (not std::hash) so that logs
// and policies are reproducible across platforms.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64_parts(std::initializer_list<std::string_view> parts,
                                   std::uint64_t salt = 0) {
    std::uint64_t h = splitmix64(0x9AE16A3B2F90404Full ^ salt);
    for (const auto& p : parts) {
        h = fnv1a64(p, h);
        h = fnv1a64("\x1f", h);
    }
    return h;
}

// 53-bit uniform in [0, 1).
inline double to_unit(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline double hash_unit(std::initializer_list<std::string_view> parts, std::uint64_t salt = 0) {
    return to_unit(splitmix64(fnv1a64_parts(parts, salt)));
}

// ---------------------------------------------------------------------------
// Compensated summation and small statistics helpers
// ---------------------------------------------------------------------------

class KahanSum {
public:
    void add(double x) {
        double y = x - c_;
        double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

private:
    double s_ = 0.0;
    double c_ = 0.0;
};

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    KahanSum s;
    for (double x : v) s.add(x);
    return s.value() / static_cast<double>(v.size());
}

// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
inline double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    KahanSum sq;
    for (double x : v) sq.add((x - m) * (x - m));
    return std::sqrt(sq.value() / static_cast<double>(v.size() - 1));
}

// Pearson correlation; NaN when either series is (numerically) constant.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) return std::nan("");
    double mx = mean_of(x), my = mean_of(y);
    KahanSum sxy, sxx, syy;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy.add((x[i] - mx) * (y[i] - my));
        sxx.add((x[i] - mx) * (x[i] - mx));
        syy.add((y[i] - my) * (y[i] - my));
    }
    double den = std::sqrt(sxx.value()) * std::sqrt(syy.value());
    if (den <= 0.0 || !std::isfinite(den)) return std::nan("");
    return sxy.value() / den;
}

// ---------------------------------------------------------------------------
// Worker parallelism
// ---------------------------------------------------------------------------

// PBOPE_THREADS caps worker parallelism; 0 or unset means auto.
inline unsigned worker_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("PBOPE_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0 && static_cast<unsigned>(v) < hw) return static_cast<unsigned>(v);
    }
    return hw;
}

// Parallel map over [0, n). f(i) must write only to slot i of its output;
// chunk boundaries are fixed, so results do not depend on the worker count.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
    unsigned threads = worker_threads();
    if (threads <= 1 || n < 512) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    const std::size_t chunk = 256;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t begin = next.fetch_add(chunk);
            if (begin >= n) return;
            std::size_t end = begin + chunk < n ? begin + chunk : n;
            for (std::size_t i = begin; i < end; ++i) f(i);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

}  // namespace pbope
