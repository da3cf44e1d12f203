#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace deltamon {

/// Error raised for invalid data, malformed files, or broken invariants.
/// The CLI maps it to exit code 2 (usage problems are exit code 1).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& what) { throw Error(what); }

constexpr std::int64_t kSecondsPerDay = 86400;

// ---------------------------------------------------------------------------
// Seed derivation and deterministic random numbers.
//
// All randomness in the project flows through Rng (a mt19937_64 with explicit
// value mapping, so streams are reproducible across platforms) and seeds are
// derived with splitmix64 so that independent consumers (frames, windows,
// dropout masks) get decorrelated streams from one master seed.
// ---------------------------------------------------------------------------

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t head, Rest... rest) {
    return mix_seed(splitmix64(seed ^ (head + 0x9e3779b97f4a7c15ULL)), rest...);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + std::int64_t(gen_() % std::uint64_t(hi - lo + 1));
    }

    double normal(double mean = 0.0, double sigma = 1.0) {
        // Marsaglia polar method; one value per call, the spare is dropped
        // to keep the stream position independent of call pairing.
        double u, v, s;
        do {
            u = uniform(-1.0, 1.0);
            v = uniform(-1.0, 1.0);
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        return mean + sigma * u * std::sqrt(-2.0 * std::log(s) / s);
    }

    /// Mean-1 gamma variate with integer shape `looks` (sum of exponentials).
    double gamma_mean1(int looks) {
        double acc = 0.0;
        for (int i = 0; i < looks; ++i) acc += -std::log(1.0 - uniform());
        return acc / double(looks);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = std::size_t(uniform_int(0, std::int64_t(i) - 1));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// UTC timestamps (epoch seconds) and ISO-8601 text form "YYYY-MM-DDThh:mm:ssZ".
// ---------------------------------------------------------------------------

std::string format_utc(std::int64_t epoch_seconds);
std::int64_t parse_utc(std::string_view iso8601);

/// 64-bit FNV-1a, used to stamp resolved run configurations into logs.
std::uint64_t fnv1a64(std::string_view text);

/// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
/// worker. threads <= 1 executes inline. Workers must write only to disjoint
/// per-index slots; any ordered reduction happens in the caller.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace deltamon
