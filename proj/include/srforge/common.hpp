#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#ifdef __linux__
#include <unistd.h>
#endif

extern "C" void openblas_set_num_threads(int);
extern "C" char* openblas_get_corename(void);

namespace srforge {

/// Error type thrown by all modules. `what()` starts with a short
/// machine-parseable stage tag, e.g. "raster: kernel side must be odd".
class Error : public std::runtime_error {
public:
    Error(const std::string& stage, const std::string& message)
        : std::runtime_error(stage + ": " + message), stage_(stage) {}

    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

[[noreturn]] inline void fail(const std::string& stage, const std::string& message) {
    throw Error(stage, message);
}

inline void require(bool condition, const std::string& stage, const std::string& message) {
    if (!condition) fail(stage, message);
}

/// Deterministic 64-bit generator (splitmix64). Used everywhere randomness is
/// needed so that identical seeds give identical streams on every platform;
/// std::uniform_*_distribution is implementation-defined and is avoided.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 42) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection-free modulo of a 64-bit draw; the
    /// bias is below 2^-32 for any n that fits in 32 bits, and reproducible.
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    /// Derive an independent stream (for per-component seeding).
    Rng fork(std::uint64_t salt) { return Rng(next_u64() ^ salt); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.empty()) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            const std::size_t j = std::size_t(uniform_index(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Thread cap for the numeric backend. SRFORGE_THREADS, when set, caps the
/// BLAS thread count; everything outside BLAS runs sequentially.
inline void apply_thread_cap() {
    if (const char* env = std::getenv("SRFORGE_THREADS")) {
        openblas_set_num_threads(std::max(1, std::atoi(env)));
    }
}

/// OpenBLAS dynamic-arch builds misread some hypervisor CPUIDs and fall back
/// to the generic Prescott kernels, a 3-5x slowdown on AVX-512 hardware. The
/// kernel table is fixed in the library constructor, before main() runs, so
/// the only reliable correction is to restart the process with
/// OPENBLAS_CORETYPE pinned. No-op when detection worked, when the variable
/// is already set, or off Linux. Call first thing in main().
inline void fixup_blas_core(char** argv) {
#if defined(__linux__) && defined(__x86_64__)
    if (std::getenv("OPENBLAS_CORETYPE") || std::getenv("SRFORGE_NO_BLAS_FIXUP")) return;
    if (!__builtin_cpu_supports("avx512f")) return;
    const char* core = openblas_get_corename();
    if (!core) return;
    const std::string_view name(core);
    if (name != "Prescott" && name != "generic" && name != "Northwood" && name != "Katmai")
        return;
    ::setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
    ::execv("/proc/self/exe", argv);
    ::execvp(argv[0], argv); // fallback; on failure keep running on slow kernels
#else
    (void)argv;
#endif
}

} // namespace srforge
