#pragma once

// Dense double-precision inner loops used by the gates, k-means and the
// metrics. Every kernel has a scalar reference implementation; an AVX2+FMA
// variant is selected at runtime when the CPU supports it. Set MOP_SIMD=scalar
// in the environment to force the reference path.

#include <cstddef>
#include <string_view>
#include <vector>

namespace mop::simd {

enum class Level { scalar, avx2 };

std::string_view level_name(Level level) noexcept;

struct KernelTable {
    double (*dot)(const double* a, const double* b, std::size_t n);
    /// y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    double (*squared_distance)(const double* a, const double* b, std::size_t n);
};

/// Kernels for one specific level. Throws if the level is not supported here.
const KernelTable& kernels_for(Level level);

/// The kernels chosen for this process (detected once, on first use).
const KernelTable& active();
Level active_level();

/// Levels this CPU and build can run, scalar first.
std::vector<Level> supported_levels();

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline double squared_distance(const double* a, const double* b, std::size_t n) {
    return active().squared_distance(a, b, n);
}

namespace detail {
double dot_scalar(const double* a, const double* b, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
double squared_distance_scalar(const double* a, const double* b, std::size_t n);

#if defined(__x86_64__) || defined(_M_X64)
double dot_avx2(const double* a, const double* b, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
double squared_distance_avx2(const double* a, const double* b, std::size_t n);
#endif
}  // namespace detail

}  // namespace mop::simd
