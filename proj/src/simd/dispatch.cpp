#include "mop/simd/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace mop::simd {

namespace {

constexpr KernelTable kScalar{detail::dot_scalar, detail::axpy_scalar, detail::squared_distance_scalar};

#if defined(__x86_64__) || defined(_M_X64)
constexpr KernelTable kAvx2{detail::dot_avx2, detail::axpy_avx2, detail::squared_distance_avx2};

bool cpu_has_avx2() {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#else
bool cpu_has_avx2() { return false; }
#endif

Level detect() {
    if (const char* forced = std::getenv("MOP_SIMD")) {
        if (std::string(forced) == "scalar") return Level::scalar;
    }
    return cpu_has_avx2() ? Level::avx2 : Level::scalar;
}

}  // namespace

std::string_view level_name(Level level) noexcept {
    switch (level) {
        case Level::scalar:
            return "scalar";
        case Level::avx2:
            return "avx2";
    }
    return "unknown";
}

const KernelTable& kernels_for(Level level) {
    switch (level) {
        case Level::scalar:
            return kScalar;
        case Level::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            if (cpu_has_avx2()) return kAvx2;
#endif
            break;
    }
    throw std::runtime_error("simd level not supported: " + std::string(level_name(level)));
}

Level active_level() {
    static const Level level = detect();
    return level;
}

const KernelTable& active() {
    static const KernelTable& table = kernels_for(active_level());
    return table;
}

std::vector<Level> supported_levels() {
    std::vector<Level> out{Level::scalar};
    if (cpu_has_avx2()) out.push_back(Level::avx2);
    return out;
}

}  // namespace mop::simd
