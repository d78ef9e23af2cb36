#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "tokenlab/kernels.hpp"

namespace tokenlab::kernels {

#ifndef TOKENLAB_HAVE_AVX2
const Table* avx2_table() { return nullptr; }
#endif

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Table* pick(std::string_view name) {
    if (name == "scalar") return &scalar_table();
    if (name == "avx2") {
        if (!avx2_table() || !cpu_has_avx2()) throw std::runtime_error("avx2 kernels unavailable on this machine");
        return avx2_table();
    }
    if (name == "auto" || name.empty()) {
        if (avx2_table() && cpu_has_avx2()) return avx2_table();
        return &scalar_table();
    }
    throw std::invalid_argument("unknown kernel table: " + std::string(name));
}

std::atomic<const Table*>& slot() {
    static std::atomic<const Table*> s{[] {
        const char* env = std::getenv("TOKENLAB_KERNELS");
        return pick(env ? std::string_view(env) : std::string_view("auto"));
    }()};
    return s;
}

}  // namespace

const Table& active() { return *slot().load(std::memory_order_acquire); }

void force(std::string_view name) { slot().store(pick(name), std::memory_order_release); }

}  // namespace tokenlab::kernels
