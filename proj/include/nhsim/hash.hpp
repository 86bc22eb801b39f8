#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace nhsim {

// FNV-1a, 64 bit. Stable across runs and platforms, which std::hash is not.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

inline std::string hex_digest(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

} // namespace nhsim
