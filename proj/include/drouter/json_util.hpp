#pragma once

// Strict JSON config reading: every object lists the keys it accepts and
// anything else is rejected with the offending path.

#include <cstdint>
#include <initializer_list>
#include <json.hpp>
#include <string>
#include <string_view>

#include "drouter/error.hpp"

namespace drouter {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

inline void expect_object(const Json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

inline void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                                const std::string& where) {
    expect_object(j, where);
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || a == key;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

/// Reads j[key] into `out` when present; type mismatches become ConfigError.
template <class T>
void read_key(const Json& j, const char* key, T& out, const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

/// 64-bit FNV-1a over a byte string.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

}  // namespace drouter
