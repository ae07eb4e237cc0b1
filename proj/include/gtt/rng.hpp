#pragma once

#include <cstdint>
#include <string_view>

namespace gtt {

/// SplitMix64 finalizer; used to derive independent seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of a named sub-stream ("corpus", "init", "shuffle", "mask", ...).
constexpr std::uint64_t substream_seed(std::uint64_t master, std::string_view name) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (char c : name) {
        h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    }
    return mix64(master ^ mix64(h));
}

constexpr std::uint64_t indexed_seed(std::uint64_t base, std::uint64_t index) noexcept
{
    return mix64(base ^ mix64(index + 0x632be59bd9b4e019ULL));
}

} // namespace gtt
