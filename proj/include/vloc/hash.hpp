#ifndef VLOC_HASH_HPP_
#define VLOC_HASH_HPP_

#include <cstdint>
#include <string>
#include <string_view>

namespace vloc {

// 64-bit FNV-1a. Stable across platforms, used for config and dataset
// fingerprints embedded in outputs.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hash_hex(std::uint64_t value);

// SplitMix64 step; used to derive independent per-step seeds.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace vloc

#endif  // VLOC_HASH_HPP_
