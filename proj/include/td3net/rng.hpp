#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace td3 {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// All randomness flows from one master seed through named sub-streams so
// that e.g. changing the dropout schedule cannot perturb data shuffling.
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view name) {
  return splitmix64(master ^ fnv1a64(name));
}

inline std::mt19937_64 make_stream(std::uint64_t master, std::string_view name) {
  return std::mt19937_64(stream_seed(master, name));
}

inline std::string serialize_engine(const std::mt19937_64& eng) {
  std::ostringstream os;
  os << eng;
  return os.str();
}

inline std::mt19937_64 deserialize_engine(const std::string& s) {
  std::mt19937_64 eng;
  std::istringstream is(s);
  is >> eng;
  return eng;
}

}  // namespace td3
