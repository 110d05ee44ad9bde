#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace td3 {

// Configuration / usage errors map to CLI exit code 2, everything else to 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major array. The single value carrier for activations, weights
// and gradients. Immutable by convention once an op has produced it.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<S> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
      throw ConfigError("tensor: shape " + shape_str(shape) + " does not match buffer size " +
                        std::to_string(data.size()));
    for (auto e : shape)
      if (e < 1) throw ConfigError("tensor: extent must be >= 1, got shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    auto n = numel_of(s);
    return Tensor(std::move(s), std::vector<S>(static_cast<std::size_t>(n), S(0)));
  }
  static Tensor full(Shape s, S v) {
    auto n = numel_of(s);
    return Tensor(std::move(s), std::vector<S>(static_cast<std::size_t>(n), v));
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  std::int64_t extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

  S& at2(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
  S at2(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  S& at3(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  S at3(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = static_cast<U>(data[i]);
    return Tensor<U>(shape, std::move(out));
  }
};

// Non-finite values are surfaced immediately, never propagated. `where`
// names the producing layer or op so training aborts with a usable message.
template <typename S>
inline void require_finite(const Tensor<S>& t, const std::string& where) {
  for (const S v : t.data) {
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("non-finite value in " + where);
  }
}

}  // namespace td3
