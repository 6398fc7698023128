#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vlaconv/error.hpp"

namespace vlaconv {

/// Geometry of one convolutional layer. Output size uses floor division,
/// as Darknet does for layers whose window does not divide evenly.
struct ConvShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t filters = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_height() const noexcept { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const noexcept { return (width + 2 * pad - kernel) / stride + 1; }

  std::size_t input_elements() const noexcept { return channels * height * width; }
  std::size_t filter_elements() const noexcept { return filters * channels * kernel * kernel; }
  std::size_t output_elements() const noexcept { return filters * out_height() * out_width(); }

  /// Multiply-accumulates of the direct algorithm.
  std::uint64_t macs() const noexcept {
    return std::uint64_t{filters} * channels * kernel * kernel * out_height() * out_width();
  }

  void validate() const {
    if (channels == 0 || filters == 0 || height == 0 || width == 0)
      throw ArgumentError("convolution dimensions must be positive");
    if (kernel == 0 || stride == 0) throw ArgumentError("kernel and stride must be positive");
    if (height + 2 * pad < kernel || width + 2 * pad < kernel)
      throw ArgumentError("kernel " + std::to_string(kernel) + " larger than padded input");
  }
};

/// Deterministic uniform values in [-1, 1). The mapping from the 32-bit
/// Mersenne Twister output is fixed here so results do not depend on the
/// standard library's distribution implementation.
inline std::vector<float> uniform_values(std::size_t n, std::uint64_t seed) {
  std::mt19937 gen(static_cast<std::mt19937::result_type>(seed ^ (seed >> 32)));
  std::vector<float> out(n);
  for (auto& v : out) {
    const std::uint32_t bits = static_cast<std::uint32_t>(gen()) >> 8;  // 24 bits
    v = static_cast<float>(bits) * (2.0f / 16777216.0f) - 1.0f;
  }
  return out;
}

}  // namespace vlaconv
