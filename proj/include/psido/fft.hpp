#pragma once

#include <bit>
#include <complex>
#include <stdexcept>
#include <vector>

#include "psido/common.hpp"

namespace psido {

// Radix-2 iterative FFT on strided data. Grids are power-of-two by
// construction, so no other radices are needed. Forward uses e^{-2*pi*i*jk/N}.
inline void fft_strided(cplx* data, int n, std::size_t stride, bool inverse) {
  if (n <= 1) return;
  if (!std::has_single_bit(static_cast<unsigned>(n)))
    throw std::invalid_argument("fft: length must be a power of two");

  // Bit-reversal permutation.
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i * stride], data[j * stride]);
  }

  for (int len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * pi / len * (inverse ? 1.0 : -1.0);
    const cplx wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        cplx u = data[(i + k) * stride];
        cplx v = data[(i + k + len / 2) * stride] * w;
        data[(i + k) * stride] = u + v;
        data[(i + k + len / 2) * stride] = u - v;
        w *= wl;
      }
    }
  }
}

// In-place transform along one axis of a row-major array.
inline void fft_axis(std::vector<cplx>& values, const std::vector<int>& dims, int axis,
                     bool inverse) {
  std::size_t stride = 1;
  for (std::size_t d = axis + 1; d < dims.size(); ++d) stride *= dims[d];
  const std::size_t n = dims[axis];
  const std::size_t block = stride * n;
  const std::size_t total = values.size();
  for (std::size_t base = 0; base < total; base += block)
    for (std::size_t off = 0; off < stride; ++off)
      fft_strided(values.data() + base + off, static_cast<int>(n), stride, inverse);
}

inline void fft_all(std::vector<cplx>& values, const std::vector<int>& dims, bool inverse) {
  for (std::size_t axis = 0; axis < dims.size(); ++axis)
    fft_axis(values, dims, static_cast<int>(axis), inverse);
}

// Signed frequency index for slot k of an N-point transform.
inline int signed_freq(int k, int n) { return k < n / 2 ? k : k - n; }

}  // namespace psido
