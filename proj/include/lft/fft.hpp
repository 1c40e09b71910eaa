#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "lft/error.hpp"

namespace lft {

using cplx = std::complex<double>;

// Complex FFT of fixed length. Powers of two use an iterative radix-2
// transform; other lengths go through Bluestein's chirp-z algorithm on a
// power-of-two convolution. Transforms are unnormalized.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    if (n == 0) {
      throw config_error("FFT length must be positive");
    }
    if (is_pow2(n)) {
      init_radix2(n, rev_, twiddle_);
    } else {
      init_bluestein();
    }
  }

  std::size_t size() const { return n_; }

  void forward(std::span<cplx> a) const { transform(a, false); }
  void inverse(std::span<cplx> a) const { transform(a, true); }

 private:
  static bool is_pow2(std::size_t n) { return (n & (n - 1)) == 0; }

  static void init_radix2(std::size_t n, std::vector<std::size_t>& rev, std::vector<cplx>& tw) {
    rev.assign(n, 0);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) {
      ++bits;
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) {
        r |= ((i >> b) & 1U) << (bits - 1 - b);
      }
      rev[i] = r;
    }
    tw.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      tw[k] = cplx(std::cos(ang), std::sin(ang));
    }
  }

  static void radix2(std::span<cplx> a, const std::vector<std::size_t>& rev, const std::vector<cplx>& tw,
                     bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (i < rev[i]) {
        std::swap(a[i], a[rev[i]]);
      }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n / len;
      for (std::size_t start = 0; start < n; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const cplx w = inverse ? std::conj(tw[j * stride]) : tw[j * stride];
          const cplx u = a[start + j];
          const cplx v = a[start + j + half] * w;
          a[start + j] = u + v;
          a[start + j + half] = u - v;
        }
      }
    }
  }

  void init_bluestein() {
    m_ = 1;
    while (m_ < 2 * n_ - 1) {
      m_ <<= 1;
    }
    init_radix2(m_, rev_, twiddle_);
    chirp_.resize(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      // k^2 mod 2n keeps the angle argument small for large k.
      const std::size_t k2 = (k * k) % (2 * n_);
      const double ang = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n_);
      chirp_[k] = cplx(std::cos(ang), std::sin(ang));
    }
    kernel_.assign(m_, cplx{});
    kernel_[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n_; ++k) {
      kernel_[k] = std::conj(chirp_[k]);
      kernel_[m_ - k] = std::conj(chirp_[k]);
    }
    radix2(kernel_, rev_, twiddle_, false);
  }

  void transform(std::span<cplx> a, bool inverse) const {
    if (a.size() != n_) {
      throw dimension_error("FFT plan length " + std::to_string(n_) + " applied to " +
                            std::to_string(a.size()) + " samples");
    }
    if (is_pow2(n_)) {
      radix2(a, rev_, twiddle_, inverse);
      return;
    }
    // Inverse via conjugation: ifft(x) = conj(fft(conj(x))).
    std::vector<cplx> work(m_, cplx{});
    for (std::size_t k = 0; k < n_; ++k) {
      const cplx x = inverse ? std::conj(a[k]) : a[k];
      work[k] = x * chirp_[k];
    }
    radix2(work, rev_, twiddle_, false);
    for (std::size_t i = 0; i < m_; ++i) {
      work[i] *= kernel_[i];
    }
    radix2(work, rev_, twiddle_, true);
    const double inv_m = 1.0 / static_cast<double>(m_);
    for (std::size_t k = 0; k < n_; ++k) {
      const cplx y = work[k] * inv_m * chirp_[k];
      a[k] = inverse ? std::conj(y) : y;
    }
  }

  std::size_t n_;
  std::size_t m_ = 0;
  std::vector<std::size_t> rev_;
  std::vector<cplx> twiddle_;
  std::vector<cplx> chirp_;
  std::vector<cplx> kernel_;
};

// Per-thread plan cache keyed by length.
inline const FftPlan& fft_plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  auto& slot = cache[n];
  if (!slot) {
    slot = std::make_unique<FftPlan>(n);
  }
  return *slot;
}

inline void fft(std::span<cplx> a) { fft_plan(a.size()).forward(a); }
inline void ifft_unnormalized(std::span<cplx> a) { fft_plan(a.size()).inverse(a); }

}  // namespace lft
