#pragma once
// Synthetic imaging data: ellipse phantoms with analytic labels, Cartesian
// k-space simulation, column undersampling masks, zero-filled reconstruction.
//
// Fourier convention: centered, unnormalized forward transform
//   X[k] = sum_n x[n] exp(-2 pi i (k - k0)(n - n0) / N),   k0 = n0 = floor(N/2)
// and inverse with 1/N per axis. The DC bin sits at (floor(H/2), floor(W/2))
// and equals the image sum; sum |X|^2 = H W sum |x|^2.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "uncprop/core/image.hpp"
#include "uncprop/core/rng.hpp"

namespace uncprop {

using cdouble = std::complex<double>;

struct ComplexImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<cdouble> data;

  ComplexImage() = default;
  ComplexImage(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c) {}

  cdouble& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const cdouble& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  friend bool operator==(const ComplexImage&, const ComplexImage&) = default;
};

// ---------------------------------------------------------------------------
// Centered DFT

namespace detail {

inline std::vector<cdouble> twiddles(std::size_t n, double sign) {
  std::vector<cdouble> tw(n * n);
  const auto c = static_cast<std::ptrdiff_t>(n / 2);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      // Reduce the phase index mod n before scaling so large products stay exact.
      const auto prod = (static_cast<std::ptrdiff_t>(k) - c) * (static_cast<std::ptrdiff_t>(j) - c);
      const auto m = ((prod % static_cast<std::ptrdiff_t>(n)) + static_cast<std::ptrdiff_t>(n)) %
                     static_cast<std::ptrdiff_t>(n);
      const double phase = sign * 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
      tw[k * n + j] = {std::cos(phase), std::sin(phase)};
    }
  }
  return tw;
}

inline ComplexImage dft2(const ComplexImage& in, double sign, bool normalize) {
  const std::size_t H = in.rows, W = in.cols;
  const auto tw_r = twiddles(H, sign);
  const auto tw_c = twiddles(W, sign);
  ComplexImage tmp(H, W), out(H, W);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t k = 0; k < W; ++k) {
      cdouble acc{};
      for (std::size_t c = 0; c < W; ++c) acc += tw_c[k * W + c] * in(r, c);
      tmp(r, k) = acc;
    }
  }
  const double scale = normalize ? 1.0 / static_cast<double>(H * W) : 1.0;
  for (std::size_t k = 0; k < H; ++k) {
    for (std::size_t c = 0; c < W; ++c) {
      cdouble acc{};
      for (std::size_t r = 0; r < H; ++r) acc += tw_r[k * H + r] * tmp(r, c);
      out(k, c) = acc * scale;
    }
  }
  return out;
}

}  // namespace detail

inline ComplexImage fft2c(const ComplexImage& x) { return detail::dft2(x, -1.0, false); }
inline ComplexImage ifft2c(const ComplexImage& X) { return detail::dft2(X, +1.0, true); }

inline ComplexImage to_complex(const Image& img) {
  ComplexImage out(img.rows, img.cols);
  for (std::size_t i = 0; i < img.size(); ++i) out.data[i] = img.data[i];
  return out;
}

inline Image magnitude(const ComplexImage& z) {
  Image out(z.rows, z.cols);
  for (std::size_t i = 0; i < z.data.size(); ++i) out.data[i] = std::abs(z.data[i]);
  return out;
}

/// Centered DFT of a real image plus i.i.d. complex Gaussian noise
/// (std `noise_std` on each of the real and imaginary parts).
inline ComplexImage to_kspace(const Image& image, double noise_std, std::uint64_t seed) {
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw std::invalid_argument("to_kspace: noise_std must be finite and non-negative");
  }
  ComplexImage k = fft2c(to_complex(image));
  if (noise_std > 0.0) {
    const SeedSpec s{seed, 0x6B6E6F69ull};  // "knoi"
    for (std::size_t i = 0; i < k.data.size(); ++i) {
      const auto eps = normal_pair(s, i);
      k.data[i] += cdouble(noise_std * eps[0], noise_std * eps[1]);
    }
  }
  return k;
}

// ---------------------------------------------------------------------------
// Phantoms

enum class Side { left = 0, right = 1 };

struct Ellipse {
  double cx = 0.0, cy = 0.0;  // pixel coordinates (column, row) of the center
  double a = 1.0, b = 1.0;    // semi-axes along the rotated x and y directions
  double theta = 0.0;         // rotation in radians
  double intensity = 1.0;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (c * dx + s * dy) / a;
    const double v = (-s * dx + c * dy) / b;
    return u * u + v * v <= 1.0;
  }
  double area() const { return std::numbers::pi * a * b; }
};

struct Phantom {
  Image image;
  std::vector<Ellipse> ellipses;  // ellipses[0] is the dominant one; the others lie inside it
  double area = 0.0;              // area of the ellipse union in pixels^2
  Side side = Side::left;
};

/// Fraction of each pixel covered by any of the ellipses (s x s supersampling).
inline Image coverage(const std::vector<Ellipse>& ellipses, std::size_t size, int s = 4) {
  Image out(size, size);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      int hits = 0;
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
          const double y = static_cast<double>(r) + (i + 0.5) / s;
          const double x = static_cast<double>(c) + (j + 0.5) / s;
          for (const auto& e : ellipses) {
            if (e.contains(x, y)) {
              ++hits;
              break;
            }
          }
        }
      }
      out(r, c) = static_cast<double>(hits) / (s * s);
    }
  }
  return out;
}

/// Anti-aliased painter's rendering: later ellipses overwrite earlier ones.
inline Image render(const std::vector<Ellipse>& ellipses, std::size_t size, int s = 4) {
  Image out(size, size);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      double acc = 0.0;
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
          const double y = static_cast<double>(r) + (i + 0.5) / s;
          const double x = static_cast<double>(c) + (j + 0.5) / s;
          double v = 0.0;
          for (const auto& e : ellipses) {
            if (e.contains(x, y)) v = e.intensity;
          }
          acc += v;
        }
      }
      out(r, c) = acc / (s * s);
    }
  }
  return out;
}

/// 2-5 ellipses: one dominant ellipse whose center is shifted left or right of
/// the image center, plus 1-4 features contained in it. Labels are analytic:
/// the union area equals the dominant ellipse's area pi*a*b.
inline Phantom make_phantom(std::uint64_t seed, std::size_t size) {
  if (size < 16) throw std::invalid_argument("make_phantom: size must be >= 16");
  StreamRng rng(SeedSpec{seed, 0x7068616Eull});  // "phan"
  const double N = static_cast<double>(size);
  const double center = N / 2.0;

  Phantom p;
  p.side = rng.uniform() < 0.5 ? Side::left : Side::right;
  Ellipse dom;
  const double offset = rng.uniform(0.015, 0.1) * N;
  dom.cx = center + (p.side == Side::left ? -offset : offset);
  dom.cy = center + rng.uniform(-0.04, 0.04) * N;
  dom.a = rng.uniform(0.20, 0.33) * N;
  dom.b = rng.uniform(0.24, 0.36) * N;
  dom.theta = rng.uniform(-0.3, 0.3);
  dom.intensity = rng.uniform(0.5, 0.7);
  p.ellipses.push_back(dom);

  // Features: center at normalized radius <= 0.5 in the dominant frame,
  // semi-axes <= 0.35 min(a, b), hence contained in the dominant ellipse.
  const int extra = 1 + static_cast<int>(rng.below(4));
  const double cs = std::cos(dom.theta), sn = std::sin(dom.theta);
  const double rmax = 0.35 * std::min(dom.a, dom.b);
  for (int k = 0; k < extra; ++k) {
    const double rho = 0.5 * std::sqrt(rng.uniform());
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double u = rho * std::cos(phi) * dom.a;
    const double v = rho * std::sin(phi) * dom.b;
    Ellipse e;
    e.cx = dom.cx + cs * u - sn * v;
    e.cy = dom.cy + sn * u + cs * v;
    e.a = rng.uniform(0.3, 1.0) * rmax;
    e.b = rng.uniform(0.3, 1.0) * rmax;
    e.theta = rng.uniform(0.0, std::numbers::pi);
    e.intensity = rng.uniform(0.15, 1.0);
    p.ellipses.push_back(e);
  }
  p.area = dom.area();
  p.image = render(p.ellipses, size);
  return p;
}

// ---------------------------------------------------------------------------
// Undersampling

struct MaskSpec {
  double acceleration = 4.0;
  double center_fraction = 0.08;
  std::size_t width = 32;
  std::uint64_t seed = 0;

  std::size_t center_columns() const {
    return static_cast<std::size_t>(std::lround(center_fraction * static_cast<double>(width)));
  }

  /// Probability of keeping each non-center column.
  double outer_keep_probability() const {
    const double W = static_cast<double>(width);
    const double cw = center_fraction * W;
    if (W - cw <= 0.0) return 1.0;
    return std::clamp((W / acceleration - cw) / (W - cw), 0.0, 1.0);
  }

  void validate() const {
    if (!(acceleration > 0.0) || !std::isfinite(acceleration)) {
      throw std::invalid_argument("MaskSpec: acceleration must be positive");
    }
    if (!(center_fraction > 0.0 && center_fraction < 1.0)) {
      throw std::invalid_argument("MaskSpec: center fraction must lie in (0, 1)");
    }
    if (width == 0) throw std::invalid_argument("MaskSpec: width must be positive");
    const double cw = center_fraction * static_cast<double>(width);
    if (cw < 1.0) {
      throw std::invalid_argument("MaskSpec: center fraction " + std::to_string(center_fraction) +
                                  " keeps less than one of " + std::to_string(width) + " columns");
    }
    if (acceleration * center_fraction > 1.0 + 1e-12) {
      throw std::invalid_argument("MaskSpec: center block alone (c=" + std::to_string(center_fraction) +
                                  ") exceeds the column budget of R=" + std::to_string(acceleration));
    }
  }
};

/// Column mask: a center block of round(c W) columns is always kept; every
/// other column is kept independently with outer_keep_probability().
inline std::vector<bool> make_mask(const MaskSpec& spec) {
  spec.validate();
  const std::size_t W = spec.width;
  const std::size_t nc = std::min(spec.center_columns(), W);
  const std::size_t start = W / 2 - std::min(W / 2, nc / 2);
  const double p = spec.outer_keep_probability();
  const SeedSpec s{spec.seed, 0x6D61736Bull};  // "mask"
  std::vector<bool> mask(W, false);
  for (std::size_t c = 0; c < W; ++c) {
    if (c >= start && c < start + nc) {
      mask[c] = true;
    } else {
      mask[c] = uniform01(s, c) < p;
    }
  }
  return mask;
}

struct KSpaceSample {
  ComplexImage kspace;  // masked-out columns are zero
  std::vector<bool> mask;
  double noise_std = 0.0;
  MaskSpec mask_spec;
};

/// Applies a freshly generated mask to fully sampled k-space.
inline KSpaceSample undersample(const ComplexImage& full, const MaskSpec& spec, double noise_std) {
  if (spec.width != full.cols) {
    throw std::invalid_argument("undersample: mask width " + std::to_string(spec.width) +
                                " != k-space columns " + std::to_string(full.cols));
  }
  KSpaceSample z{full, make_mask(spec), noise_std, spec};
  for (std::size_t r = 0; r < full.rows; ++r) {
    for (std::size_t c = 0; c < full.cols; ++c) {
      if (!z.mask[c]) z.kspace(r, c) = 0.0;
    }
  }
  return z;
}

/// Magnitude of the inverse centered DFT of the masked k-space.
inline Image zero_filled_recon(const KSpaceSample& z) { return magnitude(ifft2c(z.kspace)); }

}  // namespace uncprop
