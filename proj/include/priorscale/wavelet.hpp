#pragma once

// Orthonormal 2-D Haar transform, low-frequency extraction, bilinear resizing
// and the structure-alignment loss with its analytic gradient.

#include <algorithm>
#include <cmath>
#include <string>

#include "priorscale/errors.hpp"
#include "priorscale/scheduler.hpp"
#include "priorscale/tensor.hpp"

namespace priorscale {

// One analysis level. For each 2x2 block [a b; c d] (rows index vertical):
//   ll = (a+b+c+d)/2   lh = (a-b+c-d)/2   hl = (a+b-c-d)/2   hh = (a-b-c+d)/2
template <class T>
struct WaveletDecomposition {
  Tensor<T> ll;
  Tensor<T> lh;
  Tensor<T> hl;
  Tensor<T> hh;
  int levels = 1;
};

template <class T>
WaveletDecomposition<T> haar_analysis(const Tensor<T>& x) {
  if (x.height() % 2 != 0 || x.width() % 2 != 0) {
    throw ArgumentError("haar_analysis needs even spatial dims, got " + to_string(x.shape()));
  }
  const Shape half{x.channels(), x.height() / 2, x.width() / 2};
  WaveletDecomposition<T> d{Tensor<T>(half), Tensor<T>(half), Tensor<T>(half), Tensor<T>(half), 1};
  for (int c = 0; c < half.channels; ++c) {
    for (int i = 0; i < half.height; ++i) {
      for (int j = 0; j < half.width; ++j) {
        const T a = x(c, 2 * i, 2 * j);
        const T b = x(c, 2 * i, 2 * j + 1);
        const T cc = x(c, 2 * i + 1, 2 * j);
        const T dd = x(c, 2 * i + 1, 2 * j + 1);
        d.ll(c, i, j) = (a + b + cc + dd) / T(2);
        d.lh(c, i, j) = (a - b + cc - dd) / T(2);
        d.hl(c, i, j) = (a + b - cc - dd) / T(2);
        d.hh(c, i, j) = (a - b - cc + dd) / T(2);
      }
    }
  }
  return d;
}

template <class T>
Tensor<T> haar_synthesis(const WaveletDecomposition<T>& d) {
  const Shape s = d.ll.shape();
  if (!(d.lh.shape() == s && d.hl.shape() == s && d.hh.shape() == s)) {
    throw ArgumentError("haar_synthesis: subband shapes differ");
  }
  Tensor<T> x(s.channels, s.height * 2, s.width * 2);
  for (int c = 0; c < s.channels; ++c) {
    for (int i = 0; i < s.height; ++i) {
      for (int j = 0; j < s.width; ++j) {
        const T ll = d.ll(c, i, j);
        const T lh = d.lh(c, i, j);
        const T hl = d.hl(c, i, j);
        const T hh = d.hh(c, i, j);
        x(c, 2 * i, 2 * j) = (ll + lh + hl + hh) / T(2);
        x(c, 2 * i, 2 * j + 1) = (ll - lh + hl - hh) / T(2);
        x(c, 2 * i + 1, 2 * j) = (ll + lh - hl - hh) / T(2);
        x(c, 2 * i + 1, 2 * j + 1) = (ll - lh - hl + hh) / T(2);
      }
    }
  }
  return x;
}

inline void require_levels(int levels) {
  if (levels < 1) throw ArgumentError("wavelet levels must be >= 1");
}

template <class T>
Tensor<T> low_frequency(const Tensor<T>& x, int levels) {
  require_levels(levels);
  const int block = 1 << levels;
  if (x.height() % block != 0 || x.width() % block != 0) {
    throw ArgumentError("low_frequency: dims " + to_string(x.shape()) + " not divisible by " +
                        std::to_string(block));
  }
  Tensor<T> out = x;
  for (int l = 0; l < levels; ++l) out = haar_analysis(out).ll;
  return out;
}

// Transpose of low_frequency: embeds `y` as the LL band (other bands zero) and
// synthesizes `levels` times.
template <class T>
Tensor<T> low_frequency_adjoint(const Tensor<T>& y, int levels) {
  require_levels(levels);
  Tensor<T> out = y;
  for (int l = 0; l < levels; ++l) {
    const Shape s = out.shape();
    WaveletDecomposition<T> d{std::move(out), Tensor<T>(s), Tensor<T>(s), Tensor<T>(s), 1};
    out = haar_synthesis(d);
  }
  return out;
}

// Bilinear resampling per channel with half-pixel centres (corners not aligned);
// sample positions are clamped to the source border.
template <class T>
Tensor<T> resize(const Tensor<T>& z, int target_height, int target_width) {
  if (target_height < 1 || target_width < 1) throw ArgumentError("resize target must be positive");
  if (z.height() < 1 || z.width() < 1) throw ArgumentError("resize source is empty");
  if (z.height() == target_height && z.width() == target_width) return z;
  const double sy = static_cast<double>(z.height()) / target_height;
  const double sx = static_cast<double>(z.width()) / target_width;
  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
      double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(n_in - 1));
      int i0 = static_cast<int>(std::floor(src));
      int i1 = std::min(i0 + 1, n_in - 1);
      t[static_cast<std::size_t>(o)] = Tap{i0, i1, src - i0};
    }
    return t;
  };
  const auto ty = taps(target_height, z.height(), sy);
  const auto tx = taps(target_width, z.width(), sx);
  Tensor<T> out(z.channels(), target_height, target_width);
  for (int c = 0; c < z.channels(); ++c) {
    for (int y = 0; y < target_height; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < target_width; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const double top = (1.0 - b.w1) * z(c, a.i0, b.i0) + b.w1 * z(c, a.i0, b.i1);
        const double bot = (1.0 - b.w1) * z(c, a.i1, b.i0) + b.w1 * z(c, a.i1, b.i1);
        out(c, y, x) = static_cast<T>((1.0 - a.w1) * top + a.w1 * bot);
      }
    }
  }
  return out;
}

namespace detail {

// Replicates the last row/column until both dims are multiples of `block`.
template <class T>
Tensor<T> pad_replicate(const Tensor<T>& x, int block) {
  const int h = (x.height() + block - 1) / block * block;
  const int w = (x.width() + block - 1) / block * block;
  if (h == x.height() && w == x.width()) return x;
  Tensor<T> out(x.channels(), h, w);
  for (int c = 0; c < x.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        out(c, y, xx) = x(c, std::min(y, x.height() - 1), std::min(xx, x.width() - 1));
      }
    }
  }
  return out;
}

// Adjoint of pad_replicate: padded cells fold back onto the edge cell they copied.
template <class T>
Tensor<T> fold_replicate(const Tensor<T>& padded, int height, int width) {
  if (padded.height() == height && padded.width() == width) return padded;
  Tensor<T> out(padded.channels(), height, width);
  for (int c = 0; c < padded.channels(); ++c) {
    for (int y = 0; y < padded.height(); ++y) {
      for (int x = 0; x < padded.width(); ++x) {
        out(c, std::min(y, height - 1), std::min(x, width - 1)) += padded(c, y, x);
      }
    }
  }
  return out;
}

}  // namespace detail

// Low-frequency band of an arbitrary-size grid (edge-replicated to a multiple
// of 2^levels first).
template <class T>
Tensor<T> structure_band(const Tensor<T>& x, int levels) {
  require_levels(levels);
  return low_frequency(detail::pad_replicate(x, 1 << levels), levels);
}

// Squared L2 distance between a precomputed target LL band and the LL band of
// the clean-latent estimate (sum convention).
template <class T>
double gsp_loss_from_band(const Tensor<T>& target_band, const Tensor<T>& z0_hat_high, int levels) {
  const Tensor<T> band = structure_band(z0_hat_high, levels);
  require_same_shape(target_band.shape(), band.shape(), "gsp_loss");
  double s = 0.0;
  auto a = target_band.data();
  auto b = band.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

// || LF(z0_low) - LF(z0_hat_high) ||^2 with z0_low already resized to match.
template <class T>
double gsp_loss(const Tensor<T>& z0_low, const Tensor<T>& z0_hat_high, int levels) {
  require_same_shape(z0_low.shape(), z0_hat_high.shape(), "gsp_loss");
  return gsp_loss_from_band(structure_band(z0_low, levels), z0_hat_high, levels);
}

// Gradient of the loss with respect to z_t when z0_hat = predict_z0(z_t, eps, t)
// and eps is held fixed: (2 / sqrt(alpha_bar_t)) * LF^T(LF(z0_hat) - target).
template <class T>
Tensor<T> gsp_gradient_from_band(const Tensor<T>& target_band, const Tensor<T>& z0_hat_high,
                                 int t, const NoiseSchedule& sched, int levels) {
  if (t < 1) throw ArgumentError("gsp_gradient requires t >= 1");
  const int block = 1 << levels;
  const Tensor<T> padded = detail::pad_replicate(z0_hat_high, block);
  Tensor<T> residual = low_frequency(padded, levels);
  require_same_shape(target_band.shape(), residual.shape(), "gsp_gradient");
  const double scale = 2.0 / std::sqrt(sched.alpha_bar(t));
  auto r = residual.data();
  auto tb = target_band.data();
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = static_cast<T>(scale * (static_cast<double>(r[i]) - static_cast<double>(tb[i])));
  }
  return detail::fold_replicate(low_frequency_adjoint(residual, levels), z0_hat_high.height(),
                                z0_hat_high.width());
}

template <class T>
Tensor<T> gsp_gradient(const Tensor<T>& z0_low, const Tensor<T>& z0_hat_high, int t,
                       const NoiseSchedule& sched, int levels) {
  require_same_shape(z0_low.shape(), z0_hat_high.shape(), "gsp_gradient");
  return gsp_gradient_from_band(structure_band(z0_low, levels), z0_hat_high, t, sched, levels);
}

}  // namespace priorscale
