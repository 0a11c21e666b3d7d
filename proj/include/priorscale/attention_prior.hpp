#pragma once

// Cross-attention scores, their spatial interpolation and regional cropping,
// and the composer that averages prompt-attended and prior-attended features.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "priorscale/errors.hpp"
#include "priorscale/tiling.hpp"

namespace priorscale {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row r of `scores` is the token distribution of spatial cell
// (r / spatial_width, r % spatial_width).
struct AttentionMap {
  int spatial_height = 0;
  int spatial_width = 0;
  std::string site_id;
  int downsample_factor = 1;
  Matrix scores;

  int token_count() const { return static_cast<int>(scores.cols()); }
  int cells() const { return spatial_height * spatial_width; }
};

inline bool is_row_stochastic(const Matrix& scores, double tol = 1e-5) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    if ((scores.row(r).array() < 0.0).any()) return false;
    if (std::abs(scores.row(r).sum() - 1.0) > tol) return false;
  }
  return true;
}

// Per-row softmax of Q K^T / sqrt(d).
inline Matrix attention_scores(const Matrix& q, const Matrix& k) {
  if (q.cols() != k.cols()) {
    throw ArgumentError("attention_scores: query dim " + std::to_string(q.cols()) +
                        " != key dim " + std::to_string(k.cols()));
  }
  if (k.rows() < 1) throw ArgumentError("attention_scores: no keys");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(q.cols(), 1)));
  Matrix logits = (q * k.transpose()) * inv_sqrt_d;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

// Bilinear resampling over the spatial axes only; every token column is
// resampled independently so each output row stays a convex combination of
// input rows.
inline AttentionMap interpolate_attention(const AttentionMap& a, int target_height,
                                          int target_width) {
  if (a.scores.rows() != a.cells()) throw ArgumentError("attention map row count != h*w");
  if (target_height < a.spatial_height || target_width < a.spatial_width) {
    throw ArgumentError("interpolate_attention only upsamples (" +
                        std::to_string(a.spatial_height) + "x" + std::to_string(a.spatial_width) +
                        " -> " + std::to_string(target_height) + "x" +
                        std::to_string(target_width) + ")");
  }
  if (target_height == a.spatial_height && target_width == a.spatial_width) return a;
  auto taps = [](int n_out, int n_in) {
    std::vector<std::pair<int, double>> t(static_cast<std::size_t>(n_out));
    const double scale = static_cast<double>(n_in) / n_out;
    for (int o = 0; o < n_out; ++o) {
      double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(n_in - 1));
      int i0 = static_cast<int>(std::floor(src));
      t[static_cast<std::size_t>(o)] = {i0, src - i0};
    }
    return t;
  };
  const auto ty = taps(target_height, a.spatial_height);
  const auto tx = taps(target_width, a.spatial_width);
  AttentionMap out;
  out.spatial_height = target_height;
  out.spatial_width = target_width;
  out.site_id = a.site_id;
  out.downsample_factor = a.downsample_factor;
  out.scores.resize(static_cast<Eigen::Index>(target_height) * target_width, a.scores.cols());
  auto row = [&](int y, int x) { return a.scores.row(static_cast<Eigen::Index>(y) * a.spatial_width + x); };
  for (int y = 0; y < target_height; ++y) {
    const auto [y0, wy] = ty[static_cast<std::size_t>(y)];
    const int y1 = std::min(y0 + 1, a.spatial_height - 1);
    for (int x = 0; x < target_width; ++x) {
      const auto [x0, wx] = tx[static_cast<std::size_t>(x)];
      const int x1 = std::min(x0 + 1, a.spatial_width - 1);
      out.scores.row(static_cast<Eigen::Index>(y) * target_width + x) =
          (1.0 - wy) * ((1.0 - wx) * row(y0, x0) + wx * row(y0, x1)) +
          wy * ((1.0 - wx) * row(y1, x0) + wx * row(y1, x1));
    }
  }
  return out;
}

// Spatial window of a map; `spec` is already in this site's grid units.
inline AttentionMap crop_attention(const AttentionMap& a, const RegionSpec& spec) {
  require_within(spec, a.spatial_height, a.spatial_width, "crop_attention");
  AttentionMap out;
  out.spatial_height = spec.height;
  out.spatial_width = spec.width;
  out.site_id = a.site_id;
  out.downsample_factor = a.downsample_factor;
  out.scores.resize(static_cast<Eigen::Index>(spec.height) * spec.width, a.scores.cols());
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      out.scores.row(static_cast<Eigen::Index>(y) * spec.width + x) =
          a.scores.row(static_cast<Eigen::Index>(spec.top + y) * a.spatial_width + spec.left + x);
    }
  }
  return out;
}

// C = (C_s + C_a) / 2 with C_s = softmax(Q K_s^T / sqrt d) V_s and C_a = A_prior V_global.
inline Matrix compose_attention(const Matrix& q_region, const Matrix& k_semantic,
                                const Matrix& v_semantic, const Matrix& a_prior,
                                const Matrix& v_global) {
  if (k_semantic.rows() != v_semantic.rows()) {
    throw ArgumentError("compose_attention: k_semantic has " + std::to_string(k_semantic.rows()) +
                        " rows but v_semantic has " + std::to_string(v_semantic.rows()));
  }
  if (a_prior.rows() != q_region.rows()) {
    throw ArgumentError("compose_attention: a_prior has " + std::to_string(a_prior.rows()) +
                        " rows but q_region has " + std::to_string(q_region.rows()));
  }
  if (a_prior.cols() != v_global.rows()) {
    throw ArgumentError("compose_attention: a_prior has " + std::to_string(a_prior.cols()) +
                        " tokens but v_global has " + std::to_string(v_global.rows()) + " rows");
  }
  if (v_semantic.cols() != v_global.cols()) {
    throw ArgumentError("compose_attention: v_semantic width " + std::to_string(v_semantic.cols()) +
                        " != v_global width " + std::to_string(v_global.cols()));
  }
  const Matrix c_s = attention_scores(q_region, k_semantic) * v_semantic;
  const Matrix c_a = a_prior * v_global;
  return (c_s + c_a) * 0.5;
}

// One map per (site, head), all for the same timestep and prompt encoding.
struct AttentionPriorSet {
  std::vector<AttentionMap> maps;
  int timestep = 0;

  const AttentionMap* find(std::string_view site_id) const {
    for (const auto& m : maps) {
      if (m.site_id == site_id) return &m;
    }
    return nullptr;
  }
  bool empty() const { return maps.empty(); }
};

// Upsamples every captured map to the grid it will have on a canvas of
// `latent_height` x `latent_width` latent cells.
inline AttentionPriorSet interpolate_priors(const AttentionPriorSet& low, int latent_height,
                                            int latent_width) {
  AttentionPriorSet out;
  out.timestep = low.timestep;
  out.maps.reserve(low.maps.size());
  for (const auto& m : low.maps) {
    const int f = m.downsample_factor;
    out.maps.push_back(interpolate_attention(m, (latent_height + f - 1) / f,
                                             (latent_width + f - 1) / f));
  }
  return out;
}

// Crops every map to the footprint of a latent-space region.
inline AttentionPriorSet crop_priors(const AttentionPriorSet& canvas, const RegionSpec& latent_spec) {
  AttentionPriorSet out;
  out.timestep = canvas.timestep;
  out.maps.reserve(canvas.maps.size());
  for (const auto& m : canvas.maps) {
    out.maps.push_back(crop_attention(m, scale_spec(latent_spec, m.downsample_factor)));
  }
  return out;
}

}  // namespace priorscale
