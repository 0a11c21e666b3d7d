#pragma once

// Noise schedules, forward noising, the deterministic (eta = 0) DDIM reverse
// step, diffuse-then-denoise entry arithmetic and the structure-guidance step
// size schedule.

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "priorscale/errors.hpp"
#include "priorscale/tensor.hpp"

namespace priorscale {

struct BetaRange {
  double start = 0.00085;
  double end = 0.012;
};

inline constexpr int kDefaultTrainSteps = 1000;

// alphas[t-1] holds alpha_t for t in [1, T]; alpha_bars[t] holds the running
// product with alpha_bar_0 = 1.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
    if (alphas_.empty()) throw ConfigError("noise schedule needs at least one step");
    alpha_bars_.reserve(alphas_.size() + 1);
    alpha_bars_.push_back(1.0);
    for (std::size_t i = 0; i < alphas_.size(); ++i) {
      double a = alphas_[i];
      if (!(a > 0.0 && a < 1.0)) {
        throw ConfigError("alpha_" + std::to_string(i + 1) + " = " + std::to_string(a) +
                          " is outside (0, 1)");
      }
      alpha_bars_.push_back(alpha_bars_.back() * a);
    }
    if (!(alpha_bars_.back() > 0.0)) throw ConfigError("cumulative alpha underflowed to zero");
  }

  int total_steps() const { return static_cast<int>(alphas_.size()); }

  double alpha(int t) const {
    if (t < 1 || t > total_steps()) throw ArgumentError("alpha: timestep out of range");
    return alphas_[static_cast<std::size_t>(t - 1)];
  }

  double alpha_bar(int t) const {
    if (t < 0 || t > total_steps()) {
      throw ArgumentError("timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(total_steps()) + "]");
    }
    return alpha_bars_[static_cast<std::size_t>(t)];
  }

  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

// Scaled-linear betas: linear in sqrt(beta), then squared.
inline NoiseSchedule build_schedule(int total_steps, BetaRange range = {}) {
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (!(range.start > 0.0 && range.start <= range.end && range.end < 1.0)) {
    throw ConfigError("beta range must satisfy 0 < start <= end < 1");
  }
  const double lo = std::sqrt(range.start);
  const double hi = std::sqrt(range.end);
  std::vector<double> alphas(static_cast<std::size_t>(total_steps));
  for (int i = 0; i < total_steps; ++i) {
    double frac = total_steps == 1 ? 0.0 : static_cast<double>(i) / (total_steps - 1);
    double root = lo + (hi - lo) * frac;
    alphas[static_cast<std::size_t>(i)] = 1.0 - root * root;
  }
  return NoiseSchedule(std::move(alphas));
}

template <class T>
Tensor<T> add_noise(const Tensor<T>& z0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  require_same_shape(z0.shape(), eps.shape(), "add_noise");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor<T> out(z0.shape());
  auto src = z0.data();
  auto noise = eps.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = static_cast<T>(a * src[i] + b * noise[i]);
  }
  return out;
}

template <class T>
Tensor<T> predict_z0(const Tensor<T>& zt, const Tensor<T>& eps_hat, int t,
                     const NoiseSchedule& sched) {
  if (t < 1) throw ArgumentError("predict_z0 requires t >= 1");
  require_same_shape(zt.shape(), eps_hat.shape(), "predict_z0");
  const double ab = sched.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor<T> out(zt.shape());
  auto z = zt.data();
  auto e = eps_hat.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = static_cast<T>((z[i] - b * e[i]) * inv);
  }
  return out;
}

// Deterministic DDIM update from t to t_prev. The clean estimate is returned
// through `z0_out` when requested so callers do not recompute it.
template <class T>
Tensor<T> ddim_step(const Tensor<T>& zt, const Tensor<T>& eps_hat, int t, int t_prev,
                    const NoiseSchedule& sched, Tensor<T>* z0_out = nullptr) {
  if (!(t_prev >= 0 && t_prev < t)) {
    throw ArgumentError("ddim_step requires 0 <= t_prev < t (got t=" + std::to_string(t) +
                        ", t_prev=" + std::to_string(t_prev) + ")");
  }
  Tensor<T> z0 = predict_z0(zt, eps_hat, t, sched);
  const double ab_prev = sched.alpha_bar(t_prev);
  const double a = std::sqrt(ab_prev);
  const double b = std::sqrt(1.0 - ab_prev);
  Tensor<T> out(zt.shape());
  auto x = z0.data();
  auto e = eps_hat.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = static_cast<T>(a * x[i] + b * e[i]);
  }
  if (z0_out != nullptr) *z0_out = std::move(z0);
  return out;
}

// Number of active reverse steps when entering the trajectory part-way:
// floor(fraction * default_steps), never below one.
inline int entry_step(int default_steps, double fraction) {
  if (default_steps < 1) throw ConfigError("default_steps must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must lie in (0, 1]");
  // The small bias absorbs products such as 0.45 * 20 landing at 8.999...
  int s = static_cast<int>(std::floor(fraction * default_steps + 1e-9));
  return std::max(1, std::min(s, default_steps));
}

// Training timesteps of an N-step sampler spaced uniformly over [0, T]:
// result[k] = floor(k * T / N), so result[0] = 0 and result[N] = T.
inline std::vector<int> inference_timesteps(int default_steps, int train_steps) {
  if (default_steps < 1 || default_steps > train_steps) {
    throw ConfigError("default_steps must lie in [1, train_steps]");
  }
  std::vector<int> ts(static_cast<std::size_t>(default_steps) + 1);
  for (int k = 0; k <= default_steps; ++k) {
    ts[static_cast<std::size_t>(k)] = static_cast<int>(
        (static_cast<long long>(k) * train_steps) / default_steps);
  }
  return ts;
}

enum class GspKind { cosine, linear_decreasing, linear_increasing, constant };

struct GspSchedule {
  double step_size = 0.2;
  GspKind kind = GspKind::cosine;

  bool operator==(const GspSchedule&) const = default;
};

inline std::string to_string(GspKind kind) {
  switch (kind) {
    case GspKind::cosine: return "cosine";
    case GspKind::linear_decreasing: return "linear_decreasing";
    case GspKind::linear_increasing: return "linear_increasing";
    case GspKind::constant: return "constant";
  }
  return "cosine";
}

inline GspKind parse_gsp_kind(const std::string& name) {
  if (name == "cosine") return GspKind::cosine;
  if (name == "linear_decreasing") return GspKind::linear_decreasing;
  if (name == "linear_increasing") return GspKind::linear_increasing;
  if (name == "constant") return GspKind::constant;
  throw ConfigError("unknown GSP schedule '" + name + "'");
}

// Guidance step size at step t of T, where t runs from T down to 0.
inline double gsp_delta(int t, int total, const GspSchedule& gsp) {
  if (total < 1 || t < 0 || t > total) throw ArgumentError("gsp_delta requires 0 <= t <= T");
  const double s = gsp.step_size;
  const double r = static_cast<double>(t) / total;
  switch (gsp.kind) {
    case GspKind::cosine: {
      if (t == total) return s;
      if (t == 0) return 0.0;
      return s * (1.0 + std::cos((1.0 - r) * std::numbers::pi)) / 2.0;
    }
    case GspKind::linear_decreasing: return s * r;
    case GspKind::linear_increasing: return s * (1.0 - r);
    case GspKind::constant: return s;
  }
  return 0.0;
}

}  // namespace priorscale
