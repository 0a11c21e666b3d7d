#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "priorscale/attention_prior.hpp"
#include "priorscale/tensor.hpp"

namespace testing_support {

// Same closed form as fixed_grid() in oracles/generate.py.
inline priorscale::Latent fixed_grid(int c, int h, int w, double a = 0.37, double b = 0.11) {
  priorscale::Latent t(c, h, w);
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = static_cast<double>(i);
    d[i] = std::sin(a * x * x + b * x);
  }
  return t;
}

inline priorscale::Matrix fixed_matrix(int rows, int cols, double a, double b) {
  const auto g = fixed_grid(1, rows, cols, a, b);
  priorscale::Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = g(0, r, c);
  }
  return m;
}

inline priorscale::Latent random_latent(std::mt19937_64& rng, int c, int h, int w,
                                        double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  priorscale::Latent t(c, h, w);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

inline priorscale::Matrix random_stochastic(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  priorscale::Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    double s = 0;
    for (int c = 0; c < cols; ++c) s += (m(r, c) = u(rng));
    m.row(r) /= s;
  }
  return m;
}

inline std::vector<double> flat(const priorscale::Latent& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace testing_support
