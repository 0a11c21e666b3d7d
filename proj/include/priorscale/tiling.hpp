#pragma once

// Overlapped region partitioning of a latent canvas, cropping, and
// uniform-mean fusion of per-region results.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "priorscale/errors.hpp"
#include "priorscale/tensor.hpp"

namespace priorscale {

struct RegionSpec {
  int index = 0;
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const { return top + height; }
  int right() const { return left + width; }

  friend bool operator==(const RegionSpec&, const RegionSpec&) = default;
};

struct Partition {
  std::vector<RegionSpec> regions;
  int region_size = 0;
  int overlap = 0;
  int canvas_height = 0;
  int canvas_width = 0;

  int stride() const { return region_size - overlap; }
  std::size_t size() const { return regions.size(); }
};

// Offsets along one axis: 0, stride, 2*stride, ... plus a final offset snapped
// flush to the far edge when the regular grid stops short of it.
inline std::vector<int> axis_offsets(int extent, int region_size, int overlap) {
  const int stride = region_size - overlap;
  std::vector<int> offsets;
  for (int off = 0; off + region_size <= extent; off += stride) offsets.push_back(off);
  if (offsets.back() + region_size < extent) offsets.push_back(extent - region_size);
  return offsets;
}

inline Partition partition(int canvas_height, int canvas_width, int region_size, int overlap) {
  if (canvas_height < 1 || canvas_width < 1) throw ArgumentError("canvas must be non-empty");
  if (region_size < 1) throw ArgumentError("region_size must be positive");
  if (region_size > canvas_height || region_size > canvas_width) {
    throw ArgumentError("region size " + std::to_string(region_size) + " exceeds canvas " +
                        std::to_string(canvas_height) + "x" + std::to_string(canvas_width));
  }
  if (overlap < 0 || overlap >= region_size) {
    throw ArgumentError("overlap must satisfy 0 <= overlap < region_size");
  }
  Partition p;
  p.region_size = region_size;
  p.overlap = overlap;
  p.canvas_height = canvas_height;
  p.canvas_width = canvas_width;
  const auto rows = axis_offsets(canvas_height, region_size, overlap);
  const auto cols = axis_offsets(canvas_width, region_size, overlap);
  p.regions.reserve(rows.size() * cols.size());
  int index = 0;
  for (int top : rows) {
    for (int left : cols) {
      p.regions.push_back(RegionSpec{index++, top, left, region_size, region_size});
    }
  }
  return p;
}

inline void require_within(const RegionSpec& spec, int height, int width, const char* what) {
  if (spec.top < 0 || spec.left < 0 || spec.height < 1 || spec.width < 1 ||
      spec.bottom() > height || spec.right() > width) {
    throw ArgumentError(std::string(what) + ": region (" + std::to_string(spec.top) + "," +
                        std::to_string(spec.left) + "," + std::to_string(spec.height) + "," +
                        std::to_string(spec.width) + ") outside " + std::to_string(height) + "x" +
                        std::to_string(width));
  }
}

template <class T>
Tensor<T> crop(const Tensor<T>& canvas, const RegionSpec& spec) {
  require_within(spec, canvas.height(), canvas.width(), "crop");
  Tensor<T> out(canvas.channels(), spec.height, spec.width);
  for (int c = 0; c < canvas.channels(); ++c) {
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        out(c, y, x) = canvas(c, spec.top + y, spec.left + x);
      }
    }
  }
  return out;
}

// Each canvas cell becomes the arithmetic mean of every region value covering it.
// Sums are accumulated in region order in extended precision, which keeps the
// mean of k identical values exactly equal to that value.
template <class T>
Tensor<T> merge(std::span<const Tensor<T>> regions, std::span<const RegionSpec> specs,
                int canvas_height, int canvas_width) {
  if (regions.size() != specs.size()) throw ArgumentError("merge: region/spec count mismatch");
  if (regions.empty()) throw ArgumentError("merge: no regions");
  const int channels = regions.front().channels();
  Tensor<long double> sum(channels, canvas_height, canvas_width);
  std::vector<int> count(static_cast<std::size_t>(canvas_height) * canvas_width, 0);
  for (std::size_t n = 0; n < regions.size(); ++n) {
    const auto& r = regions[n];
    const auto& s = specs[n];
    require_within(s, canvas_height, canvas_width, "merge");
    if (r.channels() != channels || r.height() != s.height || r.width() != s.width) {
      throw ArgumentError("merge: region " + std::to_string(n) + " has shape " +
                          to_string(r.shape()) + " but its spec is " + std::to_string(s.height) +
                          "x" + std::to_string(s.width));
    }
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        ++count[static_cast<std::size_t>(s.top + y) * canvas_width + (s.left + x)];
      }
    }
    for (int c = 0; c < channels; ++c) {
      for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
          sum(c, s.top + y, s.left + x) += static_cast<long double>(r(c, y, x));
        }
      }
    }
  }
  Tensor<T> out(channels, canvas_height, canvas_width);
  for (int y = 0; y < canvas_height; ++y) {
    for (int x = 0; x < canvas_width; ++x) {
      const int k = count[static_cast<std::size_t>(y) * canvas_width + x];
      if (k == 0) {
        throw InternalError("merge: canvas cell (" + std::to_string(y) + "," + std::to_string(x) +
                            ") is not covered by any region");
      }
      for (int c = 0; c < channels; ++c) out(c, y, x) = static_cast<T>(sum(c, y, x) / k);
    }
  }
  return out;
}

template <class T>
Tensor<T> merge(const std::vector<Tensor<T>>& regions, const std::vector<RegionSpec>& specs,
                int canvas_height, int canvas_width) {
  return merge(std::span<const Tensor<T>>(regions), std::span<const RegionSpec>(specs),
               canvas_height, canvas_width);
}

// Maps a region to a grid downsampled by `factor`: the start is floored and the
// end is rounded up so the result covers the original footprint.
inline RegionSpec scale_spec(const RegionSpec& spec, int factor) {
  if (factor < 1) throw ArgumentError("downsample factor must be >= 1");
  auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
  RegionSpec out = spec;
  out.top = spec.top / factor;
  out.left = spec.left / factor;
  out.height = ceil_div(spec.bottom(), factor) - out.top;
  out.width = ceil_div(spec.right(), factor) - out.left;
  return out;
}

inline RegionSpec scale_up(const RegionSpec& spec, int factor) {
  return RegionSpec{spec.index, spec.top * factor, spec.left * factor, spec.height * factor,
                    spec.width * factor};
}

}  // namespace priorscale
