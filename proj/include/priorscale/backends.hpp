#pragma once

// Interfaces isolating every neural component (noise predictor, latent codec,
// captioner, text conditioner) plus deterministic in-process stand-ins.

#include <atomic>
#include <cctype>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "priorscale/attention_prior.hpp"
#include "priorscale/detail/encoding.hpp"
#include "priorscale/errors.hpp"
#include "priorscale/scheduler.hpp"
#include "priorscale/tensor.hpp"
#include "priorscale/tiling.hpp"

namespace priorscale {

inline constexpr int kLatentChannels = 4;
inline constexpr int kLatentScale = 8;

struct SiteInfo {
  std::string site_id;
  int downsample_factor = 1;
  int head_count = 1;
};

// Identifier of the map captured for one head of one cross-attention site.
inline std::string head_site_id(std::string_view site, int head) {
  return std::string(site) + "/h" + std::to_string(head);
}

// Same signature as compose_attention: (Q, semantic K, semantic V, prior scores, global V).
using ComposeFn = std::function<Matrix(const Matrix&, const Matrix&, const Matrix&, const Matrix&,
                                       const Matrix&)>;

// Attention override for one regional call. `priors` are already cropped to
// the region; sites without a prior map run plain cross-attention.
struct RegionalAttention {
  const AttentionPriorSet* priors = nullptr;
  std::string global_prompt;
  ComposeFn compose = compose_attention;
};

struct NoiseRequest {
  const Latent& latent;
  int timestep = 0;
  std::string prompt;
  // Placement of `latent` on the full canvas, when it is a crop.
  std::optional<RegionSpec> region;
  const RegionalAttention* attention = nullptr;
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;

  // Predicts the noise in request.latent; output shape equals input shape.
  virtual Latent predict_noise(const NoiseRequest& request) const = 0;

  // Cross-attention scores of one text-conditional pass, one map per site/head.
  virtual AttentionPriorSet capture_attention(const Latent& /*z*/, int timestep,
                                              const std::string& /*prompt*/) const {
    AttentionPriorSet none;
    none.timestep = timestep;
    return none;
  }

  virtual std::vector<SiteInfo> site_registry() const { return {}; }
  virtual const NoiseSchedule& schedule() const = 0;
  // Region edge length the model was trained at, in latent cells.
  virtual int native_region_size() const = 0;
  // False when calls must be serialized by the caller.
  virtual bool concurrent() const { return true; }
};

class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual Latent encode(const Image& image) const = 0;
  virtual Image decode(const Latent& latent) const = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  // Returns a description of `image`; throws CaptionerError on failure.
  virtual std::string describe(const Image& image, const std::string& instruction) const = 0;
  virtual std::string model_id() const = 0;
  virtual std::string image_marker() const { return "<regional image>"; }
};

class TextConditioner {
 public:
  virtual ~TextConditioner() = default;
  // Token embeddings, one row per token, at most max_tokens() rows.
  virtual Matrix encode(std::string_view text) const = 0;
  virtual int max_tokens() const = 0;
  // Content tokens that fit after special tokens are accounted for.
  virtual int word_budget() const { return max_tokens() - 1; }
};

// Classifier-free guidance. Scales <= 1 disable guidance and return the
// conditional prediction unchanged.
inline Latent apply_cfg(const Latent& cond, const Latent& uncond, double scale) {
  if (scale <= 1.0) return cond;
  require_same_shape(cond.shape(), uncond.shape(), "apply_cfg");
  Latent out(cond.shape());
  auto c = cond.data();
  auto u = uncond.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = u[i] + scale * (c[i] - u[i]);
  return out;
}

// The exact noise for which predict_z0 returns `target` (cropped to the
// request's region when one is given).
class OracleDenoiser : public Denoiser {
 public:
  OracleDenoiser(Latent target, NoiseSchedule schedule, int native_region_size = 128)
      : target_(std::move(target)), schedule_(std::move(schedule)),
        native_region_size_(native_region_size) {}

  Latent predict_noise(const NoiseRequest& request) const override {
    return oracle_noise(request.latent, request.timestep, request.region);
  }

  const NoiseSchedule& schedule() const override { return schedule_; }
  int native_region_size() const override { return native_region_size_; }
  const Latent& target() const { return target_; }

 protected:
  Latent oracle_noise(const Latent& z, int t, const std::optional<RegionSpec>& region) const {
    if (t < 1) throw ArgumentError("oracle denoiser requires t >= 1");
    const Latent local = region ? crop(target_, *region) : target_;
    require_same_shape(z.shape(), local.shape(), "oracle denoiser");
    const double ab = schedule_.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double inv_b = 1.0 / std::sqrt(1.0 - ab);
    Latent eps(z.shape());
    auto zt = z.data();
    auto x0 = local.data();
    auto e = eps.data();
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (zt[i] - a * x0[i]) * inv_b;
    return eps;
  }

  Latent target_;
  NoiseSchedule schedule_;
  int native_region_size_;
};

// Whitespace tokenizer with hashed Gaussian embeddings and a leading <bos>
// token, so even the empty prompt encodes to one row.
class MockTextConditioner : public TextConditioner {
 public:
  explicit MockTextConditioner(int embed_dim = 16, int max_tokens = 77)
      : embed_dim_(embed_dim), max_tokens_(max_tokens) {}

  Matrix encode(std::string_view text) const override {
    std::vector<std::string> tokens{"<bos>"};
    std::string word;
    auto flush = [&] {
      if (!word.empty() && static_cast<int>(tokens.size()) < max_tokens_) tokens.push_back(word);
      word.clear();
    };
    for (char ch : text) {
      if (std::isspace(static_cast<unsigned char>(ch))) {
        flush();
      } else {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      }
    }
    flush();
    Matrix e(static_cast<Eigen::Index>(tokens.size()), embed_dim_);
    for (std::size_t r = 0; r < tokens.size(); ++r) {
      std::mt19937_64 rng(detail::fnv1a(tokens[r]));
      std::normal_distribution<double> normal;
      for (int c = 0; c < embed_dim_; ++c) e(static_cast<Eigen::Index>(r), c) = normal(rng);
    }
    return e;
  }

  int max_tokens() const override { return max_tokens_; }
  int embed_dim() const { return embed_dim_; }

 private:
  int embed_dim_;
  int max_tokens_;
};

// Averages each kScale x kScale pixel block over all image channels into every
// latent channel; decoding upsamples channel 0 by nearest neighbour.
class MockCodec : public LatentCodec {
 public:
  explicit MockCodec(int image_channels = 3) : image_channels_(image_channels) {}

  Latent encode(const Image& image) const override {
    if (image.height() % kLatentScale != 0 || image.width() % kLatentScale != 0) {
      throw ArgumentError("mock codec needs image dims divisible by 8, got " +
                          to_string(image.shape()));
    }
    const int h = image.height() / kLatentScale;
    const int w = image.width() / kLatentScale;
    const double n = static_cast<double>(image.channels()) * kLatentScale * kLatentScale;
    Latent z(kLatentChannels, h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int c = 0; c < image.channels(); ++c) {
          for (int dy = 0; dy < kLatentScale; ++dy) {
            for (int dx = 0; dx < kLatentScale; ++dx) {
              s += image(c, y * kLatentScale + dy, x * kLatentScale + dx);
            }
          }
        }
        for (int c = 0; c < kLatentChannels; ++c) z(c, y, x) = s / n;
      }
    }
    return z;
  }

  Image decode(const Latent& latent) const override {
    Image img(image_channels_, latent.height() * kLatentScale, latent.width() * kLatentScale);
    for (int c = 0; c < image_channels_; ++c) {
      for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
          img(c, y, x) = static_cast<float>(latent(0, y / kLatentScale, x / kLatentScale));
        }
      }
    }
    return img;
  }

 private:
  int image_channels_;
};

// Describes a region from its colour statistics; counts calls.
class MockCaptioner : public Captioner {
 public:
  std::string describe(const Image& image, const std::string& instruction) const override {
    ++calls_;
    if (instruction.empty()) throw CaptionerError("empty instruction");
    std::vector<double> mean(static_cast<std::size_t>(image.channels()), 0.0);
    for (int c = 0; c < image.channels(); ++c) {
      for (float v : image.plane(c)) mean[static_cast<std::size_t>(c)] += v;
      mean[static_cast<std::size_t>(c)] /= static_cast<double>(image.height()) * image.width();
    }
    double luma = 0.0;
    for (double m : mean) luma += m;
    luma /= std::max<std::size_t>(mean.size(), 1);
    std::string tone = luma > 0.66 ? "bright" : (luma > 0.33 ? "softly lit" : "dark");
    std::string hue = "neutral";
    if (mean.size() >= 3) {
      if (mean[0] > mean[1] + 0.05 && mean[0] > mean[2] + 0.05) hue = "warm reddish";
      else if (mean[1] > mean[0] + 0.05 && mean[1] > mean[2] + 0.05) hue = "green";
      else if (mean[2] > mean[0] + 0.05 && mean[2] > mean[1] + 0.05) hue = "cool bluish";
    }
    return "A " + tone + ", " + hue + " part of the scene with fine, sharp texture.";
  }

  std::string model_id() const override { return "mock-captioner-1"; }
  std::size_t calls() const { return calls_.load(); }

 private:
  mutable std::atomic<std::size_t> calls_{0};
};

struct MockDenoiserOptions {
  int native_region_size = 32;
  double guidance_scale = 7.5;
  // Weight of the text/attention-dependent feature added to the oracle noise.
  double text_gain = 0.02;
  int head_dim = 8;
  int value_dim = 8;
  std::vector<SiteInfo> sites{{"mid", 2, 2}, {"up", 1, 1}};
  std::uint64_t weight_seed = 20240617;
};

// Oracle denoiser toward an anchor latent plus a small term produced by
// genuine cross-attention between pooled latent features and the prompt
// embedding, at every registered site and head. Honours attention overrides
// on the conditional branch and applies classifier-free guidance internally.
class MockDenoiser : public OracleDenoiser {
 public:
  MockDenoiser(Latent anchor, NoiseSchedule schedule, MockDenoiserOptions options = {})
      : OracleDenoiser(std::move(anchor), std::move(schedule), options.native_region_size),
        options_(std::move(options)) {
    const int embed = conditioner_.embed_dim();
    for (std::size_t s = 0; s < options_.sites.size(); ++s) {
      for (int h = 0; h < options_.sites[s].head_count; ++h) {
        std::mt19937_64 rng(options_.weight_seed + 7919 * s + 104729 * static_cast<std::uint64_t>(h));
        heads_.push_back(HeadWeights{
            s, head_site_id(options_.sites[s].site_id, h),
            random_matrix(rng, kLatentChannels, options_.head_dim),
            random_matrix(rng, embed, options_.head_dim),
            random_matrix(rng, embed, options_.value_dim),
            random_matrix(rng, options_.value_dim, kLatentChannels)});
      }
    }
  }

  Latent predict_noise(const NoiseRequest& request) const override {
    Latent base = oracle_noise(request.latent, request.timestep, request.region);
    if (options_.text_gain == 0.0) return base;
    const Latent cond = add_scaled(base, features(request.latent, request.prompt, request.attention));
    if (options_.guidance_scale <= 1.0) return cond;
    const Latent uncond = add_scaled(base, features(request.latent, "", nullptr));
    return apply_cfg(cond, uncond, options_.guidance_scale);
  }

  AttentionPriorSet capture_attention(const Latent& z, int timestep,
                                      const std::string& prompt) const override {
    AttentionPriorSet set;
    set.timestep = timestep;
    const Matrix text = conditioner_.encode(prompt);
    for (const auto& head : heads_) {
      const SiteInfo& site = options_.sites[head.site];
      int ph = 0;
      int pw = 0;
      const Matrix q = pooled_queries(z, site.downsample_factor, ph, pw) * head.wq;
      AttentionMap map;
      map.spatial_height = ph;
      map.spatial_width = pw;
      map.site_id = head.id;
      map.downsample_factor = site.downsample_factor;
      map.scores = attention_scores(q, text * head.wk);
      set.maps.push_back(std::move(map));
    }
    return set;
  }

  std::vector<SiteInfo> site_registry() const override { return options_.sites; }
  const TextConditioner& conditioner() const { return conditioner_; }

 private:
  struct HeadWeights {
    std::size_t site;
    std::string id;
    Matrix wq, wk, wv, wo;
  };

  static Matrix random_matrix(std::mt19937_64& rng, int rows, int cols) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  }

  // Average-pools z by `factor` (partial edge blocks averaged over what exists)
  // into a (cells x channels) query-input matrix.
  static Matrix pooled_queries(const Latent& z, int factor, int& ph, int& pw) {
    ph = (z.height() + factor - 1) / factor;
    pw = (z.width() + factor - 1) / factor;
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(ph) * pw, z.channels());
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) {
        const int y1 = std::min(z.height(), (y + 1) * factor);
        const int x1 = std::min(z.width(), (x + 1) * factor);
        const double n = static_cast<double>(y1 - y * factor) * (x1 - x * factor);
        for (int c = 0; c < z.channels(); ++c) {
          double s = 0.0;
          for (int yy = y * factor; yy < y1; ++yy) {
            for (int xx = x * factor; xx < x1; ++xx) s += z(c, yy, xx);
          }
          m(static_cast<Eigen::Index>(y) * pw + x, c) = s / n;
        }
      }
    }
    return m;
  }

  Latent features(const Latent& z, const std::string& prompt,
                  const RegionalAttention* attention) const {
    Latent out(z.shape());
    const Matrix semantic = conditioner_.encode(prompt);
    Matrix global;
    if (attention != nullptr) global = conditioner_.encode(attention->global_prompt);
    for (const auto& head : heads_) {
      const int f = options_.sites[head.site].downsample_factor;
      int ph = 0;
      int pw = 0;
      const Matrix q = pooled_queries(z, f, ph, pw) * head.wq;
      const Matrix k = semantic * head.wk;
      const Matrix v = semantic * head.wv;
      const AttentionMap* prior = nullptr;
      if (attention != nullptr && attention->priors != nullptr) {
        prior = attention->priors->find(head.id);
      }
      Matrix attended;
      if (prior != nullptr) {
        if (prior->spatial_height != ph || prior->spatial_width != pw) {
          throw ArgumentError("attention prior for " + head.id + " is " +
                              std::to_string(prior->spatial_height) + "x" +
                              std::to_string(prior->spatial_width) + " but the site grid is " +
                              std::to_string(ph) + "x" + std::to_string(pw));
        }
        attended = attention->compose(q, k, v, prior->scores, global * head.wv);
      } else {
        attended = attention_scores(q, k) * v;
      }
      const Matrix projected = attended * head.wo;
      for (int c = 0; c < z.channels(); ++c) {
        for (int y = 0; y < z.height(); ++y) {
          for (int x = 0; x < z.width(); ++x) {
            out(c, y, x) += projected(static_cast<Eigen::Index>(y / f) * pw + x / f, c);
          }
        }
      }
    }
    return out;
  }

  Latent add_scaled(const Latent& base, const Latent& feature) const {
    Latent out = base;
    auto o = out.data();
    auto f = feature.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += options_.text_gain * f[i];
    return out;
  }

  MockDenoiserOptions options_;
  MockTextConditioner conditioner_;
  std::vector<HeadWeights> heads_;
};

// Decorator counting predict/capture calls, for accounting checks.
class CountingDenoiser : public Denoiser {
 public:
  explicit CountingDenoiser(std::shared_ptr<const Denoiser> inner) : inner_(std::move(inner)) {}

  Latent predict_noise(const NoiseRequest& request) const override {
    ++predict_calls_;
    return inner_->predict_noise(request);
  }
  AttentionPriorSet capture_attention(const Latent& z, int timestep,
                                      const std::string& prompt) const override {
    ++capture_calls_;
    return inner_->capture_attention(z, timestep, prompt);
  }
  std::vector<SiteInfo> site_registry() const override { return inner_->site_registry(); }
  const NoiseSchedule& schedule() const override { return inner_->schedule(); }
  int native_region_size() const override { return inner_->native_region_size(); }
  bool concurrent() const override { return inner_->concurrent(); }

  std::size_t predict_calls() const { return predict_calls_.load(); }
  std::size_t capture_calls() const { return capture_calls_.load(); }

 private:
  std::shared_ptr<const Denoiser> inner_;
  mutable std::atomic<std::size_t> predict_calls_{0};
  mutable std::atomic<std::size_t> capture_calls_{0};
};

}  // namespace priorscale
