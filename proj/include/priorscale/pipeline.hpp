#pragma once

// End-to-end upscaling: encode, caption regions, partially noise, then for each
// reverse step capture attention priors on the noised low-resolution latent,
// denoise overlapped regions with the attention composer, merge, and pull the
// merged latent's low-frequency band toward the input's.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "priorscale/attention_prior.hpp"
#include "priorscale/backends.hpp"
#include "priorscale/detail/parallel.hpp"
#include "priorscale/errors.hpp"
#include "priorscale/regional_prompts.hpp"
#include "priorscale/scheduler.hpp"
#include "priorscale/tensor.hpp"
#include "priorscale/tiling.hpp"
#include "priorscale/wavelet.hpp"

namespace priorscale {

struct PipelineConfig {
  int target_height = 0;  // pixels
  int target_width = 0;   // pixels
  double noise_fraction = 0.45;
  int default_steps = 50;
  GspSchedule gsp{};
  int wavelet_levels = 1;
  int region_size = 0;  // latent cells; 0 selects the backend's native size
  int overlap = -1;     // latent cells; negative selects region_size / 2
  double guidance_scale = 7.5;
  std::uint64_t seed = 0;
  bool enable_gsp = true;
  bool enable_rap = true;
  bool enable_rsp = true;
  int caption_concurrency = 4;
  int denoise_concurrency = 0;  // 0 selects hardware concurrency
  std::optional<std::filesystem::path> dump_dir;

  bool operator==(const PipelineConfig&) const = default;
};

struct BackendSet {
  std::shared_ptr<const Denoiser> denoiser;
  std::shared_ptr<const LatentCodec> codec;
  std::shared_ptr<const Captioner> captioner;  // required only with enable_rsp
  std::shared_ptr<const TextConditioner> conditioner;  // optional; sets the prompt word budget
  PromptCache* cache = nullptr;  // optional; an in-memory cache is used otherwise
  CaptionOptions caption_options{};
};

struct Timings {
  double encode = 0;
  double caption = 0;
  double attention = 0;
  double denoise = 0;
  double guidance = 0;
  double decode = 0;
  double total = 0;
};

struct RunArtifacts {
  Image output;
  Latent latent;
  // Structure loss of the merged clean estimate at each step, before guidance.
  std::vector<double> gsp_loss_trace;
  // Structure loss of the returned latent.
  double final_gsp_loss = 0;
  std::vector<RegionalPrompt> prompts;
  Timings timings;
  int entry_step = 0;
  std::vector<int> timesteps;  // active timesteps, largest first
  std::size_t region_count = 0;
  std::vector<std::string> warnings;
};

// One structure-guidance update: z_merged - delta * grad, with the gradient
// chained through the timestep that produced z0_hat_merged.
inline Latent gsp_apply(const Latent& z_merged, const Latent& z0_hat_merged,
                        const Latent& target_band, int timestep, double delta, int levels,
                        const NoiseSchedule& sched) {
  require_same_shape(z_merged.shape(), z0_hat_merged.shape(), "gsp_apply");
  if (delta == 0.0) return z_merged;
  const Latent grad = gsp_gradient_from_band(target_band, z0_hat_merged, timestep, sched, levels);
  Latent out = z_merged;
  auto o = out.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= delta * g[i];
  return out;
}

struct ResolvedLayout {
  int latent_height = 0;
  int latent_width = 0;
  int region_size = 0;
  int overlap = 0;
};

inline void validate_config(const PipelineConfig& c) {
  if (c.wavelet_levels < 1 || c.wavelet_levels > 3) {
    throw ConfigError("wavelet_levels must be 1, 2 or 3");
  }
  const int block = kLatentScale << c.wavelet_levels;
  if (c.target_height <= 0 || c.target_width <= 0) throw ConfigError("target size must be positive");
  if (c.target_height % block != 0 || c.target_width % block != 0) {
    throw ConfigError("target size " + std::to_string(c.target_width) + "x" +
                      std::to_string(c.target_height) + " must be divisible by " +
                      std::to_string(block));
  }
  if (!(c.noise_fraction > 0.0 && c.noise_fraction <= 1.0)) {
    throw ConfigError("noise_fraction must lie in (0, 1]");
  }
  if (c.default_steps < 1) throw ConfigError("default_steps must be >= 1");
  if (c.gsp.step_size < 0.0) throw ConfigError("gsp step size must be non-negative");
  if (c.region_size < 0) throw ConfigError("region_size must be non-negative");
  if (c.region_size > 0 && c.overlap >= c.region_size) {
    throw ConfigError("overlap must be smaller than region_size");
  }
}

// Region size defaults to the model's native size, capped at the canvas; the
// overlap defaults to half the region.
inline ResolvedLayout resolve_layout(const PipelineConfig& c, int native_region_size) {
  ResolvedLayout l;
  l.latent_height = c.target_height / kLatentScale;
  l.latent_width = c.target_width / kLatentScale;
  int region = c.region_size > 0 ? c.region_size : native_region_size;
  region = std::min({region, l.latent_height, l.latent_width});
  if (region < 1) throw ConfigError("region size resolves to zero");
  l.region_size = region;
  l.overlap = c.overlap >= 0 ? c.overlap : region / 2;
  if (l.overlap >= l.region_size) {
    throw ConfigError("overlap " + std::to_string(l.overlap) + " must be smaller than region size " +
                      std::to_string(l.region_size));
  }
  return l;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline Latent gaussian_like(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Latent out(shape);
  for (double& v : out.data()) v = normal(rng);
  return out;
}

template <class Fn>
auto backend_call(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const BackendError&) {
    throw;
  } catch (const std::exception& e) {
    throw BackendError(std::string(what) + " failed: " + e.what());
  }
}

inline void write_latent_f32(const std::filesystem::path& path, const Latent& z) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (double v : z.data()) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
}

}  // namespace detail

inline RunArtifacts upscale(const Image& low_image, const std::string& global_prompt,
                            const PipelineConfig& config, const BackendSet& backends) {
  using clock = std::chrono::steady_clock;
  const auto run_start = clock::now();
  validate_config(config);
  if (global_prompt.empty()) throw ConfigError("global prompt must not be empty");
  if (!backends.denoiser || !backends.codec) throw ConfigError("denoiser and codec are required");
  if (config.enable_rsp && !backends.captioner) {
    throw ConfigError("regional prompts are enabled but no captioner is configured");
  }
  if (low_image.height() > config.target_height || low_image.width() > config.target_width) {
    throw ConfigError("input image is larger than the target size");
  }
  if (low_image.height() % kLatentScale != 0 || low_image.width() % kLatentScale != 0) {
    throw ConfigError("input image dims must be multiples of 8");
  }
  const Denoiser& denoiser = *backends.denoiser;
  const LatentCodec& codec = *backends.codec;
  const NoiseSchedule& sched = denoiser.schedule();
  const ResolvedLayout layout = resolve_layout(config, denoiser.native_region_size());
  const Partition part =
      partition(layout.latent_height, layout.latent_width, layout.region_size, layout.overlap);

  if (config.enable_rap) {
    for (const SiteInfo& site : denoiser.site_registry()) {
      const int f = site.downsample_factor;
      for (const RegionSpec& r : part.regions) {
        if (r.top % f || r.left % f || r.height % f || r.width % f) {
          throw ConfigError("region grid (size " + std::to_string(layout.region_size) +
                            ", overlap " + std::to_string(layout.overlap) +
                            ") is not aligned with attention site '" + site.site_id +
                            "' (factor " + std::to_string(f) + ")");
        }
      }
    }
  }

  RunArtifacts art;
  art.region_count = part.size();

  // Encode the resized input (high-resolution start) and the original input.
  auto phase = clock::now();
  const Image resized = resize(low_image, config.target_height, config.target_width);
  const Latent base = detail::backend_call("encode", [&] { return codec.encode(resized); });
  const Latent z0_low = detail::backend_call("encode", [&] { return codec.encode(low_image); });
  const Shape canvas{kLatentChannels, layout.latent_height, layout.latent_width};
  if (!(base.shape() == canvas)) {
    throw BackendError("codec produced latent " + to_string(base.shape()) + ", expected " +
                       to_string(canvas));
  }
  const Latent target_band =
      structure_band(resize(z0_low, canvas.height, canvas.width), config.wavelet_levels);
  art.timings.encode = detail::seconds_since(phase);

  // Regional prompts.
  phase = clock::now();
  if (config.enable_rsp) {
    PromptCache scratch;
    PromptCache& cache = backends.cache != nullptr ? *backends.cache : scratch;
    CaptionOptions opts = backends.caption_options;
    opts.max_in_flight = config.caption_concurrency;
    if (backends.conditioner) opts.word_budget = backends.conditioner->word_budget();
    art.prompts = caption_all(*backends.captioner, resized, part, global_prompt, cache, opts);
    for (const auto& p : art.prompts) {
      if (p.source == PromptSource::fallback) {
        art.warnings.push_back("region " + std::to_string(p.region_index) +
                               " uses the global prompt: " + p.diagnostic);
      }
    }
  } else {
    for (const RegionSpec& r : part.regions) {
      art.prompts.push_back(RegionalPrompt{r.index, global_prompt, PromptSource::fallback, {}});
    }
  }
  art.timings.caption = detail::seconds_since(phase);

  const std::vector<int> taus = inference_timesteps(config.default_steps, sched.total_steps());
  const int steps = entry_step(config.default_steps, config.noise_fraction);
  art.entry_step = steps;

  std::mt19937_64 high_rng(config.seed);
  std::seed_seq low_seed{static_cast<std::uint32_t>(config.seed),
                         static_cast<std::uint32_t>(config.seed >> 32), 0x5241505Du};
  std::mt19937_64 low_rng(low_seed);

  Latent z = add_noise(base, taus[static_cast<std::size_t>(steps)],
                       detail::gaussian_like(canvas, high_rng), sched);

  std::size_t workers = config.denoise_concurrency > 0
                            ? static_cast<std::size_t>(config.denoise_concurrency)
                            : std::max(1u, std::thread::hardware_concurrency());
  if (!denoiser.concurrent()) workers = 1;

  nlohmann::json manifest = nlohmann::json::array();
  if (config.dump_dir) std::filesystem::create_directories(*config.dump_dir);

  for (int k = steps; k >= 1; --k) {
    const int t = taus[static_cast<std::size_t>(k)];
    const int t_prev = taus[static_cast<std::size_t>(k - 1)];
    art.timesteps.push_back(t);

    phase = clock::now();
    AttentionPriorSet canvas_priors;
    if (config.enable_rap) {
      const Latent z_low_t =
          add_noise(z0_low, t, detail::gaussian_like(z0_low.shape(), low_rng), sched);
      const AttentionPriorSet low_priors = detail::backend_call(
          "attention capture", [&] { return denoiser.capture_attention(z_low_t, t, global_prompt); });
      canvas_priors = interpolate_priors(low_priors, canvas.height, canvas.width);
    }
    art.timings.attention += detail::seconds_since(phase);

    phase = clock::now();
    std::vector<Latent> stepped(part.size());
    std::vector<Latent> clean(part.size());
    detail::parallel_for(part.size(), workers, [&](std::size_t n) {
      const RegionSpec& spec = part.regions[n];
      const Latent region = crop(z, spec);
      RegionalAttention attention;
      AttentionPriorSet regional;
      if (config.enable_rap) {
        regional = crop_priors(canvas_priors, spec);
        attention.priors = &regional;
        attention.global_prompt = global_prompt;
      }
      NoiseRequest request{region, t, art.prompts[n].text, spec,
                           config.enable_rap ? &attention : nullptr};
      Latent eps = detail::backend_call("denoiser", [&] { return denoiser.predict_noise(request); });
      if (!(eps.shape() == region.shape())) {
        throw BackendError("denoiser returned " + to_string(eps.shape()) + " for a " +
                           to_string(region.shape()) + " region");
      }
      stepped[n] = ddim_step(region, eps, t, t_prev, sched, &clean[n]);
    });
    z = merge(stepped, part.regions, canvas.height, canvas.width);
    const Latent z0_hat = merge(clean, part.regions, canvas.height, canvas.width);
    art.timings.denoise += detail::seconds_since(phase);

    phase = clock::now();
    const double loss = gsp_loss_from_band(target_band, z0_hat, config.wavelet_levels);
    art.gsp_loss_trace.push_back(loss);
    if (config.enable_gsp) {
      const double delta = gsp_delta(k, config.default_steps, config.gsp);
      z = gsp_apply(z, z0_hat, target_band, t, delta, config.wavelet_levels, sched);
    }
    art.timings.guidance += detail::seconds_since(phase);

    if (config.dump_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%03d.bin", k);
      detail::write_latent_f32(*config.dump_dir / name, z);
      manifest.push_back({{"step", k},
                          {"timestep", t},
                          {"file", name},
                          {"shape", {canvas.channels, canvas.height, canvas.width}},
                          {"dtype", "float32"},
                          {"byte_order", "little"},
                          {"gsp_loss", loss}});
    }
  }

  if (config.dump_dir) {
    std::ofstream out(*config.dump_dir / "manifest.json");
    out << nlohmann::json{{"entry_step", steps}, {"regions", part.size()}, {"steps", manifest}}
               .dump(2)
        << '\n';
  }

  phase = clock::now();
  art.final_gsp_loss = gsp_loss_from_band(target_band, z, config.wavelet_levels);
  art.output = detail::backend_call("decode", [&] { return codec.decode(z); });
  if (art.output.height() != config.target_height || art.output.width() != config.target_width) {
    throw BackendError("codec decoded " + to_string(art.output.shape()) +
                       ", expected the target size");
  }
  art.latent = std::move(z);
  art.timings.decode = detail::seconds_since(phase);
  art.timings.total = detail::seconds_since(run_start);
  return art;
}

}  // namespace priorscale
