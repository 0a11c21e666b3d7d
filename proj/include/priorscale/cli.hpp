#pragma once

// Command-line front end: layered argument parsing and a run driver that maps
// failures onto exit codes (0 ok, 1 configuration or input error, 2 backend
// failure).
//
// Every setting has a key. It may come from the config file ("key = value"
// lines, '#' comments), from the environment (PRIORSCALE_<KEY>), or from a
// flag (--key-with-dashes). Later sources win: file < environment < flags.
// Within one source --scale excludes --width/--height; a later source naming
// one of them replaces whatever an earlier source chose.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "priorscale/backends.hpp"
#include "priorscale/errors.hpp"
#include "priorscale/image_io.hpp"
#include "priorscale/pipeline.hpp"
#include "priorscale/regional_prompts.hpp"
#include "priorscale/service.hpp"

namespace priorscale::cli {

enum class Backend { mock, diffusion_service };

inline std::string_view to_string(Backend b) {
  return b == Backend::mock ? "mock" : "diffusion-service";
}

struct CliInvocation {
  std::filesystem::path input_path;
  std::filesystem::path output_path;
  std::string prompt;
  std::optional<int> scale;
  std::optional<int> width;
  std::optional<int> height;
  Backend backend = Backend::mock;
  // target_height/target_width stay 0 here; run() derives them from the input.
  PipelineConfig config;
  std::optional<std::filesystem::path> cache_path;
  int verbosity = 0;
  std::string denoiser_url;
  std::string captioner_url;
  std::string captioner_model = "default";
  int timeout_ms = 60000;
  bool show_help = false;
  std::string help_text;

  bool operator==(const CliInvocation&) const = default;
};

using EnvMap = std::map<std::string, std::string>;

inline const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys{
      "input",          "output",          "prompt",         "scale",
      "width",          "height",          "backend",        "noise_fraction",
      "default_steps",  "gsp_step",        "gsp_schedule",   "wavelet_levels",
      "region_size",    "overlap",         "guidance_scale", "seed",
      "enable_gsp",     "enable_rap",      "enable_rsp",     "caption_concurrency",
      "denoise_concurrency", "dump_dir",   "cache_path",     "verbosity",
      "denoiser_url",   "captioner_url",   "captioner_model", "timeout_ms"};
  return keys;
}

inline std::string flag_name(std::string_view key) {
  std::string out = "--";
  for (char c : key) out.push_back(c == '_' ? '-' : c);
  return out;
}

inline std::string env_name(std::string_view key) {
  std::string out = "PRIORSCALE_";
  for (char c : key) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

namespace detail {

struct Setting {
  std::string value;
  std::string origin;  // how to name it in an error message
};

using Layer = std::map<std::string, Setting>;

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline bool known_key(const std::string& key) {
  const auto& keys = setting_keys();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

inline Layer parse_config_text(std::string_view text) {
  Layer layer;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (!known_key(key)) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    layer[key] = Setting{value, "config key '" + key + "'"};
  }
  return layer;
}

inline Layer parse_env(const EnvMap& env) {
  Layer layer;
  for (const auto& key : setting_keys()) {
    auto it = env.find(env_name(key));
    if (it != env.end()) layer[key] = Setting{it->second, env_name(key)};
  }
  return layer;
}

inline void check_exclusive(const Layer& layer) {
  if (!layer.contains("scale")) return;
  for (const char* dim : {"width", "height"}) {
    if (layer.contains(dim)) {
      throw ArgumentError(layer.at("scale").origin + " and " + layer.at(dim).origin +
                          " are mutually exclusive");
    }
  }
}

inline void overlay(Layer& merged, const Layer& layer) {
  check_exclusive(layer);
  if (layer.contains("scale")) {
    merged.erase("width");
    merged.erase("height");
  }
  if (layer.contains("width") || layer.contains("height")) merged.erase("scale");
  for (const auto& [key, setting] : layer) merged[key] = setting;
}

inline long long to_integer(const Setting& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s.value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.value.size()) {
    throw ArgumentError(s.origin + ": '" + s.value + "' is not an integer");
  }
  return v;
}

inline int to_int(const Setting& s) {
  const long long v = to_integer(s);
  if (v < INT32_MIN || v > INT32_MAX) throw ArgumentError(s.origin + ": value out of range");
  return static_cast<int>(v);
}

inline double to_double(const Setting& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s.value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.value.size()) {
    throw ArgumentError(s.origin + ": '" + s.value + "' is not a number");
  }
  return v;
}

inline bool to_bool(const Setting& s) {
  std::string v = s.value;
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ArgumentError(s.origin + ": '" + s.value + "' is not a boolean");
}

inline CliInvocation build(const Layer& m) {
  CliInvocation inv;
  auto get = [&](const char* key) -> const Setting* {
    auto it = m.find(key);
    return it == m.end() ? nullptr : &it->second;
  };
  auto required = [&](const char* key) -> const Setting& {
    const Setting* s = get(key);
    if (s == nullptr || s->value.empty()) throw ArgumentError(flag_name(key) + " is required");
    return *s;
  };

  inv.input_path = required("input").value;
  inv.output_path = required("output").value;
  inv.prompt = required("prompt").value;

  if (const Setting* s = get("scale")) {
    inv.scale = to_int(*s);
    if (*inv.scale != 2 && *inv.scale != 3 && *inv.scale != 4 && *inv.scale != 8) {
      throw ArgumentError(s->origin + " must be one of 2, 3, 4, 8 (got " + s->value + ")");
    }
  } else {
    const Setting* w = get("width");
    const Setting* h = get("height");
    if (w == nullptr && h == nullptr) {
      throw ArgumentError("one of --scale or --width/--height is required");
    }
    if (w == nullptr || h == nullptr) {
      throw ArgumentError("--width and --height must be given together");
    }
    inv.width = to_int(*w);
    inv.height = to_int(*h);
    if (*inv.width < 1 || *inv.height < 1) throw ArgumentError("--width/--height must be positive");
  }

  if (const Setting* s = get("backend")) {
    if (s->value == "mock") {
      inv.backend = Backend::mock;
    } else if (s->value == "diffusion-service") {
      inv.backend = Backend::diffusion_service;
    } else {
      throw ArgumentError(s->origin + ": unknown backend '" + s->value +
                          "' (expected mock or diffusion-service)");
    }
  }

  PipelineConfig& c = inv.config;
  if (const Setting* s = get("noise_fraction")) c.noise_fraction = to_double(*s);
  if (const Setting* s = get("default_steps")) c.default_steps = to_int(*s);
  if (const Setting* s = get("gsp_step")) c.gsp.step_size = to_double(*s);
  if (const Setting* s = get("gsp_schedule")) {
    try {
      c.gsp.kind = parse_gsp_kind(s->value);
    } catch (const ConfigError& e) {
      throw ArgumentError(s->origin + ": " + e.what());
    }
  }
  if (const Setting* s = get("wavelet_levels")) c.wavelet_levels = to_int(*s);
  if (const Setting* s = get("region_size")) c.region_size = to_int(*s);
  if (const Setting* s = get("overlap")) c.overlap = to_int(*s);
  if (const Setting* s = get("guidance_scale")) c.guidance_scale = to_double(*s);
  if (const Setting* s = get("seed")) {
    const long long v = to_integer(*s);
    if (v < 0) throw ArgumentError(s->origin + " must be non-negative");
    c.seed = static_cast<std::uint64_t>(v);
  }
  if (const Setting* s = get("enable_gsp")) c.enable_gsp = to_bool(*s);
  if (const Setting* s = get("enable_rap")) c.enable_rap = to_bool(*s);
  if (const Setting* s = get("enable_rsp")) c.enable_rsp = to_bool(*s);
  if (const Setting* s = get("caption_concurrency")) c.caption_concurrency = to_int(*s);
  if (const Setting* s = get("denoise_concurrency")) c.denoise_concurrency = to_int(*s);
  if (const Setting* s = get("dump_dir"); s && !s->value.empty()) c.dump_dir = s->value;

  if (const Setting* s = get("cache_path"); s && !s->value.empty()) inv.cache_path = s->value;
  if (const Setting* s = get("verbosity")) inv.verbosity = to_int(*s);
  if (const Setting* s = get("denoiser_url")) inv.denoiser_url = s->value;
  if (const Setting* s = get("captioner_url")) inv.captioner_url = s->value;
  if (const Setting* s = get("captioner_model")) inv.captioner_model = s->value;
  if (const Setting* s = get("timeout_ms")) {
    inv.timeout_ms = to_int(*s);
    if (inv.timeout_ms < 1) throw ArgumentError(s->origin + " must be positive");
  }
  return inv;
}

}  // namespace detail

// Pure function of its inputs. `argv` excludes the program name.
inline CliInvocation parse_args(const std::vector<std::string>& argv,
                                std::string_view config_text = {}, const EnvMap& env = {}) {
  CLI::App app{"Training-free high-resolution image upscaling with latent diffusion."};
  app.set_help_flag("-h,--help", "Show this help and exit");
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  for (const auto& key : setting_keys()) {
    options[key] = app.add_option(flag_name(key), values[key]);
  }
  std::string config_file;
  app.add_option("--config", config_file, "Config file (read by the caller)");
  bool no_gsp = false;
  bool no_rap = false;
  bool no_rsp = false;
  int verbose = 0;
  app.add_flag("--no-gsp", no_gsp, "Same as --enable-gsp false");
  app.add_flag("--no-rap", no_rap, "Same as --enable-rap false");
  app.add_flag("--no-rsp", no_rsp, "Same as --enable-rsp false");
  app.add_flag("-v,--verbose", verbose, "Raise verbosity; repeatable");

  std::vector<std::string> storage{"priorscale"};
  storage.insert(storage.end(), argv.begin(), argv.end());
  std::vector<char*> cargv;
  for (auto& s : storage) cargv.push_back(s.data());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp&) {
    CliInvocation inv;
    inv.show_help = true;
    inv.help_text = app.help();
    return inv;
  } catch (const CLI::ParseError& e) {
    throw ArgumentError(e.what());
  }

  detail::Layer flags;
  for (const auto& key : setting_keys()) {
    if (options[key]->count() > 0) flags[key] = detail::Setting{values[key], flag_name(key)};
  }
  auto flag_off = [&](bool set, const char* key, const char* flag) {
    if (!set) return;
    if (flags.contains(key) && detail::to_bool(flags[key])) {
      throw ArgumentError(std::string(flag) + " contradicts " + flag_name(key));
    }
    flags[key] = detail::Setting{"false", flag};
  };
  flag_off(no_gsp, "enable_gsp", "--no-gsp");
  flag_off(no_rap, "enable_rap", "--no-rap");
  flag_off(no_rsp, "enable_rsp", "--no-rsp");
  if (verbose > 0 && !flags.contains("verbosity")) {
    flags["verbosity"] = detail::Setting{std::to_string(verbose), "--verbose"};
  }

  detail::Layer merged;
  detail::overlay(merged, detail::parse_config_text(config_text));
  detail::overlay(merged, detail::parse_env(env));
  detail::overlay(merged, flags);
  return detail::build(merged);
}

// The config file named by --config, or else by PRIORSCALE_CONFIG.
inline std::optional<std::filesystem::path> config_path(const std::vector<std::string>& argv,
                                                        const EnvMap& env) {
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (argv[i] == "--config" && i + 1 < argv.size()) return argv[i + 1];
    if (argv[i].starts_with("--config=")) return argv[i].substr(9);
  }
  if (auto it = env.find("PRIORSCALE_CONFIG"); it != env.end() && !it->second.empty()) {
    return it->second;
  }
  return std::nullopt;
}

namespace detail {

inline BackendSet make_backends(const CliInvocation& inv, const PipelineConfig& config,
                                const Image& input) {
  BackendSet set;
  const ServiceEndpoint captioner_ep{inv.captioner_url, std::chrono::milliseconds(inv.timeout_ms)};
  if (inv.backend == Backend::mock) {
    auto codec = std::make_shared<MockCodec>();
    Latent anchor = codec->encode(resize(input, config.target_height, config.target_width));
    MockDenoiserOptions opts;
    opts.guidance_scale = config.guidance_scale;
    set.denoiser = std::make_shared<MockDenoiser>(std::move(anchor), build_schedule(kDefaultTrainSteps),
                                                  opts);
    set.codec = codec;
    set.conditioner = std::make_shared<MockTextConditioner>();
    if (inv.captioner_url.empty()) {
      set.captioner = std::make_shared<MockCaptioner>();
    } else {
      set.captioner = std::make_shared<HttpCaptioner>(captioner_ep, inv.captioner_model);
    }
    return set;
  }
  if (inv.denoiser_url.empty()) {
    throw ConfigError("the diffusion-service backend needs --denoiser-url or " +
                      env_name("denoiser_url"));
  }
  const ServiceEndpoint denoiser_ep{inv.denoiser_url, std::chrono::milliseconds(inv.timeout_ms)};
  set.denoiser = std::make_shared<DiffusionServiceAdapter>(
      DiffusionServiceConfig{denoiser_ep, config.guidance_scale});
  set.codec = std::make_shared<ServiceCodec>(denoiser_ep);
  if (config.enable_rsp) {
    if (inv.captioner_url.empty()) {
      throw ConfigError("regional prompts need --captioner-url or " + env_name("captioner_url") +
                        " with the diffusion-service backend");
    }
    set.captioner = std::make_shared<HttpCaptioner>(captioner_ep, inv.captioner_model);
  }
  return set;
}

}  // namespace detail

inline int run(const CliInvocation& inv) {
  if (inv.show_help) {
    std::cout << inv.help_text;
    return 0;
  }
  spdlog::set_level(inv.verbosity > 0 ? spdlog::level::debug : spdlog::level::info);
  try {
    Image input;
    try {
      input = read_png(inv.input_path);
    } catch (const ImageIoError& e) {
      spdlog::error("cannot read input: {}", e.what());
      return 1;
    }
    PipelineConfig config = inv.config;
    if (inv.scale) {
      config.target_height = input.height() * *inv.scale;
      config.target_width = input.width() * *inv.scale;
    } else {
      config.target_height = *inv.height;
      config.target_width = *inv.width;
    }
    validate_config(config);

    const BackendSet base = detail::make_backends(inv, config, input);
    std::optional<PromptCache> cache;
    if (inv.cache_path) {
      cache.emplace(*inv.cache_path);
    } else {
      cache.emplace();
    }
    BackendSet backends = base;
    backends.cache = &*cache;

    spdlog::info("{}x{} -> {}x{} with the {} backend", input.width(), input.height(),
                 config.target_width, config.target_height, to_string(inv.backend));
    const RunArtifacts art = upscale(input, inv.prompt, config, backends);
    for (const auto& w : art.warnings) spdlog::warn("{}", w);
    write_png(inv.output_path, art.output);

    spdlog::info("regions: {}, entry step S: {} of {}", art.region_count, art.entry_step,
                 config.default_steps);
    const Timings& t = art.timings;
    spdlog::info(
        "timings (s): encode {:.3f}, caption {:.3f}, attention {:.3f}, denoise {:.3f}, "
        "guidance {:.3f}, decode {:.3f}, total {:.3f}",
        t.encode, t.caption, t.attention, t.denoise, t.guidance, t.decode, t.total);
    if (inv.verbosity > 0) {
      for (std::size_t i = 0; i < art.gsp_loss_trace.size(); ++i) {
        std::cout << "gsp_loss step=" << (art.entry_step - static_cast<int>(i))
                  << " timestep=" << art.timesteps[i] << " loss=" << art.gsp_loss_trace[i] << '\n';
      }
      std::cout << "gsp_loss final=" << art.final_gsp_loss << '\n';
    }
    spdlog::info("wrote {}", inv.output_path.string());
    return 0;
  } catch (const BackendError& e) {
    spdlog::error("backend failure: {}", e.what());
    return 2;
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return 1;
  } catch (const ArgumentError& e) {
    spdlog::error("configuration error: {}", e.what());
    return 1;
  } catch (const ImageIoError& e) {
    spdlog::error("cannot write output: {}", e.what());
    return 1;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}

}  // namespace priorscale::cli
