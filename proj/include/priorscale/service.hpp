#pragma once

// HTTP clients for remote model services.
//
// Captioner:   POST {base}/v1/caption
//   request  {"model": str, "instruction": str, "image": {"format": "png", "data": base64}}
//   response {"text": str}
//
// Diffusion service (tensors travel as {"shape": [c,h,w], "dtype": "float32",
// "data": base64 of little-endian float32}):
//   GET  {base}/v1/info -> {"native_region_size": int,
//                           "schedule": {"train_steps": int, "beta_start": f, "beta_end": f},
//                           "sites": [{"site_id": str, "downsample_factor": int, "head_count": int}],
//                           "concurrent": bool}
//   POST {base}/v1/predict_noise {"latent": T, "timestep": int, "prompt": str,
//                                 "region": [top, left, h, w]?,
//                                 "attention": {"global_prompt": str, "compose": "mean",
//                                               "maps": [M...]}?} -> {"eps": T}
//   POST {base}/v1/capture_attention {"latent": T, "timestep": int, "prompt": str}
//                                 -> {"maps": [M...]}
//   POST {base}/v1/encode {"image": T} -> {"latent": T}
//   POST {base}/v1/decode {"latent": T} -> {"image": T}
// where M = {"site_id": str, "height": int, "width": int, "downsample_factor": int,
//            "tokens": int, "scores": base64 float32 row-major (height*width x tokens)}.
//
// Guidance is applied client side: the conditional request carries the prompt
// and attention override, the unconditional one an empty prompt and none.

#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

// Eigen must be parsed before httplib, whose <resolv.h> defines a `_res` macro.
#include "priorscale/backends.hpp"
#include "priorscale/detail/encoding.hpp"
#include "priorscale/errors.hpp"
#include "priorscale/image_io.hpp"

#include <httplib.h>

namespace priorscale {

struct ServiceEndpoint {
  std::string url;  // e.g. http://127.0.0.1:8188 or http://host/prefix
  std::chrono::milliseconds timeout{60000};
};

namespace detail {

struct SplitUrl {
  std::string origin;
  std::string prefix;
};

inline SplitUrl split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ConfigError("invalid service URL '" + url + "'");
  std::string prefix = m[2].matched ? m[2].str() : "";
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {m[1].str(), prefix};
}

template <class ErrorT>
nlohmann::json http_json(const ServiceEndpoint& ep, const std::string& method,
                         const std::string& path, const nlohmann::json* body = nullptr) {
  const SplitUrl u = split_url(ep.url);
  httplib::Client client(u.origin);
  client.set_connection_timeout(ep.timeout);
  client.set_read_timeout(ep.timeout);
  client.set_write_timeout(ep.timeout);
  const std::string full = u.prefix + path;
  httplib::Result res = method == "GET"
                            ? client.Get(full)
                            : client.Post(full, body ? body->dump() : "{}", "application/json");
  if (!res) {
    throw ErrorT(method + " " + ep.url + path + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw ErrorT(method + " " + ep.url + path + " returned HTTP " + std::to_string(res->status));
  }
  auto parsed = nlohmann::json::parse(res->body, nullptr, false);
  if (parsed.is_discarded()) throw ErrorT(ep.url + path + " returned malformed JSON");
  return parsed;
}

inline std::string encode_f32(const double* values, std::size_t n) {
  std::vector<std::uint8_t> bytes(n * sizeof(float));
  for (std::size_t i = 0; i < n; ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + i * sizeof(float), &f, sizeof f);
  }
  return base64_encode(bytes);
}

inline std::vector<double> decode_f32(const std::string& b64, std::size_t expected) {
  const auto bytes = base64_decode(b64);
  if (bytes.size() != expected * sizeof(float)) {
    throw BackendError("tensor payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                       std::to_string(expected * sizeof(float)));
  }
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof f);
    out[i] = f;
  }
  return out;
}

}  // namespace detail

template <class T>
nlohmann::json tensor_to_json(const Tensor<T>& t) {
  std::vector<double> values(t.data().begin(), t.data().end());
  return {{"shape", {t.channels(), t.height(), t.width()}},
          {"dtype", "float32"},
          {"data", detail::encode_f32(values.data(), values.size())}};
}

template <class T>
Tensor<T> tensor_from_json(const nlohmann::json& j) {
  try {
    const auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw BackendError("tensor shape must have three entries");
    Tensor<T> t(shape[0], shape[1], shape[2]);
    const auto values = detail::decode_f32(j.at("data").get<std::string>(), t.size());
    auto dst = t.data();
    for (std::size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<T>(values[i]);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed tensor: ") + e.what());
  }
}

inline nlohmann::json attention_map_to_json(const AttentionMap& m) {
  return {{"site_id", m.site_id},
          {"height", m.spatial_height},
          {"width", m.spatial_width},
          {"downsample_factor", m.downsample_factor},
          {"tokens", m.token_count()},
          {"scores", detail::encode_f32(m.scores.data(), static_cast<std::size_t>(m.scores.size()))}};
}

inline AttentionMap attention_map_from_json(const nlohmann::json& j) {
  try {
    AttentionMap m;
    m.site_id = j.at("site_id").get<std::string>();
    m.spatial_height = j.at("height").get<int>();
    m.spatial_width = j.at("width").get<int>();
    m.downsample_factor = j.at("downsample_factor").get<int>();
    const int tokens = j.at("tokens").get<int>();
    const std::size_t n = static_cast<std::size_t>(m.cells()) * tokens;
    const auto values = detail::decode_f32(j.at("scores").get<std::string>(), n);
    m.scores.resize(m.cells(), tokens);
    std::copy(values.begin(), values.end(), m.scores.data());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed attention map: ") + e.what());
  }
}

class HttpCaptioner : public Captioner {
 public:
  HttpCaptioner(ServiceEndpoint endpoint, std::string model)
      : endpoint_(std::move(endpoint)), model_(std::move(model)) {
    detail::split_url(endpoint_.url);
  }

  std::string describe(const Image& image, const std::string& instruction) const override {
    const auto png = encode_png(image);
    const nlohmann::json body{{"model", model_},
                              {"instruction", instruction},
                              {"image", {{"format", "png"}, {"data", detail::base64_encode(png)}}}};
    const auto reply = detail::http_json<CaptionerError>(endpoint_, "POST", "/v1/caption", &body);
    if (!reply.contains("text") || !reply["text"].is_string()) {
      throw CaptionerError("captioner reply has no text field");
    }
    return reply["text"].get<std::string>();
  }

  std::string model_id() const override { return model_; }

 private:
  ServiceEndpoint endpoint_;
  std::string model_;
};

struct DiffusionServiceConfig {
  ServiceEndpoint endpoint;
  double guidance_scale = 7.5;
};

// Denoiser backed by a remote latent-diffusion service. Construction fetches
// /v1/info and fails with BackendError when the service is unreachable or the
// description is unusable.
class DiffusionServiceAdapter : public Denoiser {
 public:
  explicit DiffusionServiceAdapter(DiffusionServiceConfig config)
      : config_(std::move(config)), schedule_(build_schedule(1)) {
    nlohmann::json info;
    try {
      info = detail::http_json<BackendError>(config_.endpoint, "GET", "/v1/info");
    } catch (const ConfigError& e) {
      throw BackendError(std::string("diffusion service misconfigured: ") + e.what());
    }
    try {
      native_region_size_ = info.at("native_region_size").get<int>();
      const auto& s = info.at("schedule");
      schedule_ = build_schedule(s.at("train_steps").get<int>(),
                                 BetaRange{s.at("beta_start").get<double>(),
                                           s.at("beta_end").get<double>()});
      for (const auto& site : info.at("sites")) {
        sites_.push_back(SiteInfo{site.at("site_id").get<std::string>(),
                                  site.at("downsample_factor").get<int>(),
                                  site.at("head_count").get<int>()});
      }
      concurrent_ = info.value("concurrent", false);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("diffusion service info is incomplete: ") + e.what());
    } catch (const ConfigError& e) {
      throw BackendError(std::string("diffusion service schedule is invalid: ") + e.what());
    }
    if (native_region_size_ < 1) throw BackendError("diffusion service reports no native size");
  }

  Latent predict_noise(const NoiseRequest& request) const override {
    const Latent cond = request_noise(request, request.prompt, request.attention);
    if (config_.guidance_scale <= 1.0) return cond;
    const Latent uncond = request_noise(request, "", nullptr);
    return apply_cfg(cond, uncond, config_.guidance_scale);
  }

  AttentionPriorSet capture_attention(const Latent& z, int timestep,
                                      const std::string& prompt) const override {
    const nlohmann::json body{
        {"latent", tensor_to_json(z)}, {"timestep", timestep}, {"prompt", prompt}};
    const auto reply = post("/v1/capture_attention", body);
    AttentionPriorSet set;
    set.timestep = timestep;
    for (const auto& m : reply.at("maps")) set.maps.push_back(attention_map_from_json(m));
    return set;
  }

  std::vector<SiteInfo> site_registry() const override { return sites_; }
  const NoiseSchedule& schedule() const override { return schedule_; }
  int native_region_size() const override { return native_region_size_; }
  bool concurrent() const override { return concurrent_; }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
    return detail::http_json<BackendError>(config_.endpoint, "POST", path, &body);
  }

  Latent request_noise(const NoiseRequest& request, const std::string& prompt,
                       const RegionalAttention* attention) const {
    nlohmann::json body{{"latent", tensor_to_json(request.latent)},
                        {"timestep", request.timestep},
                        {"prompt", prompt}};
    if (request.region) {
      const auto& r = *request.region;
      body["region"] = {r.top, r.left, r.height, r.width};
    }
    if (attention != nullptr && attention->priors != nullptr) {
      nlohmann::json maps = nlohmann::json::array();
      for (const auto& m : attention->priors->maps) maps.push_back(attention_map_to_json(m));
      body["attention"] = {
          {"global_prompt", attention->global_prompt}, {"compose", "mean"}, {"maps", maps}};
    }
    const auto reply = post("/v1/predict_noise", body);
    if (!reply.contains("eps")) throw BackendError("predict_noise reply has no eps field");
    Latent eps = tensor_from_json<double>(reply["eps"]);
    if (!(eps.shape() == request.latent.shape())) {
      throw BackendError("diffusion service returned eps " + to_string(eps.shape()) + " for a " +
                         to_string(request.latent.shape()) + " latent");
    }
    return eps;
  }

  DiffusionServiceConfig config_;
  NoiseSchedule schedule_;
  int native_region_size_ = 0;
  std::vector<SiteInfo> sites_;
  bool concurrent_ = false;
};

class ServiceCodec : public LatentCodec {
 public:
  explicit ServiceCodec(ServiceEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

  Latent encode(const Image& image) const override {
    const nlohmann::json body{{"image", tensor_to_json(image)}};
    const auto reply = detail::http_json<BackendError>(endpoint_, "POST", "/v1/encode", &body);
    return tensor_from_json<double>(reply.at("latent"));
  }

  Image decode(const Latent& latent) const override {
    const nlohmann::json body{{"latent", tensor_to_json(latent)}};
    const auto reply = detail::http_json<BackendError>(endpoint_, "POST", "/v1/decode", &body);
    return tensor_from_json<float>(reply.at("image"));
  }

 private:
  ServiceEndpoint endpoint_;
};

}  // namespace priorscale
