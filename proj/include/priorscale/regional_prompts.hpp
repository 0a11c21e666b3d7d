#pragma once

// Per-region descriptive prompts from a multimodal captioner, with retries,
// graceful fallback to the global prompt and a persistent content-keyed cache.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "priorscale/backends.hpp"
#include "priorscale/detail/encoding.hpp"
#include "priorscale/detail/parallel.hpp"
#include "priorscale/errors.hpp"
#include "priorscale/tiling.hpp"

namespace priorscale {

inline constexpr std::string_view kRegionalImageMarker = "<regional image>";

// The captioner instruction with the global prompt substituted verbatim.
inline std::string build_instruction(std::string_view global_prompt,
                                     std::string_view image_marker = kRegionalImageMarker) {
  if (global_prompt.empty()) throw ArgumentError("global prompt must not be empty");
  std::string out = "Given the description of a full image ";
  out += global_prompt;
  out += ", describe the following image ";
  out += image_marker;
  out += ", which is part of the full image.";
  return out;
}

enum class PromptSource { mllm, cache, fallback };

inline std::string_view to_string(PromptSource s) {
  switch (s) {
    case PromptSource::mllm: return "mllm";
    case PromptSource::cache: return "cache";
    case PromptSource::fallback: return "fallback";
  }
  return "fallback";
}

struct RegionalPrompt {
  int region_index = 0;
  std::string text;
  PromptSource source = PromptSource::fallback;
  // Why a fallback was used; empty otherwise.
  std::string diagnostic;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
  double backoff_multiplier = 2.0;
};

using SleepFn = std::function<void(std::chrono::milliseconds)>;

inline void sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

// Calls fn until it returns without throwing `Retryable` or the attempt budget
// is spent, sleeping with exponential backoff in between. The last error is
// rethrown.
template <class Retryable = Error, class Fn>
auto with_retry(Fn&& fn, const RetryPolicy& policy, const SleepFn& sleep = sleep_for) {
  const int attempts = std::max(policy.max_attempts, 1);
  auto delay = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const Retryable&) {
      if (attempt >= attempts) throw;
    }
    if (delay.count() > 0) sleep(delay);
    delay = std::chrono::milliseconds(
        static_cast<long long>(static_cast<double>(delay.count()) * policy.backoff_multiplier));
  }
}

// Cuts `text` to at most `word_budget` whitespace-separated words, preferring
// to end at the last sentence boundary inside the budget.
inline std::string truncate_to_budget(std::string_view text, int word_budget) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  const std::size_t budget = static_cast<std::size_t>(std::max(word_budget, 1));
  const std::size_t keep = std::min(words.size(), budget);
  std::size_t cut = keep;
  if (words.size() > budget) {
    for (std::size_t k = keep; k > 0; --k) {
      const char last = words[k - 1].back();
      if (last == '.' || last == '!' || last == '?') {
        cut = k;
        break;
      }
    }
  }
  std::string out;
  for (std::size_t k = 0; k < cut; ++k) {
    if (k > 0) out.push_back(' ');
    out.append(words[k]);
  }
  return out;
}

// SHA-256 over (shape, pixels, global prompt, model id).
inline std::string cache_key(const Image& pixels, std::string_view global_prompt,
                             std::string_view model_id) {
  const int dims[3] = {pixels.channels(), pixels.height(), pixels.width()};
  const std::string_view sep("\x1f", 1);
  const std::span<const std::uint8_t> parts[] = {
      detail::as_bytes_of(std::span<const int>(dims)), detail::as_bytes_of(pixels.data()),
      detail::as_bytes_of(sep),                        detail::as_bytes_of(global_prompt),
      detail::as_bytes_of(sep),                        detail::as_bytes_of(model_id)};
  return detail::sha256_hex(parts);
}

// Thread-safe prompt cache. With a backing file, records are loaded on
// construction and appended write-through, one JSON object per line:
//   {"key": ..., "model": ..., "text": ..., "created_at": <unix seconds>}
class PromptCache {
 public:
  PromptCache() = default;

  explicit PromptCache(std::filesystem::path file) : file_(std::move(file)) {
    std::ifstream in(*file_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto rec = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
      if (rec.is_discarded() || !rec.contains("key") || !rec.contains("text")) continue;
      entries_[rec["key"].get<std::string>()] = rec["text"].get<std::string>();
    }
  }

  std::optional<std::string> get(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& key, const std::string& model_id, const std::string& text) {
    std::lock_guard lock(mutex_);
    entries_[key] = text;
    if (!file_) return;
    if (file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
    std::ofstream out(*file_, std::ios::app);
    if (!out) throw Error("cannot append to prompt cache " + file_->string());
    nlohmann::json rec{{"key", key},
                       {"model", model_id},
                       {"text", text},
                       {"created_at", static_cast<long long>(std::time(nullptr))}};
    out << rec.dump() << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  std::optional<std::filesystem::path> file_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::string> entries_;
};

struct CaptionOptions {
  RetryPolicy retry;
  // Whitespace words the text conditioner accepts (77 tokens minus <bos>).
  int word_budget = 76;
  int max_in_flight = 4;
  SleepFn sleep = sleep_for;
};

inline RegionalPrompt caption_region(const Captioner& captioner, const Image& region_image,
                                     const std::string& global_prompt,
                                     const CaptionOptions& options = {},
                                     PromptCache* cache = nullptr, int region_index = 0) {
  if (region_image.height() < 8 || region_image.width() < 8) {
    throw ArgumentError("region image must be at least 8x8 pixels");
  }
  const std::string instruction = build_instruction(global_prompt, captioner.image_marker());
  const std::string model = captioner.model_id();
  std::string key;
  if (cache != nullptr) {
    key = cache_key(region_image, global_prompt, model);
    if (auto hit = cache->get(key)) {
      return RegionalPrompt{region_index, *hit, PromptSource::cache, {}};
    }
  }
  try {
    std::string text = with_retry<CaptionerError>(
        [&] {
          std::string raw = truncate_to_budget(captioner.describe(region_image, instruction),
                                               options.word_budget);
          if (raw.empty()) throw CaptionerError("captioner returned empty text");
          return raw;
        },
        options.retry, options.sleep);
    if (cache != nullptr) cache->put(key, model, text);
    return RegionalPrompt{region_index, std::move(text), PromptSource::mllm, {}};
  } catch (const CaptionerError& e) {
    return RegionalPrompt{region_index, global_prompt, PromptSource::fallback,
                          std::string("captioner failed after retries: ") + e.what()};
  }
}

// One prompt per region, in region order. Regions are cropped from the image
// already resized to the target resolution, at latent coordinates x 8.
inline std::vector<RegionalPrompt> caption_all(const Captioner& captioner, const Image& low_image,
                                               const Partition& partition,
                                               const std::string& global_prompt, PromptCache& cache,
                                               const CaptionOptions& options = {}) {
  std::vector<RegionalPrompt> prompts(partition.regions.size());
  detail::parallel_for(prompts.size(), static_cast<std::size_t>(std::max(options.max_in_flight, 1)),
                       [&](std::size_t n) {
                         const RegionSpec& spec = partition.regions[n];
                         const Image region = crop(low_image, scale_up(spec, kLatentScale));
                         prompts[n] = caption_region(captioner, region, global_prompt, options,
                                                     &cache, spec.index);
                       });
  return prompts;
}

}  // namespace priorscale
