#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pipeline_support.hpp"
#include "priorscale/cli.hpp"

using namespace priorscale;
using namespace priorscale::cli;

namespace {

std::filesystem::path temp_dir() {
  const auto d = std::filesystem::temp_directory_path() / "priorscale_cli_test";
  std::filesystem::create_directories(d);
  return d;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string error_of(const std::vector<std::string>& argv, std::string_view config = {},
                     const EnvMap& env = {}) {
  try {
    parse_args(argv, config, env);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ParseArgs, BasicInvocationUsesDefaults) {
  const auto inv = parse_args(
      {"--input", "a.png", "--prompt", "a cat", "--scale", "4", "--backend", "mock", "--output", "b.png"});
  EXPECT_EQ(inv.input_path, "a.png");
  EXPECT_EQ(inv.output_path, "b.png");
  EXPECT_EQ(inv.prompt, "a cat");
  EXPECT_EQ(inv.scale, 4);
  EXPECT_EQ(inv.backend, Backend::mock);
  EXPECT_EQ(inv.config.noise_fraction, 0.45);
  EXPECT_EQ(inv.config.gsp.step_size, 0.2);
  EXPECT_EQ(inv.config.gsp.kind, GspKind::cosine);
  EXPECT_EQ(inv.config.default_steps, 50);
  EXPECT_TRUE(inv.config.enable_gsp && inv.config.enable_rap && inv.config.enable_rsp);
}

TEST(ParseArgs, ScaleAndDimsAreExclusive) {
  const std::string msg =
      error_of({"--input", "a.png", "--prompt", "p", "--output", "b.png", "--scale", "4", "--width", "512"});
  EXPECT_NE(msg.find("--scale"), std::string::npos);
  EXPECT_NE(msg.find("--width"), std::string::npos);
  const std::string cfg = error_of({}, "input = a\noutput = b\nprompt = p\nscale = 2\nheight = 64\n");
  EXPECT_NE(cfg.find("'scale'"), std::string::npos);
  EXPECT_NE(cfg.find("'height'"), std::string::npos);
}

TEST(ParseArgs, ValidationErrorsNameTheFlag) {
  EXPECT_NE(error_of({"--prompt", "p", "--output", "b", "--scale", "2"}).find("--input"),
            std::string::npos);
  EXPECT_NE(error_of({"--input", "a", "--prompt", "p", "--output", "b", "--scale", "5"}).find("--scale"),
            std::string::npos);
  EXPECT_NE(error_of({"--input", "a", "--prompt", "p", "--output", "b", "--scale", "2", "--backend", "gpu"})
                .find("unknown backend"),
            std::string::npos);
  EXPECT_NE(error_of({"--input", "a", "--prompt", "p", "--output", "b", "--width", "64"}).find("--height"),
            std::string::npos);
  EXPECT_NE(error_of({"--input", "a", "--prompt", "p", "--output", "b", "--scale", "2", "--seed", "x"})
                .find("--seed"),
            std::string::npos);
  EXPECT_NE(error_of({"--input", "a", "--prompt", "p", "--output", "b", "--scale", "2",
                      "--gsp-schedule", "exp"})
                .find("--gsp-schedule"),
            std::string::npos);
  EXPECT_FALSE(error_of({"--bogus"}).empty());
  EXPECT_NE(error_of({}, "colour = red\n").find("colour"), std::string::npos);
}

TEST(ParseArgs, ConfigFileEqualsFlagForm) {
  const std::vector<std::string> flags{
      "--input", "in.png", "--output", "out.png", "--prompt", "a misty harbour at dawn",
      "--width", "1024", "--height", "768", "--backend", "diffusion-service",
      "--noise-fraction", "0.3", "--default-steps", "20", "--gsp-step", "0.1",
      "--gsp-schedule", "linear_decreasing", "--wavelet-levels", "2", "--region-size", "64",
      "--overlap", "32", "--guidance-scale", "5", "--seed", "99", "--enable-gsp", "false",
      "--enable-rap", "true", "--enable-rsp", "false", "--caption-concurrency", "2",
      "--denoise-concurrency", "3", "--dump-dir", "dump", "--cache-path", "cache.jsonl",
      "--verbosity", "1", "--denoiser-url", "http://127.0.0.1:9000", "--captioner-url",
      "http://127.0.0.1:9001", "--captioner-model", "llava", "--timeout-ms", "1500"};
  const std::string config = R"(# reproduction recipe
input = in.png
output = out.png
prompt = "a misty harbour at dawn"
width = 1024
height = 768
backend = diffusion-service
noise_fraction = 0.3
default_steps = 20
gsp_step = 0.1
gsp_schedule = linear_decreasing
wavelet_levels = 2
region_size = 64
overlap = 32
guidance_scale = 5
seed = 99
enable_gsp = false
enable_rap = true
enable_rsp = false
caption_concurrency = 2
denoise_concurrency = 3
dump_dir = dump
cache_path = cache.jsonl
verbosity = 1
denoiser_url = http://127.0.0.1:9000
captioner_url = http://127.0.0.1:9001
captioner_model = llava
timeout_ms = 1500
)";
  const auto from_flags = parse_args(flags);
  const auto from_file = parse_args({}, config);
  EXPECT_EQ(from_flags, from_file);
  EXPECT_EQ(from_file.config.gsp.kind, GspKind::linear_decreasing);
  EXPECT_EQ(from_file.config.dump_dir, std::filesystem::path("dump"));
  EXPECT_FALSE(from_file.config.enable_gsp);
  EXPECT_EQ(from_file.width, 1024);
}

TEST(ParseArgs, PrecedenceFileThenEnvThenFlags) {
  const std::string config = "input = a.png\noutput = b.png\nprompt = p\nscale = 2\nseed = 1\n"
                             "guidance_scale = 3\ndefault_steps = 10\n";
  const EnvMap env{{"PRIORSCALE_SEED", "2"}, {"PRIORSCALE_GUIDANCE_SCALE", "4"},
                   {"PRIORSCALE_UNRELATED", "x"}};
  const auto inv = parse_args({"--seed", "3"}, config, env);
  EXPECT_EQ(inv.config.seed, 3u);
  EXPECT_EQ(inv.config.guidance_scale, 4.0);
  EXPECT_EQ(inv.config.default_steps, 10);
  // A later source choosing explicit dims replaces an earlier scale.
  const auto dims = parse_args({"--width", "64", "--height", "64"}, config);
  EXPECT_FALSE(dims.scale.has_value());
  EXPECT_EQ(dims.width, 64);
}

TEST(ParseArgs, ShortcutsAndHelp) {
  const auto inv = parse_args({"--input", "a", "--prompt", "p", "--output", "b", "--scale", "8",
                               "--no-gsp", "--no-rsp", "-v"});
  EXPECT_FALSE(inv.config.enable_gsp);
  EXPECT_FALSE(inv.config.enable_rsp);
  EXPECT_TRUE(inv.config.enable_rap);
  EXPECT_EQ(inv.verbosity, 1);
  EXPECT_FALSE(error_of({"--input", "a", "--prompt", "p", "--output", "b", "--scale", "8", "--no-gsp",
                         "--enable-gsp", "true"})
                   .empty());
  const auto help = parse_args({"--help"});
  EXPECT_TRUE(help.show_help);
  EXPECT_NE(help.help_text.find("--noise-fraction"), std::string::npos);
}

TEST(ConfigPath, FlagThenEnvironment) {
  EXPECT_EQ(config_path({"--config", "a.cfg"}, {{"PRIORSCALE_CONFIG", "b.cfg"}}), "a.cfg");
  EXPECT_EQ(config_path({"--config=c.cfg"}, {}), "c.cfg");
  EXPECT_EQ(config_path({}, {{"PRIORSCALE_CONFIG", "b.cfg"}}), "b.cfg");
  EXPECT_FALSE(config_path({}, {}).has_value());
}

TEST(Run, MockEndToEndWritesTargetSize) {
  const auto dir = temp_dir();
  write_png(dir / "in.png", testing_support::test_image(128, 128));
  const auto out = dir / "out.png";
  std::filesystem::remove(out);
  const auto inv = parse_args({"--input", (dir / "in.png").string(), "--prompt", "a cat", "--scale",
                               "4", "--output", out.string()});
  EXPECT_EQ(run(inv), 0);
  const Image img = read_png(out);
  EXPECT_EQ(img.shape(), (Shape{3, 512, 512}));
}

TEST(Run, SameSeedIsByteIdentical) {
  const auto dir = temp_dir();
  write_png(dir / "in.png", testing_support::test_image(64, 64));
  auto go = [&](const std::string& name, const std::string& seed) {
    const auto out = dir / name;
    EXPECT_EQ(run(parse_args({"--input", (dir / "in.png").string(), "--prompt", "a cat", "--scale",
                              "2", "--seed", seed, "--output", out.string()})),
              0);
    return read_bytes(out);
  };
  const std::string a = go("a.png", "7");
  EXPECT_EQ(a, go("b.png", "7"));
  EXPECT_NE(a, go("c.png", "8"));
}

TEST(Run, UnreadableInputExitsOneWithoutOutput) {
  const auto dir = temp_dir();
  const auto out = dir / "never.png";
  std::filesystem::remove(out);
  EXPECT_EQ(run(parse_args({"--input", (dir / "missing.png").string(), "--prompt", "p", "--scale", "2",
                            "--output", out.string()})),
            1);
  EXPECT_FALSE(std::filesystem::exists(out));
}

TEST(Run, ConfigurationErrorExitsOne) {
  const auto dir = temp_dir();
  write_png(dir / "odd.png", testing_support::test_image(60, 60));
  const auto out = dir / "odd_out.png";
  std::filesystem::remove(out);
  EXPECT_EQ(run(parse_args({"--input", (dir / "odd.png").string(), "--prompt", "p", "--scale", "2",
                            "--output", out.string()})),
            1);
  EXPECT_FALSE(std::filesystem::exists(out));
  write_png(dir / "in.png", testing_support::test_image(64, 64));
  EXPECT_EQ(run(parse_args({"--input", (dir / "in.png").string(), "--prompt", "p", "--scale", "2",
                            "--backend", "diffusion-service", "--output", out.string()})),
            1);
}

TEST(Run, UnreachableServiceExitsTwo) {
  const auto dir = temp_dir();
  write_png(dir / "in.png", testing_support::test_image(64, 64));
  const auto out = dir / "svc_out.png";
  std::filesystem::remove(out);
  EXPECT_EQ(run(parse_args({"--input", (dir / "in.png").string(), "--prompt", "p", "--scale", "2",
                            "--backend", "diffusion-service", "--denoiser-url", "http://127.0.0.1:1",
                            "--timeout-ms", "200", "--no-rsp", "--output", out.string()})),
            2);
  EXPECT_FALSE(std::filesystem::exists(out));
}

TEST(Run, PromptCacheFileIsReused) {
  const auto dir = temp_dir();
  write_png(dir / "in.png", testing_support::test_image(64, 64));
  const auto cache = dir / "prompts.jsonl";
  std::filesystem::remove(cache);
  const auto inv = parse_args({"--input", (dir / "in.png").string(), "--prompt", "p", "--scale", "4",
                               "--cache-path", cache.string(), "--output", (dir / "cached.png").string()});
  EXPECT_EQ(run(inv), 0);
  const auto size = std::filesystem::file_size(cache);
  EXPECT_GT(size, 0u);
  EXPECT_EQ(run(inv), 0);
  EXPECT_EQ(std::filesystem::file_size(cache), size);
}
