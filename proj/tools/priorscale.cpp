#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "priorscale/cli.hpp"

extern char** environ;

int main(int argc, char** argv) {
  using namespace priorscale;
  cli::EnvMap env;
  for (char** e = environ; *e != nullptr; ++e) {
    const char* eq = std::strchr(*e, '=');
    if (eq == nullptr || std::strncmp(*e, "PRIORSCALE_", 11) != 0) continue;
    env.emplace(std::string(*e, static_cast<std::size_t>(eq - *e)), std::string(eq + 1));
  }
  const std::vector<std::string> args(argv + 1, argv + argc);

  std::string config_text;
  if (auto path = cli::config_path(args, env)) {
    std::ifstream in(*path);
    if (!in) {
      std::cerr << "error: cannot read config file " << path->string() << '\n';
      return 1;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    config_text = buf.str();
  }

  cli::CliInvocation inv;
  try {
    inv = cli::parse_args(args, config_text, env);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return cli::run(inv);
}
