#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "harch/cli.hpp"

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("harch"));
  spdlog::cfg::load_env_levels();
  return harch::cli::dispatch(argc, argv);
}
