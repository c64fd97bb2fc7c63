#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vaelab/experiment.hpp"

namespace {

int fail(int code, const std::string& message) {
  nlohmann::json err;
  err["code"] = code;
  err["error"] = message;
  std::cerr << err.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vaelab: constrained-VAE numerical experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_root;
  if (const char* env = std::getenv("VAELAB_OUTPUT_ROOT")) output_root = env;

  auto* run_cmd = app.add_subcommand("run", "execute an experiment config");
  run_cmd->add_option("config", config_path, "config file (JSON)")->required();
  run_cmd->add_option("--output-root", output_root,
                      "directory prepended to the config's output_dir "
                      "(overrides VAELAB_OUTPUT_ROOT)");

  auto* validate_cmd = app.add_subcommand("validate", "check a config without running");
  validate_cmd->add_option("config", config_path, "config file (JSON)")->required();

  auto* version_cmd = app.add_subcommand("version", "print the tool version");

  CLI11_PARSE(app, argc, argv);

  if (version_cmd->parsed()) {
    std::cout << vaelab::experiment::kVersion << "\n";
    return 0;
  }

  if (validate_cmd->parsed()) {
    try {
      const auto diagnostics = vaelab::experiment::validate_file(config_path);
      for (const auto& d : diagnostics)
        std::cout << d.field << ": " << d.message << "\n";
      if (diagnostics.empty()) {
        std::cout << "ok\n";
        return 0;
      }
      return vaelab::experiment::kInvalidConfig;
    } catch (const vaelab::experiment::RunError& e) {
      return fail(e.code, e.what());
    } catch (const std::exception& e) {
      return fail(vaelab::experiment::kExecutionFailure, e.what());
    }
  }

  try {
    const auto manifest = vaelab::experiment::run(config_path, output_root);
    std::cout << manifest.to_json().dump(2) << "\n";
    return 0;
  } catch (const vaelab::experiment::RunError& e) {
    return fail(e.code, e.what());
  } catch (const std::exception& e) {
    return fail(vaelab::experiment::kExecutionFailure, e.what());
  }
}
