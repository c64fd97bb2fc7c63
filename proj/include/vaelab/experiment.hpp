#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace vaelab::experiment {

inline constexpr const char* kVersion = "0.1.0";

// exit codes shared with the CLI
inline constexpr int kOk = 0;
inline constexpr int kInvalidConfig = 2;
inline constexpr int kUnknownKind = 3;
inline constexpr int kUnwritableOutput = 4;
inline constexpr int kExecutionFailure = 5;

struct RunError : std::runtime_error {
  int code;
  RunError(int code_, const std::string& msg) : std::runtime_error(msg), code(code_) {}
};

struct Diagnostic {
  std::string field;
  std::string message;
};

/// Parses the JSON config file; throws RunError(kInvalidConfig) with the
/// parser's position info on failure.
nlohmann::json load_config(const std::string& path);

/// Schema and range checks without executing. Empty result means valid.
std::vector<Diagnostic> validate(const nlohmann::json& config);
std::vector<Diagnostic> validate_file(const std::string& path);

struct RunManifest {
  struct FileEntry {
    std::string name;
    std::string sha256;
    std::uint64_t bytes = 0;
  };
  std::string config_hash;  // sha256 of the raw config bytes
  std::vector<FileEntry> files;
  double wall_seconds = 0.0;
  std::string version;
  nlohmann::json summary;

  nlohmann::json to_json() const;
};

/// Executes the experiment named by the config and writes its artifacts plus
/// manifest.json into the output directory. output_root, when nonempty, is
/// prepended to the config's output_dir. Deterministic: identical config and
/// seed give byte-identical data files.
RunManifest run(const std::string& config_path, const std::string& output_root = "");

}  // namespace vaelab::experiment
