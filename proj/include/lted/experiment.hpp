#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lted/dqn.hpp"
#include "lted/federated.hpp"
#include "lted/policies.hpp"
#include "lted/timing.hpp"

namespace lted {

struct Diagnostic {
  std::string path;  // e.g. "devices[1].beta"
  int line = 0;      // 1-based, 0 when unknown
  int column = 0;
  std::string message;
};

std::string format_diagnostic(const std::string& file, const Diagnostic& d);

struct ExperimentConfig {
  std::string scenario = "default";
  std::uint64_t seed = 1;
  std::optional<std::string> output;
  std::vector<DeviceConfig> devices;
  SceneConfig scene;
  ChannelConfig channel;
  TrainerConfig trainer;
  NormalizationConfig normalization;
  FederationConfig federation;
  bool compare_individual = false;  // also train the no-aggregation ablation
  bool shared_edge = true;
  BaselineParams baselines;
  std::vector<std::string> policies;  // empty: every baseline

  /// Builds the simulated world; scene and device seeds follow `seed`.
  World world() const;
};

struct ParseResult {
  ExperimentConfig config;
  std::vector<Diagnostic> diagnostics;  // empty when the config is usable
};

/// Parses and fully checks a YAML config. Missing sections take the built-in
/// defaults. Each problem found becomes one diagnostic. `seed` replaces the
/// top-level seed; explicit `trainer.seed` / `scene.seed` values still win.
ParseResult parse_config(const std::string& text,
                         std::optional<std::uint64_t> seed = std::nullopt);

/// Reads and parses `path`. Throws InputError if the file cannot be read.
ParseResult load_config(const std::filesystem::path& path,
                        std::optional<std::uint64_t> seed = std::nullopt);

enum class Verb { kValidate, kTrainSingle, kTrainFederated, kInfer, kCompareBaselines };

struct RunOptions {
  Verb verb = Verb::kValidate;
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::vector<std::string>> policies;
  std::optional<std::filesystem::path> checkpoint;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntimeError = 1;
inline constexpr int kExitValidation = 2;

/// Executes one verb. Progress and the summary table go to `out`,
/// diagnostics and errors to `err`. Returns the process exit status.
int run(const RunOptions& options, std::ostream& out, std::ostream& err);

}  // namespace lted
