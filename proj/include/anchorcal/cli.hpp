#pragma once

// Command-line driver: run configuration, the staged commands, and the
// mapping from errors to exit codes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "anchorcal/error.hpp"
#include "anchorcal/optimizer.hpp"
#include "anchorcal/synthdet.hpp"

namespace anchorcal::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInvalidConfig = 2,
  kIoError = 3,
  kNoFeatures = 4,
  kDimensionMismatch = 5,
};

int exit_code(ErrorKind kind) noexcept;

/// A domain is either described (and generated) or loaded from a cache
/// manifest written by `gen`.
struct DomainInput {
  std::optional<SyntheticDomain> spec;
  std::size_t frames = 0;
  std::optional<fs::path> cache;
};

struct RunConfig {
  DomainInput source;
  DomainInput target;
  /// Anchor the frozen detector was trained with; defaults to the source
  /// domain's mean size.
  std::optional<AnchorSizes> detector_anchor;
  SurrogateConfig surrogate;
  CalibrationSettings settings;
  fs::path out_dir = "out";
  /// Every stochastic stage derives its seed from this one.
  std::uint64_t seed = 0;

  void validate() const;
};

struct Overrides {
  std::optional<fs::path> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<double> tau;
};

/// Relative paths inside the document resolve against base_dir. Throws
/// InvalidConfig naming the field, or Io when a referenced file is missing.
RunConfig parse_config(const std::string& text, const fs::path& base_dir,
                       const Overrides& overrides = {});
RunConfig load_config(const fs::path& path, const Overrides& overrides = {});

/// Stage outputs inside RunConfig::out_dir.
struct Layout {
  fs::path dir;
  fs::path source_manifest() const { return dir / "source.json"; }
  fs::path target_manifest() const { return dir / "target.json"; }
  fs::path reference() const { return dir / "reference.sfdb"; }
  fs::path gmm() const { return dir / "gmm.json"; }
  fs::path sweep_curve(Axis axis) const;
  fs::path result() const { return dir / "calibration.json"; }
  fs::path trace() const { return dir / "de_trace.csv"; }
  fs::path report() const { return dir / "report.txt"; }
};

// Each command reads earlier stages' outputs from the out dir when present
// and computes them otherwise. They throw Error; run() maps it to an exit code.
void cmd_gen(const RunConfig& cfg, std::ostream& log);
void cmd_refdb(const RunConfig& cfg, std::ostream& log);
void cmd_fit(const RunConfig& cfg, std::ostream& log);
void cmd_sweep(const RunConfig& cfg, std::ostream& log);
void cmd_calibrate(const RunConfig& cfg, std::ostream& log);
void cmd_report(const RunConfig& cfg, std::ostream& log);

/// Full command line, argv[0] included. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace anchorcal::cli
