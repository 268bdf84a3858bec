#pragma once

// Anchor-size search: per-axis linear sweep for initialization, then joint
// differential evolution (best/1 mutation, binomial crossover) maximizing
// the target fitness.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "anchorcal/core.hpp"
#include "anchorcal/extractor.hpp"
#include "anchorcal/gmm.hpp"

namespace anchorcal {

/// Fitness over anchor sizes, evaluated in batches. Returns -inf where a
/// candidate produced no features. The wrapped function must be safe to
/// call concurrently when threads > 1; results are collected by index, so
/// the thread count never changes them.
class Objective {
 public:
  using Function = std::function<double(const AnchorSizes&)>;

  explicit Objective(Function fn, std::size_t threads = 1);

  std::vector<double> evaluate(std::span<const AnchorSizes> candidates);
  double evaluate(const AnchorSizes& candidate);
  std::size_t evaluations() const noexcept { return evaluations_; }

 private:
  Function fn_;
  std::size_t threads_;
  std::size_t evaluations_ = 0;
};

struct SweepConfig {
  Axis axis = Axis::W;
  double relative_range = 0.5;  // grid spans source * (1 +- relative_range)
  std::size_t steps = 21;

  void validate() const;
  /// Grid values for a given source size, ascending.
  std::vector<double> grid(double source_value) const;
};

std::vector<SweepConfig> default_sweeps();

struct SweepPoint {
  double value = 0.0;
  double fitness = 0.0;

  friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

struct SweepCurve {
  Axis axis = Axis::W;
  std::vector<SweepPoint> points;

  friend bool operator==(const SweepCurve&, const SweepCurve&) = default;
};

struct SweepResult {
  AnchorSizes initial;
  std::vector<SweepCurve> curves;
};

/// Sweeps each configured axis with the other two held at the source sizes
/// and assembles the per-axis winners. Ties go to the value nearest the
/// source. Throws EvaluationFailed when an axis has no finite point.
SweepResult linear_sweep(Objective& objective, const AnchorSizes& source,
                         std::span<const SweepConfig> configs);

/// Winner selection on already evaluated curves (used when curves are reloaded).
AnchorSizes sweep_initial_candidate(const AnchorSizes& source, std::span<const SweepCurve> curves);

struct DeConfig {
  std::size_t population = 16;
  double eta = 0.7;
  double crossover_rate = 0.7;
  double init_range = 0.3;
  std::size_t max_iters = 200;
  double stall_tolerance = 1e-6;
  std::size_t stall_generations = 25;
  std::uint64_t seed = 0;
  double size_floor = kDefaultSizeFloor;

  void validate() const;
};

enum class Termination { Converged, MaxIters };

std::string_view to_string(Termination t) noexcept;
Termination parse_termination(std::string_view s);

struct DeResult {
  AnchorSizes best;
  double best_fitness = 0.0;
  /// Best-so-far fitness after initialization and after every generation.
  std::vector<double> trace;
  Termination termination = Termination::MaxIters;
  std::size_t generations = 0;
  /// Fitness of the source sizes, which seed the population alongside the
  /// initial candidate.
  double source_fitness = 0.0;
};

/// Population: the initial candidate, the source sizes, and Np - 2 members
/// drawn uniformly within source * (1 +- init_range). Each generation builds
/// every trial from the generation's best member, then selects greedily.
DeResult differential_evolution(Objective& objective, const AnchorSizes& init_candidate,
                                const AnchorSizes& source, const DeConfig& cfg);

struct CalibrationResult {
  AnchorSizes calibrated;
  AnchorSizes source;
  double calibrated_fitness = 0.0;
  double source_fitness = 0.0;
  AnchorSizes initial_candidate;
  std::vector<SweepCurve> sweep_curves;
  std::vector<double> de_trace;
  Termination termination = Termination::MaxIters;
  std::size_t generations = 0;
  std::size_t evaluations = 0;

  friend bool operator==(const CalibrationResult&, const CalibrationResult&) = default;
};

/// Sweep (unless curves are supplied) followed by DE. evaluations counts
/// every objective call made here.
CalibrationResult optimize_anchors(Objective& objective, const AnchorSizes& source,
                                   std::span<const SweepConfig> sweeps, const DeConfig& de,
                                   std::optional<std::vector<SweepCurve>> cached_curves = {});

/// Fitness of target features under `model`; -inf when fewer than
/// gate.min_target_features survive the gate.
Objective::Function target_fitness_function(const FeatureExtractor& target,
                                            std::vector<FrameId> frames, GateConfig gate,
                                            const Gmm& model);

struct CalibrationSettings {
  GateConfig gate;
  EmConfig em;
  std::vector<SweepConfig> sweeps = default_sweeps();
  DeConfig de;
  std::size_t threads = 1;
};

struct CalibrationReport {
  FeatureDatabase reference;
  Gmm model;
  CalibrationResult result;
};

/// The whole pipeline: reference database, GMM fit, sweep, DE.
CalibrationReport calibrate(const FeatureExtractor& source, const FeatureExtractor& target,
                            std::span<const FrameId> source_frames,
                            std::span<const FrameId> target_frames,
                            const CalibrationSettings& settings);

}  // namespace anchorcal
