#include "anchorcal/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "anchorcal/error.hpp"
#include "anchorcal/parallel.hpp"
#include "anchorcal/random.hpp"

namespace anchorcal {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double sanitize(double f) { return std::isnan(f) ? kNegInf : f; }

}  // namespace

Objective::Objective(Function fn, std::size_t threads) : fn_(std::move(fn)), threads_(threads) {}

std::vector<double> Objective::evaluate(std::span<const AnchorSizes> candidates) {
  std::vector<double> out(candidates.size());
  parallel_for(candidates.size(), threads_,
               [&](std::size_t i) { out[i] = sanitize(fn_(candidates[i])); });
  evaluations_ += candidates.size();
  return out;
}

double Objective::evaluate(const AnchorSizes& candidate) {
  ++evaluations_;
  return sanitize(fn_(candidate));
}

void SweepConfig::validate() const {
  if (steps < 2 || !(relative_range > 0.0 && relative_range < 1.0)) {
    throw Error(ErrorKind::InvalidConfig,
                "sweep.steps must be >= 2 and sweep.relative_range in (0, 1)");
  }
}

std::vector<double> SweepConfig::grid(double source_value) const {
  std::vector<double> out(steps);
  const auto last = static_cast<double>(steps - 1);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = 1.0 - relative_range + 2.0 * relative_range * static_cast<double>(i) / last;
    out[i] = source_value * frac;
  }
  return out;
}

std::vector<SweepConfig> default_sweeps() {
  return {{Axis::W, 0.5, 21}, {Axis::L, 0.5, 21}, {Axis::H, 0.5, 21}};
}

AnchorSizes sweep_initial_candidate(const AnchorSizes& source, std::span<const SweepCurve> curves) {
  AnchorSizes initial = source;
  for (const auto& curve : curves) {
    const double src = source[curve.axis];
    const SweepPoint* best = nullptr;
    for (const auto& p : curve.points) {
      if (!std::isfinite(p.fitness)) continue;
      if (best == nullptr || p.fitness > best->fitness ||
          (p.fitness == best->fitness &&
           std::fabs(p.value - src) < std::fabs(best->value - src))) {
        best = &p;
      }
    }
    if (best == nullptr) {
      throw Error(ErrorKind::EvaluationFailed,
                  "every sweep point on axis " + std::string(axis_name(curve.axis)) +
                      " produced no features; the threshold is too high or the domain is empty");
    }
    initial = initial.with(curve.axis, best->value);
  }
  return initial;
}

SweepResult linear_sweep(Objective& objective, const AnchorSizes& source,
                         std::span<const SweepConfig> configs) {
  std::vector<AnchorSizes> candidates;
  std::vector<std::vector<double>> grids;
  for (const auto& cfg : configs) {
    cfg.validate();
    grids.push_back(cfg.grid(source[cfg.axis]));
    for (double v : grids.back()) {
      candidates.push_back(source.with(cfg.axis, v));
    }
  }
  const auto fitness = objective.evaluate(candidates);

  SweepResult result{source, {}};
  std::size_t k = 0;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    SweepCurve curve{configs[c].axis, {}};
    for (double v : grids[c]) {
      curve.points.push_back({v, fitness[k++]});
    }
    result.curves.push_back(std::move(curve));
  }
  result.initial = sweep_initial_candidate(source, result.curves);
  return result;
}

void DeConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, msg);
  };
  require(population >= 4, "de.population must be >= 4");
  require(eta > 0.0 && std::isfinite(eta), "de.eta must be > 0");
  require(crossover_rate >= 0.0 && crossover_rate <= 1.0, "de.crossover_rate must lie in [0, 1]");
  require(init_range > 0.0 && init_range < 1.0, "de.init_range must lie in (0, 1)");
  require(max_iters >= 1, "de.max_iters must be >= 1");
  require(stall_tolerance >= 0.0, "de.stall_tolerance must be >= 0");
  require(stall_generations >= 1, "de.stall_generations must be >= 1");
  require(size_floor > 0.0, "de.size_floor must be > 0");
}

std::string_view to_string(Termination t) noexcept {
  return t == Termination::Converged ? "converged" : "max_iters";
}

Termination parse_termination(std::string_view s) {
  if (s == "converged") return Termination::Converged;
  if (s == "max_iters") return Termination::MaxIters;
  throw Error(ErrorKind::InvalidArgument, "unknown termination '" + std::string(s) + "'");
}

DeResult differential_evolution(Objective& objective, const AnchorSizes& init_candidate,
                                const AnchorSizes& source, const DeConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t np = cfg.population;

  std::vector<AnchorSizes> population;
  population.reserve(np);
  population.push_back(init_candidate);
  population.push_back(source);
  while (population.size() < np) {
    std::array<double, 3> v{};
    for (int a = 0; a < 3; ++a) {
      const double s = source.values()[a];
      v[a] = std::max(cfg.size_floor,
                      uniform(rng, s * (1.0 - cfg.init_range), s * (1.0 + cfg.init_range)));
    }
    population.emplace_back(v[0], v[1], v[2]);
  }
  std::vector<double> fitness = objective.evaluate(population);

  auto best_index = [&] {
    return static_cast<std::size_t>(std::max_element(fitness.begin(), fitness.end()) -
                                    fitness.begin());
  };
  std::size_t best = best_index();
  if (!std::isfinite(fitness[best])) {
    throw Error(ErrorKind::EvaluationFailed,
                "no initial DE member produced features; check the gate threshold");
  }

  DeResult result{population[best], fitness[best], {fitness[best]}, Termination::MaxIters, 0,
                  fitness[1]};
  std::size_t stalled = 0;
  std::vector<AnchorSizes> trials;
  trials.reserve(np);
  std::vector<std::size_t> pool;
  pool.reserve(np);

  for (std::size_t gen = 1; gen <= cfg.max_iters; ++gen) {
    trials.clear();
    const AnchorSizes& base = population[best];
    for (std::size_t i = 0; i < np; ++i) {
      pool.clear();
      for (std::size_t j = 0; j < np; ++j) {
        if (j != best && j != i) pool.push_back(j);
      }
      const std::size_t a = static_cast<std::size_t>(uniform_index(rng, pool.size()));
      const std::size_t r1 = pool[a];
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(a));
      const std::size_t r2 = pool[uniform_index(rng, pool.size())];

      const auto& x1 = population[r1].values();
      const auto& x2 = population[r2].values();
      const SizePerturbation step{cfg.eta * (x1[0] - x2[0]), cfg.eta * (x1[1] - x2[1]),
                                  cfg.eta * (x1[2] - x2[2])};
      const auto mutant = apply_perturbation(base, step, cfg.size_floor).sizes.values();

      const auto& parent = population[i].values();
      const auto forced = static_cast<int>(uniform_index(rng, 3));
      std::array<double, 3> t{};
      for (int d = 0; d < 3; ++d) {
        const bool take = uniform01(rng) < cfg.crossover_rate || d == forced;
        t[d] = take ? mutant[d] : parent[d];
      }
      trials.emplace_back(t[0], t[1], t[2]);
    }
    const auto trial_fitness = objective.evaluate(trials);
    for (std::size_t i = 0; i < np; ++i) {
      if (trial_fitness[i] > fitness[i]) {
        population[i] = trials[i];
        fitness[i] = trial_fitness[i];
      }
    }
    best = best_index();
    const double improvement = fitness[best] - result.best_fitness;
    result.best = population[best];
    result.best_fitness = fitness[best];
    result.trace.push_back(result.best_fitness);
    result.generations = gen;

    stalled = improvement < cfg.stall_tolerance ? stalled + 1 : 0;
    if (stalled >= cfg.stall_generations) {
      result.termination = Termination::Converged;
      break;
    }
  }
  return result;
}

CalibrationResult optimize_anchors(Objective& objective, const AnchorSizes& source,
                                   std::span<const SweepConfig> sweeps, const DeConfig& de,
                                   std::optional<std::vector<SweepCurve>> cached_curves) {
  const std::size_t before = objective.evaluations();
  std::vector<SweepCurve> curves;
  AnchorSizes initial = source;
  if (cached_curves) {
    curves = std::move(*cached_curves);
    initial = sweep_initial_candidate(source, curves);
  } else {
    auto sweep = linear_sweep(objective, source, sweeps);
    curves = std::move(sweep.curves);
    initial = sweep.initial;
  }
  const DeResult de_result = differential_evolution(objective, initial, source, de);

  CalibrationResult result{de_result.best,
                           source,
                           de_result.best_fitness,
                           de_result.source_fitness,
                           initial,
                           std::move(curves),
                           de_result.trace,
                           de_result.termination,
                           de_result.generations,
                           objective.evaluations() - before};
  if (!(result.calibrated_fitness >= result.source_fitness)) {
    throw Error(ErrorKind::EvaluationFailed, "calibrated fitness fell below the source fitness");
  }
  return result;
}

Objective::Function target_fitness_function(const FeatureExtractor& target,
                                            std::vector<FrameId> frames, GateConfig gate,
                                            const Gmm& model) {
  if (target.feature_dim() != model.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "target extractor and reference model differ in dimension");
  }
  return [&target, &model, frames = std::move(frames), gate](const AnchorSizes& sizes) {
    const FeatureDatabase db = build_target_db(target, frames, sizes, gate, 1);
    if (db.size() < gate.min_target_features) {
      return kNegInf;
    }
    return fitness(db, model, 1);
  };
}

CalibrationReport calibrate(const FeatureExtractor& source, const FeatureExtractor& target,
                            std::span<const FrameId> source_frames,
                            std::span<const FrameId> target_frames,
                            const CalibrationSettings& settings) {
  if (source.feature_dim() != target.feature_dim()) {
    throw Error(ErrorKind::DimensionMismatch, "source and target extractors differ in feature dimension");
  }
  settings.gate.validate();
  settings.em.validate();
  settings.de.validate();
  for (const auto& s : settings.sweeps) s.validate();

  FeatureDatabase reference =
      build_reference_db(source, source_frames, settings.gate, settings.threads);
  Gmm model = fit_em(reference, settings.em, settings.threads);
  Objective objective(
      target_fitness_function(target, {target_frames.begin(), target_frames.end()}, settings.gate,
                              model),
      settings.threads);
  CalibrationResult result =
      optimize_anchors(objective, source.source_anchor(), settings.sweeps, settings.de);
  return {std::move(reference), std::move(model), std::move(result)};
}

}  // namespace anchorcal
