#include "anchorcal/cli.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "anchorcal/io.hpp"
#include "anchorcal/random.hpp"
#include "json_util.hpp"

namespace anchorcal::cli {
namespace {

using detail::FieldReader;
using detail::json;

// Seed streams derived from the global seed.
enum SeedStream : std::uint64_t {
  kSourceSeed = 1,
  kTargetSeed = 2,
  kEmSeed = 3,
  kDeSeed = 4,
  kSubsetSeed = 5,
};

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() ? p : base / p;
}

DomainInput parse_domain(FieldReader r, const fs::path& base, const SyntheticDomain& defaults) {
  DomainInput in;
  if (r.has("cache")) {
    in.cache = resolve(base, r.string("cache"));
    r.finish();
    return in;
  }
  if (r.has("seed")) r.fail(r.field("seed"), "is not settable; seeds derive from the top-level seed");
  const auto frames = r.unsigned_int("frames");
  if (frames < 1) r.fail(r.field("frames"), "must be >= 1");
  in.frames = frames;
  in.spec = detail::domain_from(r, defaults);
  r.finish();
  return in;
}

void parse_gate(FieldReader r, GateConfig& g) {
  g.tau = r.number("tau", g.tau);
  if (r.has("max_features")) g.max_features = r.unsigned_int("max_features");
  g.min_target_features = r.unsigned_int("min_target_features", g.min_target_features);
  if (r.has("frame_fraction")) g.frame_subset = FrameSubset{r.number("frame_fraction"), 0};
  g.suppress_size_residuals_in_reference =
      r.boolean("suppress_size_residuals_in_reference", g.suppress_size_residuals_in_reference);
  r.finish();
  r.validate([&] { g.validate(); });
}

void parse_em(FieldReader r, EmConfig& e) {
  e.k = r.unsigned_int("k", e.k);
  e.max_iters = r.unsigned_int("max_iters", e.max_iters);
  e.ll_tolerance = r.number("ll_tolerance", e.ll_tolerance);
  e.restarts = r.unsigned_int("restarts", e.restarts);
  e.variance_floor = r.number("variance_floor", e.variance_floor);
  e.seeding_subsample = r.unsigned_int("seeding_subsample", e.seeding_subsample);
  r.finish();
  r.validate([&] { e.validate(); });
}

std::vector<SweepConfig> parse_sweep(FieldReader r) {
  const SweepConfig defaults;
  const double range = r.number("relative_range", defaults.relative_range);
  const auto steps = r.unsigned_int("steps", defaults.steps);
  std::vector<Axis> axes{kAllAxes.begin(), kAllAxes.end()};
  if (r.has("axes")) {
    axes.clear();
    const json& a = r.raw("axes");
    if (!a.is_array() || a.empty()) r.fail(r.field("axes"), "must be a non-empty array of \"w\", \"l\", \"h\"");
    for (const auto& name : a) {
      if (!name.is_string()) r.fail(r.field("axes"), "must hold axis names");
      try {
        axes.push_back(parse_axis(name.get<std::string>()));
      } catch (const Error& e) {
        r.fail(r.field("axes"), e.what());
      }
      if (std::count(axes.begin(), axes.end(), axes.back()) > 1) r.fail(r.field("axes"), "repeats an axis");
    }
  }
  r.finish();
  std::vector<SweepConfig> out;
  for (Axis axis : axes) {
    SweepConfig s{axis, range, static_cast<std::size_t>(steps)};
    r.validate([&] { s.validate(); });
    out.push_back(s);
  }
  return out;
}

void parse_de(FieldReader r, DeConfig& d) {
  d.population = r.unsigned_int("population", d.population);
  d.eta = r.number("eta", d.eta);
  d.crossover_rate = r.number("crossover_rate", d.crossover_rate);
  d.init_range = r.number("init_range", d.init_range);
  d.max_iters = r.unsigned_int("max_iters", d.max_iters);
  d.stall_tolerance = r.number("stall_tolerance", d.stall_tolerance);
  d.stall_generations = r.unsigned_int("stall_generations", d.stall_generations);
  d.size_floor = r.number("size_floor", d.size_floor);
  r.finish();
  r.validate([&] { d.validate(); });
}

void apply_seed(RunConfig& cfg) {
  const auto s = cfg.seed;
  if (cfg.source.spec) cfg.source.spec->seed = mix_seed(s, kSourceSeed);
  if (cfg.target.spec) cfg.target.spec->seed = mix_seed(s, kTargetSeed);
  cfg.settings.em.seed = mix_seed(s, kEmSeed);
  cfg.settings.de.seed = mix_seed(s, kDeSeed);
  if (cfg.settings.gate.frame_subset) cfg.settings.gate.frame_subset->seed = mix_seed(s, kSubsetSeed);
}

// ---------------------------------------------------------------------------
// Stage plumbing

Layout layout(const RunConfig& cfg) { return Layout{cfg.out_dir}; }

void say(std::ostream& log, const std::string& line) { log << line << '\n'; }

std::string sizes_text(const AnchorSizes& s) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "(%.4f, %.4f, %.4f)", s.w(), s.l(), s.h());
  return buf;
}

/// Cached frames come from `gen` output first, then the configured cache,
/// and are generated otherwise. `anchor` is the detector's training anchor.
std::shared_ptr<const SyntheticExtractor> load_or_generate(const DomainInput& in, const fs::path& written,
                                                           std::optional<AnchorSizes> anchor,
                                                           const RunConfig& cfg) {
  std::shared_ptr<const SyntheticExtractor> d;
  if (fs::exists(written)) {
    d = io::read_domain_cache(written);
  } else if (in.cache) {
    d = io::read_domain_cache(*in.cache);
  } else {
    return generate_domain(*in.spec, in.frames, anchor.value_or(in.spec->mean_size), cfg.surrogate,
                           cfg.settings.threads);
  }
  if (anchor && d->source_anchor() != *anchor) d = d->with_anchor(*anchor);
  return d;
}

std::shared_ptr<const SyntheticExtractor> source_domain(const RunConfig& cfg) {
  return load_or_generate(cfg.source, layout(cfg).source_manifest(), cfg.detector_anchor, cfg);
}

/// The target is seen through the detector trained on the source.
std::shared_ptr<const SyntheticExtractor> target_domain(const RunConfig& cfg,
                                                        const SyntheticExtractor& source) {
  return load_or_generate(cfg.target, layout(cfg).target_manifest(), source.source_anchor(), cfg);
}

FeatureDatabase reference_db(const RunConfig& cfg, std::ostream& log) {
  const Layout out = layout(cfg);
  if (fs::exists(out.reference())) {
    auto db = io::read_sfdb(out.reference());
    say(log, "reusing " + out.reference().string() + " (" + std::to_string(db.size()) + " features)");
    return db;
  }
  auto src = source_domain(cfg);
  return build_reference_db(*src, src->frames(), cfg.settings.gate, cfg.settings.threads);
}

Gmm model(const RunConfig& cfg, std::ostream& log) {
  const Layout out = layout(cfg);
  if (fs::exists(out.gmm())) {
    say(log, "reusing " + out.gmm().string());
    return io::read_gmm(out.gmm());
  }
  const auto db = reference_db(cfg, log);
  return fit_em(db, cfg.settings.em, cfg.settings.threads);
}

void check_dims(const Gmm& gmm, const FeatureExtractor& target) {
  if (gmm.dim() != target.feature_dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                "GMM dimension " + std::to_string(gmm.dim()) + " does not match target feature dimension " +
                    std::to_string(target.feature_dim()));
  }
}

/// Stored curves are reused only when they were computed on the configured grid.
std::optional<std::vector<SweepCurve>> cached_curves(const RunConfig& cfg, const AnchorSizes& source) {
  const Layout out = layout(cfg);
  std::vector<SweepCurve> curves;
  for (const auto& s : cfg.settings.sweeps) {
    const auto path = out.sweep_curve(s.axis);
    if (!fs::exists(path)) return std::nullopt;
    auto curve = io::read_curve_csv(path, s.axis);
    const auto grid = s.grid(source[s.axis]);
    if (curve.points.size() != grid.size()) return std::nullopt;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (curve.points[i].value != grid[i]) return std::nullopt;
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

struct Pipeline {
  std::shared_ptr<const SyntheticExtractor> source;
  std::shared_ptr<const SyntheticExtractor> target;
  Gmm gmm;
};

Pipeline pipeline(const RunConfig& cfg, std::ostream& log) {
  auto src = source_domain(cfg);
  auto tgt = target_domain(cfg, *src);
  Gmm g = model(cfg, log);
  check_dims(g, *tgt);
  return {src, tgt, std::move(g)};
}

std::string report_text(const CalibrationResult& r, const SyntheticExtractor* target) {
  std::ostringstream ss;
  char buf[256];
  ss << "source sizes      " << sizes_text(r.source) << '\n';
  ss << "initial candidate " << sizes_text(r.initial_candidate) << '\n';
  ss << "calibrated sizes  " << sizes_text(r.calibrated) << '\n';
  std::snprintf(buf, sizeof(buf), "fitness           source %.6f, calibrated %.6f\n", r.source_fitness,
                r.calibrated_fitness);
  ss << buf;
  ss << "termination       " << to_string(r.termination) << " after " << r.generations
     << " generations, " << r.evaluations << " evaluations\n";
  for (const auto& c : r.sweep_curves) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < c.points.size(); ++i) {
      if (c.points[i].fitness > c.points[best].fitness) best = i;
    }
    std::snprintf(buf, sizeof(buf), "sweep %s           best %.4f (fitness %.6f)\n",
                  std::string(axis_name(c.axis)).c_str(), c.points[best].value, c.points[best].fitness);
    ss << buf;
  }
  if (target) {
    const auto& truth = target->domain().mean_size;
    ss << "target true mean  " << sizes_text(truth) << '\n';
    std::snprintf(buf, sizeof(buf), "relative error    source (%+.4f, %+.4f, %+.4f), calibrated (%+.4f, %+.4f, %+.4f)\n",
                  r.source.w() / truth.w() - 1.0, r.source.l() / truth.l() - 1.0,
                  r.source.h() / truth.h() - 1.0, r.calibrated.w() / truth.w() - 1.0,
                  r.calibrated.l() / truth.l() - 1.0, r.calibrated.h() / truth.h() - 1.0);
    ss << buf;
  }
  return ss.str();
}

}  // namespace

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidArgument:
    case ErrorKind::UnknownFrame: return kInvalidConfig;
    case ErrorKind::Io:
    case ErrorKind::NonFiniteInput: return kIoError;
    case ErrorKind::ZeroFeatures:
    case ErrorKind::InsufficientSamples:
    case ErrorKind::EvaluationFailed: return kNoFeatures;
    case ErrorKind::DimensionMismatch: return kDimensionMismatch;
  }
  return kFailure;
}

fs::path Layout::sweep_curve(Axis axis) const {
  return dir / ("sweep_" + std::string(axis_name(axis)) + ".csv");
}

void RunConfig::validate() const {
  auto check_domain = [](const DomainInput& d, const char* name) {
    if (d.cache) {
      if (!fs::exists(*d.cache)) {
        throw Error(ErrorKind::Io, std::string(name) + ".cache: " + d.cache->string() + " does not exist");
      }
      return;
    }
    if (!d.spec) throw Error(ErrorKind::InvalidConfig, std::string(name) + " is required");
    if (d.frames < 1) throw Error(ErrorKind::InvalidConfig, std::string(name) + ".frames must be >= 1");
    d.spec->validate();
  };
  check_domain(source, "source");
  check_domain(target, "target");
  surrogate.validate();
  settings.gate.validate();
  settings.em.validate();
  settings.de.validate();
  if (settings.sweeps.empty()) throw Error(ErrorKind::InvalidConfig, "sweep.axes must not be empty");
  for (const auto& s : settings.sweeps) s.validate();
  if (settings.threads < 1) throw Error(ErrorKind::InvalidConfig, "threads must be >= 1");
}

RunConfig parse_config(const std::string& text, const fs::path& base_dir, const Overrides& overrides) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  FieldReader r(doc, "", ErrorKind::InvalidConfig);
  RunConfig cfg;
  cfg.seed = r.unsigned_int("seed", 0);
  cfg.settings.threads = r.unsigned_int("threads", 1);
  if (r.has("out")) cfg.out_dir = resolve(base_dir, r.string("out"));
  if (r.has("detector_anchor")) cfg.detector_anchor = detail::sizes_from(r, "detector_anchor");

  SyntheticDomain source_defaults;
  source_defaults.name = "source";
  cfg.source = parse_domain(r.object("source"), base_dir, source_defaults);
  // Unset target fields inherit the source's, so a config states only the shift.
  SyntheticDomain target_defaults = cfg.source.spec.value_or(SyntheticDomain{});
  target_defaults.name = "target";
  cfg.target = parse_domain(r.object("target"), base_dir, target_defaults);

  if (r.has("surrogate")) {
    auto s = r.object("surrogate");
    cfg.surrogate.grid = s.unsigned_int("grid", cfg.surrogate.grid);
    cfg.surrogate.nms = s.boolean("nms", cfg.surrogate.nms);
    s.finish();
    s.validate([&] { cfg.surrogate.validate(); });
  }
  if (r.has("gate")) parse_gate(r.object("gate"), cfg.settings.gate);
  if (r.has("em")) parse_em(r.object("em"), cfg.settings.em);
  if (r.has("sweep")) cfg.settings.sweeps = parse_sweep(r.object("sweep"));
  if (r.has("de")) parse_de(r.object("de"), cfg.settings.de);
  r.finish();

  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.threads) cfg.settings.threads = *overrides.threads;
  if (overrides.tau) cfg.settings.gate.tau = *overrides.tau;
  apply_seed(cfg);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const fs::path& path, const Overrides& overrides) {
  if (!fs::exists(path)) throw Error(ErrorKind::Io, path.string() + ": config file does not exist");
  return parse_config(io::read_text(path), path.parent_path(), overrides);
}

void cmd_gen(const RunConfig& cfg, std::ostream& log) {
  const Layout out = layout(cfg);
  // Ignores earlier gen output so a re-run regenerates from the config.
  const fs::path none;
  auto src = load_or_generate(cfg.source, none, cfg.detector_anchor, cfg);
  auto tgt = load_or_generate(cfg.target, none, src->source_anchor(), cfg);
  io::write_domain_cache(out.dir, "source", *src);
  io::write_domain_cache(out.dir, "target", *tgt);
  say(log, "wrote " + out.source_manifest().string() + " (" + std::to_string(src->frames().size()) +
               " frames, " + std::to_string(src->object_count()) + " objects)");
  say(log, "wrote " + out.target_manifest().string() + " (" + std::to_string(tgt->frames().size()) +
               " frames, " + std::to_string(tgt->object_count()) + " objects)");
}

void cmd_refdb(const RunConfig& cfg, std::ostream& log) {
  const Layout out = layout(cfg);
  auto src = source_domain(cfg);
  const auto db = build_reference_db(*src, src->frames(), cfg.settings.gate, cfg.settings.threads);
  io::write_sfdb(out.reference(), db);
  say(log, "wrote " + out.reference().string() + " (" + std::to_string(db.size()) + " features, dim " +
               std::to_string(db.dim()) + ")");
}

void cmd_fit(const RunConfig& cfg, std::ostream& log) {
  const Layout out = layout(cfg);
  const auto db = reference_db(cfg, log);
  const auto fit = fit_em_detailed(db, cfg.settings.em, cfg.settings.threads);
  io::write_gmm(out.gmm(), fit.model);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "wrote %s (K=%zu, average log-likelihood %.6f)", out.gmm().string().c_str(),
                fit.model.components(), fit.final_average_ll);
  say(log, buf);
}

void cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  const Layout out = layout(cfg);
  auto p = pipeline(cfg, log);
  Objective objective(target_fitness_function(*p.target, p.target->frames(), cfg.settings.gate, p.gmm),
                      cfg.settings.threads);
  const auto sweep = linear_sweep(objective, p.target->source_anchor(), cfg.settings.sweeps);
  for (const auto& c : sweep.curves) {
    io::write_curve_csv(out.sweep_curve(c.axis), c);
    say(log, "wrote " + out.sweep_curve(c.axis).string());
  }
  say(log, "sweep candidate " + sizes_text(sweep.initial));
}

void cmd_calibrate(const RunConfig& cfg, std::ostream& log) {
  const Layout out = layout(cfg);
  auto p = pipeline(cfg, log);
  const AnchorSizes source = p.target->source_anchor();
  auto curves = cached_curves(cfg, source);
  if (curves) say(log, "reusing sweep curves from " + out.dir.string());
  Objective objective(target_fitness_function(*p.target, p.target->frames(), cfg.settings.gate, p.gmm),
                      cfg.settings.threads);
  const auto result = optimize_anchors(objective, source, cfg.settings.sweeps, cfg.settings.de, curves);
  for (const auto& c : result.sweep_curves) io::write_curve_csv(out.sweep_curve(c.axis), c);
  io::write_trace_csv(out.trace(), result.de_trace);
  io::write_result(out.result(), result);
  say(log, "wrote " + out.result().string());
  say(log, "calibrated sizes " + sizes_text(result.calibrated));
}

void cmd_report(const RunConfig& cfg, std::ostream& log) {
  const Layout out = layout(cfg);
  if (!fs::exists(out.result())) cmd_calibrate(cfg, log);
  const auto result = io::read_result(out.result());
  std::shared_ptr<const SyntheticExtractor> target;
  if (fs::exists(out.target_manifest())) target = io::read_domain_cache(out.target_manifest());
  else if (cfg.target.cache) target = io::read_domain_cache(*cfg.target.cache);
  const std::string text = report_text(result, target.get());
  io::write_text(out.report(), text);
  log << text;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Anchor-size calibration for a frozen detector on an unlabeled target domain"};
  app.require_subcommand(1);
  app.fallthrough();  // flags may follow the subcommand
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double tau = 0.0;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  auto* out_opt = app.add_option("--out", out_dir, "Output directory (overrides the config)");
  auto* seed_opt = app.add_option("--seed", seed, "Global seed (overrides the config)");
  auto* threads_opt =
      app.add_option("--threads", threads, "Worker threads; results do not depend on it")->check(CLI::Range(1, 1024));
  auto* tau_opt = app.add_option("--tau", tau, "Score gate threshold override")->check(CLI::Range(0.0, 1.0));

  using Command = void (*)(const RunConfig&, std::ostream&);
  const std::pair<const char*, Command> commands[] = {
      {"gen", cmd_gen},         {"refdb", cmd_refdb},         {"fit", cmd_fit},
      {"sweep", cmd_sweep},     {"calibrate", cmd_calibrate}, {"report", cmd_report},
  };
  const char* descriptions[] = {
      "Generate the source and target domains and cache them",
      "Build the reference feature database on the source domain",
      "Fit the GMM to the reference database",
      "Sweep each anchor axis on the target domain and write the fitness curves",
      "Run sweep and differential evolution; write the calibration result",
      "Summarize the calibration result",
  };
  for (std::size_t i = 0; i < std::size(commands); ++i) app.add_subcommand(commands[i].first, descriptions[i]);

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidConfig;
  }

  try {
    Overrides ov;
    if (*out_opt) ov.out_dir = fs::path(out_dir);
    if (*seed_opt) ov.seed = seed;
    if (*threads_opt) ov.threads = threads;
    if (*tau_opt) ov.tau = tau;
    const RunConfig cfg = load_config(config_path, ov);
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) fn(cfg, out);
    }
    return kOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace anchorcal::cli
