#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "anchorcal/cli.hpp"
#include "anchorcal/core.hpp"
#include "anchorcal/error.hpp"
#include "anchorcal/extractor.hpp"
#include "anchorcal/gmm.hpp"
#include "anchorcal/io.hpp"
#include "anchorcal/optimizer.hpp"
#include "anchorcal/synthdet.hpp"

namespace py = pybind11;
using namespace anchorcal;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
// pybind11 holders cannot be const; the extractor is never mutated.
using ExtractorPtr = std::shared_ptr<SyntheticExtractor>;

ExtractorPtr unconst(std::shared_ptr<const SyntheticExtractor> p) {
  return std::const_pointer_cast<SyntheticExtractor>(std::move(p));
}

Array to_array(const FeatureDatabase& db) {
  Array out({db.size(), db.dim()});
  std::copy(db.data().begin(), db.data().end(), out.mutable_data());
  return out;
}

FeatureDatabase from_array(const Array& a) {
  if (a.ndim() != 2) throw Error(ErrorKind::InvalidArgument, "features must be a 2-D array");
  FeatureDatabase db(static_cast<std::size_t>(a.shape(1)));
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto dim = db.dim();
  db.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) db.push_back(std::span<const double>(a.data() + i * dim, dim));
  return db;
}

std::string repr(const AnchorSizes& s) {
  std::ostringstream ss;
  ss << "AnchorSizes(w=" << s.w() << ", l=" << s.l() << ", h=" << s.h() << ")";
  return ss.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Anchor-size calibration: GMM fitness, sweep and differential evolution, synthetic surrogate.";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result([&] { return py::exception<Error>(m, "Error"); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::object& type = error_type.get_stored();
      py::object exc = type(std::string(e.what()));
      exc.attr("kind") = py::str(std::string(to_string(e.kind())));
      PyErr_SetObject(type.ptr(), exc.ptr());
    }
  });

  py::class_<AnchorSizes>(m, "AnchorSizes")
      .def(py::init<double, double, double>(), py::arg("w"), py::arg("l"), py::arg("h"))
      .def_property_readonly("w", &AnchorSizes::w)
      .def_property_readonly("l", &AnchorSizes::l)
      .def_property_readonly("h", &AnchorSizes::h)
      .def("values", [](const AnchorSizes& s) { return s.values(); })
      .def("__eq__", [](const AnchorSizes& a, const AnchorSizes& b) { return a == b; })
      .def("__repr__", &repr);

  py::class_<SyntheticDomain>(m, "SyntheticDomain")
      .def(py::init<>())
      .def_readwrite("name", &SyntheticDomain::name)
      .def_readwrite("mean_size", &SyntheticDomain::mean_size)
      .def_readwrite("size_stddev", &SyntheticDomain::size_stddev)
      .def_readwrite("objects_per_frame", &SyntheticDomain::objects_per_frame)
      .def_readwrite("points_per_object", &SyntheticDomain::points_per_object)
      .def_readwrite("clutter_rate", &SyntheticDomain::clutter_rate)
      .def_readwrite("frame_extent", &SyntheticDomain::frame_extent)
      .def_readwrite("surface_jitter", &SyntheticDomain::surface_jitter)
      .def_readwrite("center_noise", &SyntheticDomain::center_noise)
      .def_readwrite("yaw_noise", &SyntheticDomain::yaw_noise)
      .def_readwrite("size_noise", &SyntheticDomain::size_noise)
      .def_readwrite("seed", &SyntheticDomain::seed)
      .def("validate", &SyntheticDomain::validate);

  py::class_<SurrogateConfig>(m, "SurrogateConfig")
      .def(py::init<>())
      .def_readwrite("grid", &SurrogateConfig::grid)
      .def_readwrite("nms", &SurrogateConfig::nms);

  py::class_<SyntheticExtractor, ExtractorPtr>(m, "SyntheticExtractor")
      .def_property_readonly("feature_dim", &SyntheticExtractor::feature_dim)
      .def_property_readonly("source_anchor", &SyntheticExtractor::source_anchor)
      .def_property_readonly("domain", &SyntheticExtractor::domain)
      .def_property_readonly("frame_count", [](const SyntheticExtractor& e) { return e.frame_data().size(); })
      .def_property_readonly("object_count", &SyntheticExtractor::object_count)
      .def(
          "with_anchor", [](const SyntheticExtractor& e, const AnchorSizes& a) { return unconst(e.with_anchor(a)); },
          py::arg("anchor"))
      .def(
          "propose",
          [](const SyntheticExtractor& e, std::uint32_t frame, const AnchorSizes& sizes, bool apply_residuals) {
            py::list out;
            for (const auto& p : e.propose(FrameId{frame}, sizes,
                                           apply_residuals ? SizeResiduals::Apply : SizeResiduals::Suppress)) {
              py::dict d;
              d["score"] = p.score;
              d["feature"] = py::array_t<double>(static_cast<py::ssize_t>(p.feature.dim()), p.feature.values().data());
              d["size_residuals"] = p.size_residuals;
              out.append(d);
            }
            return out;
          },
          py::arg("frame"), py::arg("sizes"), py::arg("apply_residuals") = false);

  m.def(
      "generate_domain",
      [](const SyntheticDomain& spec, std::size_t frames, std::optional<AnchorSizes> anchor,
         const SurrogateConfig& surrogate, std::size_t threads) {
        py::gil_scoped_release release;
        return unconst(generate_domain(spec, frames, anchor, surrogate, threads));
      },
      py::arg("domain"), py::arg("frames"), py::arg("detector_anchor") = py::none(),
      py::arg("surrogate") = SurrogateConfig{}, py::arg("threads") = 1);

  py::class_<GateConfig>(m, "GateConfig")
      .def(py::init<>())
      .def_readwrite("tau", &GateConfig::tau)
      .def_readwrite("max_features", &GateConfig::max_features)
      .def_readwrite("min_target_features", &GateConfig::min_target_features)
      .def_readwrite("suppress_size_residuals_in_reference", &GateConfig::suppress_size_residuals_in_reference);

  py::class_<EmConfig>(m, "EmConfig")
      .def(py::init<>())
      .def_readwrite("k", &EmConfig::k)
      .def_readwrite("max_iters", &EmConfig::max_iters)
      .def_readwrite("ll_tolerance", &EmConfig::ll_tolerance)
      .def_readwrite("restarts", &EmConfig::restarts)
      .def_readwrite("variance_floor", &EmConfig::variance_floor)
      .def_readwrite("seed", &EmConfig::seed);

  py::class_<DeConfig>(m, "DeConfig")
      .def(py::init<>())
      .def_readwrite("population", &DeConfig::population)
      .def_readwrite("eta", &DeConfig::eta)
      .def_readwrite("crossover_rate", &DeConfig::crossover_rate)
      .def_readwrite("init_range", &DeConfig::init_range)
      .def_readwrite("max_iters", &DeConfig::max_iters)
      .def_readwrite("stall_tolerance", &DeConfig::stall_tolerance)
      .def_readwrite("stall_generations", &DeConfig::stall_generations)
      .def_readwrite("seed", &DeConfig::seed)
      .def_readwrite("size_floor", &DeConfig::size_floor);

  py::class_<SweepConfig>(m, "SweepConfig")
      .def(py::init([](const std::string& axis, double range, std::size_t steps) {
             return SweepConfig{parse_axis(axis), range, steps};
           }),
           py::arg("axis"), py::arg("relative_range") = 0.5, py::arg("steps") = 21)
      .def_property_readonly("axis", [](const SweepConfig& s) { return std::string(axis_name(s.axis)); })
      .def_readwrite("relative_range", &SweepConfig::relative_range)
      .def_readwrite("steps", &SweepConfig::steps);

  py::class_<CalibrationSettings>(m, "CalibrationSettings")
      .def(py::init<>())
      .def_readwrite("gate", &CalibrationSettings::gate)
      .def_readwrite("em", &CalibrationSettings::em)
      .def_readwrite("sweeps", &CalibrationSettings::sweeps)
      .def_readwrite("de", &CalibrationSettings::de)
      .def_readwrite("threads", &CalibrationSettings::threads);

  py::class_<Gmm>(m, "Gmm")
      .def(py::init([](const Array& weights, const Array& means, const Array& variances) {
             const auto k = static_cast<std::size_t>(means.shape(0));
             const auto d = static_cast<std::size_t>(means.shape(1));
             return Gmm(d, {weights.data(), weights.data() + weights.size()},
                        {means.data(), means.data() + k * d}, {variances.data(), variances.data() + k * d});
           }),
           py::arg("weights"), py::arg("means"), py::arg("variances"))
      .def_property_readonly("dim", &Gmm::dim)
      .def_property_readonly("components", &Gmm::components)
      .def_property_readonly("weights", [](const Gmm& g) { return std::vector<double>(g.weights().begin(), g.weights().end()); })
      .def_property_readonly("means", [](const Gmm& g) {
        Array a({g.components(), g.dim()});
        std::copy(g.means().begin(), g.means().end(), a.mutable_data());
        return a;
      })
      .def_property_readonly("variances", [](const Gmm& g) {
        Array a({g.components(), g.dim()});
        std::copy(g.variances().begin(), g.variances().end(), a.mutable_data());
        return a;
      })
      .def("log_pdf", [](const Gmm& g, const Array& f) {
        return g.log_pdf(std::span<const double>(f.data(), static_cast<std::size_t>(f.size())));
      });

  m.def(
      "fit_em",
      [](const Array& features, const EmConfig& cfg, std::size_t threads) {
        const auto db = from_array(features);
        py::gil_scoped_release release;
        return fit_em(db, cfg, threads);
      },
      py::arg("features"), py::arg("config") = EmConfig{}, py::arg("threads") = 1);

  m.def(
      "fitness",
      [](const Array& features, const Gmm& model, std::size_t threads) {
        return fitness(from_array(features), model, threads);
      },
      py::arg("features"), py::arg("model"), py::arg("threads") = 1);

  m.def(
      "build_reference_db",
      [](const SyntheticExtractor& ex, const GateConfig& gate, std::size_t threads) {
        FeatureDatabase db(ex.feature_dim());
        {
          py::gil_scoped_release release;
          db = build_reference_db(ex, ex.frames(), gate, threads);
        }
        return to_array(db);
      },
      py::arg("extractor"), py::arg("gate") = GateConfig{}, py::arg("threads") = 1);

  m.def(
      "build_target_db",
      [](const SyntheticExtractor& ex, const AnchorSizes& sizes, const GateConfig& gate, std::size_t threads) {
        return to_array(build_target_db(ex, ex.frames(), sizes, gate, threads));
      },
      py::arg("extractor"), py::arg("sizes"), py::arg("gate") = GateConfig{}, py::arg("threads") = 1);

  m.def(
      "calibrate",
      [](const SyntheticExtractor& source, const SyntheticExtractor& target, const CalibrationSettings& settings) {
        CalibrationResult r = [&] {
          py::gil_scoped_release release;
          return calibrate(source, target, source.frames(), target.frames(), settings).result;
        }();
        py::dict out;
        out["calibrated"] = r.calibrated;
        out["source"] = r.source;
        out["initial_candidate"] = r.initial_candidate;
        out["calibrated_fitness"] = r.calibrated_fitness;
        out["source_fitness"] = r.source_fitness;
        out["termination"] = std::string(to_string(r.termination));
        out["generations"] = r.generations;
        out["evaluations"] = r.evaluations;
        out["de_trace"] = r.de_trace;
        py::dict curves;
        for (const auto& c : r.sweep_curves) {
          py::list pts;
          for (const auto& p : c.points) pts.append(py::make_tuple(p.value, p.fitness));
          curves[py::str(std::string(axis_name(c.axis)))] = pts;
        }
        out["sweep_curves"] = curves;
        return out;
      },
      py::arg("source"), py::arg("target"), py::arg("settings") = CalibrationSettings{});

  m.def(
      "read_sfdb", [](const std::filesystem::path& p) { return to_array(io::read_sfdb(p)); }, py::arg("path"));
  m.def(
      "write_sfdb", [](const std::filesystem::path& p, const Array& a) { io::write_sfdb(p, from_array(a)); },
      py::arg("path"), py::arg("features"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "anchorcal");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
