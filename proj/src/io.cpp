#include "anchorcal/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include "anchorcal/error.hpp"
#include "json_util.hpp"

namespace anchorcal::io {
namespace {

using detail::FieldReader;
using detail::json;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
static_assert(std::numeric_limits<float>::is_iec559);

constexpr char kMagic[4] = {'S', 'F', 'D', 'B'};
constexpr std::uint32_t kSfdbVersion = 1;
constexpr int kCacheVersion = 1;

[[noreturn]] void io_error(const fs::path& path, const std::string& what) {
  throw Error(ErrorKind::Io, path.string() + ": " + what);
}

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::string& out, T v) {
  v = to_little(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos, const fs::path& path) {
  if (in.size() - pos < sizeof(T)) io_error(path, "truncated feature database");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return to_little(v);
}

std::string read_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) io_error(path, "read failed");
  return std::move(ss).str();
}

json parse_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    io_error(path, std::string("malformed JSON: ") + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return {buf, res.ptr};
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::Io, "not a number: '" + s + "'");
  }
  return v;
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_error(path, "cannot open for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) io_error(path, "write failed");
  }
  fs::rename(tmp, path, ec);
  if (ec) io_error(path, "rename failed: " + ec.message());
}

std::string read_text(const fs::path& path) { return read_binary(path); }

void write_sfdb(const fs::path& path, const FeatureDatabase& db) {
  std::string out;
  out.reserve(20 + db.data().size() * sizeof(float));
  out.append(kMagic, 4);
  put<std::uint32_t>(out, kSfdbVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(db.dim()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(db.size()));
  for (double v : db.data()) put<float>(out, static_cast<float>(v));
  write_text(path, out);
}

FeatureDatabase read_sfdb(const fs::path& path) {
  const std::string in = read_binary(path);
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) io_error(path, "not an SFDB file");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(in, pos, path);
  if (version != kSfdbVersion) io_error(path, "unsupported SFDB version " + std::to_string(version));
  const auto dim = get<std::uint32_t>(in, pos, path);
  const auto count = get<std::uint64_t>(in, pos, path);
  if (dim == 0) io_error(path, "SFDB dimension is zero");
  const std::uint64_t payload = in.size() - pos;
  if (count > payload / sizeof(float) / dim || payload != count * dim * sizeof(float)) {
    io_error(path, "SFDB payload size does not match its header");
  }
  FeatureDatabase db(dim);
  db.reserve(static_cast<std::size_t>(count));
  std::vector<double> row(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (auto& v : row) v = get<float>(in, pos, path);
    try {
      db.push_back(row);
    } catch (const Error& e) {
      io_error(path, "row " + std::to_string(i) + ": " + e.what());
    }
  }
  return db;
}

void write_gmm(const fs::path& path, const Gmm& model) {
  json j;
  j["dim"] = model.dim();
  j["components"] = model.components();
  j["weights"] = std::vector<double>(model.weights().begin(), model.weights().end());
  json means = json::array(), vars = json::array();
  for (std::size_t k = 0; k < model.components(); ++k) {
    means.push_back(std::vector<double>(model.mean(k).begin(), model.mean(k).end()));
    vars.push_back(std::vector<double>(model.variance(k).begin(), model.variance(k).end()));
  }
  j["means"] = std::move(means);
  j["variances"] = std::move(vars);
  write_text(path, dump(j));
}

Gmm read_gmm(const fs::path& path) {
  const json j = parse_json(path);
  FieldReader r(j, "", ErrorKind::Io);
  const auto dim = r.unsigned_int("dim");
  const auto k = r.unsigned_int("components");
  auto weights = r.numbers("weights");
  auto flatten = [&](const std::string& key) {
    const json& rows = r.raw(key);
    if (!rows.is_array() || rows.size() != k) r.fail(key, "must hold one row per component");
    std::vector<double> out;
    out.reserve(k * dim);
    for (const auto& row : rows) {
      if (!row.is_array() || row.size() != dim) r.fail(key, "rows must have length dim");
      for (const auto& v : row) {
        if (!v.is_number()) r.fail(key, "must hold numbers");
        out.push_back(v.get<double>());
      }
    }
    return out;
  };
  auto means = flatten("means");
  auto vars = flatten("variances");
  r.finish();
  try {
    return Gmm(dim, std::move(weights), std::move(means), std::move(vars));
  } catch (const Error& e) {
    io_error(path, e.what());
  }
}

void write_result(const fs::path& path, const CalibrationResult& result) {
  json j;
  j["calibrated"] = detail::sizes_to_json(result.calibrated);
  j["source"] = detail::sizes_to_json(result.source);
  j["calibrated_fitness"] = detail::number_to_json(result.calibrated_fitness);
  j["source_fitness"] = detail::number_to_json(result.source_fitness);
  j["initial_candidate"] = detail::sizes_to_json(result.initial_candidate);
  json curves = json::array();
  for (const auto& c : result.sweep_curves) {
    json values = json::array(), fit = json::array();
    for (const auto& p : c.points) {
      values.push_back(p.value);
      fit.push_back(detail::number_to_json(p.fitness));
    }
    curves.push_back({{"axis", axis_name(c.axis)}, {"values", values}, {"fitness", fit}});
  }
  j["sweep_curves"] = std::move(curves);
  json trace = json::array();
  for (double v : result.de_trace) trace.push_back(detail::number_to_json(v));
  j["de_trace"] = std::move(trace);
  j["termination"] = to_string(result.termination);
  j["generations"] = result.generations;
  j["evaluations"] = result.evaluations;
  write_text(path, dump(j));
}

CalibrationResult read_result(const fs::path& path) {
  const json j = parse_json(path);
  try {
    FieldReader r(j, "", ErrorKind::Io);
    const AnchorSizes calibrated = detail::sizes_from(r, "calibrated");
    const AnchorSizes source = detail::sizes_from(r, "source");
    CalibrationResult out{calibrated, source, 0.0, 0.0, detail::sizes_from(r, "initial_candidate"),
                          {}, {}, Termination::MaxIters, 0, 0};
    out.calibrated_fitness = r.number("calibrated_fitness");
    out.source_fitness = r.number("source_fitness");
    const json& curves = r.raw("sweep_curves");
    if (!curves.is_array()) r.fail("sweep_curves", "must be an array");
    for (std::size_t i = 0; i < curves.size(); ++i) {
      FieldReader c(curves[i], "sweep_curves[" + std::to_string(i) + "]", ErrorKind::Io);
      SweepCurve curve;
      try {
        curve.axis = parse_axis(c.string("axis"));
      } catch (const Error& e) {
        c.fail(c.field("axis"), e.what());
      }
      const auto values = c.numbers("values");
      const auto fit = c.numbers("fitness");
      if (values.size() != fit.size()) c.fail(c.field("fitness"), "must match values in length");
      for (std::size_t p = 0; p < values.size(); ++p) curve.points.push_back({values[p], fit[p]});
      c.finish();
      out.sweep_curves.push_back(std::move(curve));
    }
    out.de_trace = r.numbers("de_trace");
    try {
      out.termination = parse_termination(r.string("termination"));
    } catch (const Error& e) {
      r.fail("termination", e.what());
    }
    out.generations = r.unsigned_int("generations");
    out.evaluations = r.unsigned_int("evaluations");
    r.finish();
    return out;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) io_error(path, e.what());
    throw;
  }
}

void write_curve_csv(const fs::path& path, const SweepCurve& curve) {
  std::string out = "value,fitness\n";
  for (const auto& p : curve.points) {
    out += format_double(p.value) + "," + format_double(p.fitness) + "\n";
  }
  write_text(path, out);
}

SweepCurve read_curve_csv(const fs::path& path, Axis axis) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "value,fitness") io_error(path, "missing CSV header");
  SweepCurve curve{axis, {}};
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) io_error(path, "line " + std::to_string(lineno) + ": expected 2 columns");
    try {
      curve.points.push_back({parse_double(line.substr(0, comma)), parse_double(line.substr(comma + 1))});
    } catch (const Error& e) {
      io_error(path, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (curve.points.size() < 2) io_error(path, "curve needs at least 2 points");
  return curve;
}

void write_trace_csv(const fs::path& path, std::span<const double> trace) {
  std::string out = "generation,best_fitness\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += std::to_string(i) + "," + format_double(trace[i]) + "\n";
  }
  write_text(path, out);
}

void write_domain_cache(const fs::path& dir, const std::string& stem,
                        const SyntheticExtractor& domain) {
  const std::string points_name = stem + ".points.sfdb";
  json j;
  j["format"] = "anchorcal-domain";
  j["version"] = kCacheVersion;
  j["domain"] = detail::domain_to_json(domain.domain());
  j["detector_anchor"] = detail::sizes_to_json(domain.source_anchor());
  j["surrogate"] = {{"grid", domain.config().grid}, {"nms", domain.config().nms}};
  j["points"] = points_name;

  FeatureDatabase points(5);
  std::vector<double> row(5);
  json frames = json::array();
  const auto& data = domain.frame_data();
  for (std::size_t f = 0; f < data.size(); ++f) {
    json objects = json::array();
    for (const auto& o : data[f].objects()) {
      objects.push_back({{"center", o.center},
                         {"size", detail::sizes_to_json(o.size)},
                         {"yaw", o.yaw},
                         {"center_estimate", o.center_estimate},
                         {"yaw_estimate", o.yaw_estimate},
                         {"size_estimate", o.size_estimate},
                         {"point_count", o.point_count}});
    }
    frames.push_back({{"objects", std::move(objects)}, {"points", data[f].points().size()}});
    for (const auto& p : data[f].points()) {
      row = {static_cast<double>(f), static_cast<double>(p.owner), p.x, p.y, p.z};
      points.push_back(row);
    }
  }
  j["frames"] = std::move(frames);
  write_sfdb(dir / points_name, points);
  write_text(dir / (stem + ".json"), dump(j));
}

std::shared_ptr<const SyntheticExtractor> read_domain_cache(const fs::path& manifest) {
  const json j = parse_json(manifest);
  try {
    FieldReader r(j, "", ErrorKind::Io);
    if (r.string("format") != "anchorcal-domain") r.fail("format", "is not anchorcal-domain");
    if (r.unsigned_int("version") != kCacheVersion) r.fail("version", "is not supported");
    auto domain_reader = r.object("domain");
    SyntheticDomain domain = detail::domain_from(domain_reader, SyntheticDomain{});
    domain_reader.finish();
    const AnchorSizes anchor = detail::sizes_from(r, "detector_anchor");
    auto sr = r.object("surrogate");
    SurrogateConfig surrogate;
    surrogate.grid = sr.unsigned_int("grid");
    surrogate.nms = sr.boolean("nms", true);
    sr.finish();
    const FeatureDatabase points = read_sfdb(manifest.parent_path() / r.string("points"));
    if (points.dim() != 5) io_error(manifest, "points file must have dimension 5");

    const json& frames_json = r.raw("frames");
    if (!frames_json.is_array()) r.fail("frames", "must be an array");
    auto frames = std::make_shared<std::vector<SyntheticFrame>>();
    frames->reserve(frames_json.size());
    std::size_t next = 0;
    for (std::size_t f = 0; f < frames_json.size(); ++f) {
      FieldReader fr(frames_json[f], "frames[" + std::to_string(f) + "]", ErrorKind::Io);
      std::vector<SyntheticObject> objects;
      const json& objs = fr.raw("objects");
      if (!objs.is_array()) fr.fail(fr.field("objects"), "must be an array");
      for (std::size_t i = 0; i < objs.size(); ++i) {
        FieldReader orr(objs[i], fr.field("objects[" + std::to_string(i) + "]"), ErrorKind::Io);
        SyntheticObject o;
        o.center = orr.triple("center");
        o.size = detail::sizes_from(orr, "size");
        o.yaw = orr.number("yaw");
        o.center_estimate = orr.triple("center_estimate");
        o.yaw_estimate = orr.number("yaw_estimate");
        o.size_estimate = orr.triple("size_estimate");
        o.point_count = orr.unsigned_int("point_count");
        orr.finish();
        objects.push_back(o);
      }
      const auto count = fr.unsigned_int("points");
      fr.finish();
      if (points.size() - next < count) io_error(manifest, "points file is shorter than the manifest");
      std::vector<ObjectPoint> pts;
      pts.reserve(count);
      for (std::size_t i = 0; i < count; ++i, ++next) {
        const auto row = points.row(next);
        const auto owner = static_cast<std::int32_t>(row[1]);
        if (row[0] != static_cast<double>(f) || owner < -1 ||
            owner >= static_cast<std::int32_t>(objects.size())) {
          io_error(manifest, "points file row " + std::to_string(next) + " does not belong to frame " +
                                 std::to_string(f));
        }
        pts.push_back({static_cast<float>(row[2]), static_cast<float>(row[3]),
                       static_cast<float>(row[4]), owner});
      }
      frames->emplace_back(std::move(objects), std::move(pts), domain.frame_extent);
    }
    if (next != points.size()) io_error(manifest, "points file is longer than the manifest");
    r.finish();
    return std::make_shared<const SyntheticExtractor>(std::move(domain), std::move(frames), anchor,
                                                      surrogate);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io || e.kind() == ErrorKind::InvalidConfig ||
        e.kind() == ErrorKind::InvalidArgument) {
      const std::string msg = e.what();
      if (msg.rfind(manifest.string(), 0) == 0) throw Error(ErrorKind::Io, msg);
      io_error(manifest, msg);
    }
    throw;
  }
}

}  // namespace anchorcal::io
