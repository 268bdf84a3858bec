#pragma once

// Strict JSON field access shared by the config loader and the artifact
// readers. Errors name the full dotted field path.

#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>

#include <json.hpp>

#include "anchorcal/core.hpp"
#include "anchorcal/error.hpp"
#include "anchorcal/synthdet.hpp"

namespace anchorcal::detail {

using json = nlohmann::json;

/// JSON has no infinities; they travel as strings.
inline json number_to_json(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

class FieldReader {
 public:
  FieldReader(const json& obj, std::string path, ErrorKind kind)
      : obj_(obj), path_(std::move(path)), kind_(kind) {
    if (!obj_.is_object()) fail(path_.empty() ? "document" : path_, "must be an object");
  }

  /// Present and not null. Marks the key as known.
  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) fail(field(key), "is required");
    return obj_.at(key);
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
      if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    fail(field(key), "must be a number");
  }

  double number(const std::string& key, double fallback) {
    return has(key) ? number(key) : fallback;
  }

  std::uint64_t unsigned_int(const std::string& key) {
    const json& v = raw(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) fail(field(key), "must be >= 0");
    fail(field(key), "must be a non-negative integer");
  }

  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
    return has(key) ? unsigned_int(key) : fallback;
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) fail(field(key), "must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) fail(field(key), "must be a string");
    return v.get<std::string>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  std::array<double, 3> triple(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array() || v.size() != 3) fail(field(key), "must be an array of 3 numbers");
    std::array<double, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!v[i].is_number()) fail(field(key), "must be an array of 3 numbers");
      out[i] = v[i].get<double>();
    }
    return out;
  }

  std::vector<double> numbers(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(field(key), "must be an array of numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& x : v) {
      if (x.is_number()) {
        out.push_back(x.get<double>());
      } else if (x.is_string() && (x == "inf" || x == "-inf" || x == "nan")) {
        const auto s = x.get<std::string>();
        out.push_back(s == "nan"  ? std::numeric_limits<double>::quiet_NaN()
                      : s == "inf" ? std::numeric_limits<double>::infinity()
                                   : -std::numeric_limits<double>::infinity());
      } else {
        fail(field(key), "must be an array of numbers");
      }
    }
    return out;
  }

  FieldReader object(const std::string& key) { return FieldReader(raw(key), field(key), kind_); }

  /// Rejects keys that were never read.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) fail(field(it.key()), "is not a known field");
    }
  }

  [[noreturn]] void fail(const std::string& what, const std::string& msg) const {
    throw Error(kind_, what + " " + msg);
  }

  /// Rethrows a validation error from a module as this reader's error kind.
  template <typename Fn>
  void validate(Fn&& fn) const {
    try {
      fn();
    } catch (const Error& e) {
      // Module messages start with their own section name; swap in ours.
      std::string msg = e.what();
      const auto dot = msg.find('.');
      const auto space = msg.find(' ');
      if (!path_.empty() && dot != std::string::npos && dot < space) {
        msg = path_ + msg.substr(dot);
      }
      throw Error(kind_, msg);
    }
  }

 private:
  const json& obj_;
  std::string path_;
  ErrorKind kind_;
  std::set<std::string> seen_;
};

inline json sizes_to_json(const AnchorSizes& s) { return json::array({s.w(), s.l(), s.h()}); }

inline AnchorSizes sizes_from(FieldReader& r, const std::string& key) {
  const auto v = r.triple(key);
  for (double x : v) {
    if (!(x > 0.0) || !std::isfinite(x)) r.fail(r.field(key), "must be finite and > 0");
  }
  return {v[0], v[1], v[2]};
}

inline json domain_to_json(const SyntheticDomain& d) {
  json j;
  j["name"] = d.name;
  j["mean_size"] = sizes_to_json(d.mean_size);
  j["size_stddev"] = d.size_stddev;
  j["objects_per_frame"] = d.objects_per_frame;
  j["points_per_object"] = d.points_per_object;
  j["clutter_rate"] = d.clutter_rate;
  j["frame_extent"] = d.frame_extent;
  j["surface_jitter"] = d.surface_jitter;
  j["center_noise"] = d.center_noise;
  j["yaw_noise"] = d.yaw_noise;
  j["size_noise"] = d.size_noise;
  j["seed"] = d.seed;
  return j;
}

/// Fields absent from `r` keep the values of `base`.
inline SyntheticDomain domain_from(FieldReader& r, SyntheticDomain base) {
  SyntheticDomain d = std::move(base);
  d.name = r.string("name", d.name);
  if (r.has("mean_size")) d.mean_size = sizes_from(r, "mean_size");
  if (r.has("size_stddev")) d.size_stddev = r.triple("size_stddev");
  d.objects_per_frame = r.number("objects_per_frame", d.objects_per_frame);
  d.points_per_object = r.number("points_per_object", d.points_per_object);
  d.clutter_rate = r.number("clutter_rate", d.clutter_rate);
  if (r.has("frame_extent")) d.frame_extent = r.triple("frame_extent");
  d.surface_jitter = r.number("surface_jitter", d.surface_jitter);
  d.center_noise = r.number("center_noise", d.center_noise);
  d.yaw_noise = r.number("yaw_noise", d.yaw_noise);
  d.size_noise = r.number("size_noise", d.size_noise);
  d.seed = r.unsigned_int("seed", d.seed);
  r.validate([&] { d.validate(); });
  return d;
}

}  // namespace anchorcal::detail
