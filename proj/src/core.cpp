#include "anchorcal/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "anchorcal/error.hpp"

namespace anchorcal {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::InvalidConfig: return "invalid config";
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::NonFiniteInput: return "non-finite input";
    case ErrorKind::InsufficientSamples: return "insufficient samples";
    case ErrorKind::ZeroFeatures: return "zero features";
    case ErrorKind::UnknownFrame: return "unknown frame";
    case ErrorKind::EvaluationFailed: return "evaluation failed";
    case ErrorKind::Io: return "i/o error";
  }
  return "unknown";
}

std::string_view axis_name(Axis axis) noexcept {
  switch (axis) {
    case Axis::W: return "w";
    case Axis::L: return "l";
    case Axis::H: return "h";
  }
  return "?";
}

Axis parse_axis(std::string_view name) {
  if (name == "w") return Axis::W;
  if (name == "l") return Axis::L;
  if (name == "h") return Axis::H;
  throw Error(ErrorKind::InvalidArgument, "unknown axis '" + std::string(name) + "'");
}

AnchorSizes::AnchorSizes(double w, double l, double h) : v_{w, l, h} {
  for (double x : v_) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw Error(ErrorKind::InvalidArgument, "anchor sizes must be finite and strictly positive");
    }
  }
}

AnchorSizes AnchorSizes::with(Axis axis, double value) const {
  auto v = v_;
  v[static_cast<int>(axis)] = value;
  return {v[0], v[1], v[2]};
}

AnchorSizes AnchorSizes::scaled(double factor) const {
  return {v_[0] * factor, v_[1] * factor, v_[2] * factor};
}

PerturbedSizes apply_perturbation(const AnchorSizes& sizes, const SizePerturbation& eps,
                                  double floor) {
  if (!(floor > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "positivity floor must be > 0");
  }
  const std::array<double, 3> delta{eps.dw, eps.dl, eps.dh};
  std::array<double, 3> out{};
  bool clamped = false;
  for (int i = 0; i < 3; ++i) {
    const double v = sizes.values()[i] + delta[i];
    if (v < floor) {
      clamped = true;
      out[i] = floor;
    } else {
      out[i] = v;
    }
  }
  return {AnchorSizes(out[0], out[1], out[2]), clamped};
}

double normalize_angle(double theta) {
  if (!std::isfinite(theta)) {
    throw Error(ErrorKind::InvalidArgument, "angle must be finite");
  }
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double t = std::fmod(theta + std::numbers::pi, two_pi);
  if (t < 0.0) {
    t += two_pi;
  }
  t -= std::numbers::pi;
  // fmod rounding can land exactly on +pi.
  return t >= std::numbers::pi ? -std::numbers::pi : t;
}

Anchor::Anchor(double x, double y, double z, AnchorSizes sizes, double theta)
    : x_(x), y_(y), z_(z), sizes_(sizes), theta_(normalize_angle(theta)) {}

FeatureVector::FeatureVector(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::NonFiniteInput, "feature vector contains a non-finite entry");
    }
  }
}

FeatureDatabase::FeatureDatabase(std::size_t dim) : dim_(dim) {
  if (dim == 0) {
    throw Error(ErrorKind::InvalidArgument, "feature dimension must be positive");
  }
}

std::span<const double> FeatureDatabase::row(std::size_t i) const {
  return std::span<const double>(data_).subspan(i * dim_, dim_);
}

void FeatureDatabase::push_back(std::span<const double> feature) {
  if (feature.size() != dim_) {
    throw Error(ErrorKind::DimensionMismatch,
                "feature has dimension " + std::to_string(feature.size()) + ", database expects " +
                    std::to_string(dim_));
  }
  for (double v : feature) {
    if (!std::isfinite(v) || !std::isfinite(static_cast<float>(v))) {
      throw Error(ErrorKind::NonFiniteInput, "feature contains a non-finite entry");
    }
  }
  for (double v : feature) {
    data_.push_back(static_cast<double>(static_cast<float>(v)));
  }
}

void FeatureDatabase::append(const FeatureDatabase& other) {
  if (other.dim_ != dim_) {
    throw Error(ErrorKind::DimensionMismatch, "cannot append databases of different dimension");
  }
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
}

void FeatureDatabase::truncate(std::size_t rows) {
  if (rows < size()) {
    data_.resize(rows * dim_);
  }
}

}  // namespace anchorcal
