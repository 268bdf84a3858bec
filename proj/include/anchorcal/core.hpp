#pragma once

// Domain types shared by every module: anchors, size perturbations, feature
// vectors and feature databases.

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace anchorcal {

enum class Axis { W = 0, L = 1, H = 2 };

inline constexpr std::array<Axis, 3> kAllAxes{Axis::W, Axis::L, Axis::H};

std::string_view axis_name(Axis axis) noexcept;
Axis parse_axis(std::string_view name);

/// Positivity floor applied by apply_perturbation unless overridden (meters).
inline constexpr double kDefaultSizeFloor = 0.05;

/// Box width/length/height in meters; every component strictly positive.
class AnchorSizes {
 public:
  AnchorSizes(double w, double l, double h);

  double w() const noexcept { return v_[0]; }
  double l() const noexcept { return v_[1]; }
  double h() const noexcept { return v_[2]; }
  double operator[](Axis axis) const noexcept { return v_[static_cast<int>(axis)]; }
  const std::array<double, 3>& values() const noexcept { return v_; }

  AnchorSizes with(Axis axis, double value) const;
  AnchorSizes scaled(double factor) const;

  friend bool operator==(const AnchorSizes&, const AnchorSizes&) = default;

 private:
  std::array<double, 3> v_;
};

/// Signed size change (meters).
struct SizePerturbation {
  double dw = 0.0;
  double dl = 0.0;
  double dh = 0.0;

  SizePerturbation operator-() const noexcept { return {-dw, -dl, -dh}; }
  friend bool operator==(const SizePerturbation&, const SizePerturbation&) = default;
};

struct PerturbedSizes {
  AnchorSizes sizes;
  bool clamped;
};

/// Componentwise max(size + delta, floor). Throws InvalidArgument if floor <= 0.
PerturbedSizes apply_perturbation(const AnchorSizes& sizes, const SizePerturbation& eps,
                                  double floor = kDefaultSizeFloor);

/// Full anchor tuple. Only the sizes are ever calibrated; position and yaw
/// ride along so the tuple matches a detector's anchor definition.
class Anchor {
 public:
  Anchor(double x, double y, double z, AnchorSizes sizes, double theta);

  double x() const noexcept { return x_; }
  double y() const noexcept { return y_; }
  double z() const noexcept { return z_; }
  const AnchorSizes& sizes() const noexcept { return sizes_; }
  /// Yaw in [-pi, pi).
  double theta() const noexcept { return theta_; }

 private:
  double x_, y_, z_;
  AnchorSizes sizes_;
  double theta_;
};

/// Maps any finite angle into [-pi, pi).
double normalize_angle(double theta);

/// Latent feature of one proposal. All entries finite.
class FeatureVector {
 public:
  explicit FeatureVector(std::vector<double> values);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<double> values_;
};

/// Row-major collection of fixed-dimension feature vectors. Values are held
/// at single precision (rounded on insertion), the precision of the on-disk
/// format, so a database behaves identically before and after a save/load.
class FeatureDatabase {
 public:
  explicit FeatureDatabase(std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return dim_ == 0 ? 0 : data_.size() / dim_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> row(std::size_t i) const;
  std::span<const double> data() const noexcept { return data_; }

  /// Throws DimensionMismatch or NonFiniteInput.
  void push_back(std::span<const double> feature);
  void push_back(const FeatureVector& feature) { push_back(feature.values()); }
  void append(const FeatureDatabase& other);
  void reserve(std::size_t rows) { data_.reserve(rows * dim_); }
  void truncate(std::size_t rows);

  friend bool operator==(const FeatureDatabase&, const FeatureDatabase&) = default;

 private:
  std::size_t dim_;
  std::vector<double> data_;
};

/// Output of the region-proposal stage for one object hypothesis.
struct ScoredProposal {
  double score = 0.0;                          // in [0, 1]
  std::array<double, 3> center_residuals{};    // dx, dy, dz (m)
  double yaw_residual = 0.0;                   // rad
  std::array<double, 3> size_residuals{};      // dw, dl, dh (m); suppressed during calibration
  FeatureVector feature{std::vector<double>{}};
};

}  // namespace anchorcal
