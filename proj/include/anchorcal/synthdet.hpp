#pragma once

// Desk-scale synthetic domains and the surrogate region-proposal stage that
// stands in for a frozen detector.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anchorcal/core.hpp"
#include "anchorcal/extractor.hpp"
#include "anchorcal/random.hpp"

namespace anchorcal {

/// Generative description of one domain. Sizes are drawn per object from
/// independent normals around mean_size.
struct SyntheticDomain {
  std::string name = "domain";
  AnchorSizes mean_size{1.9, 4.6, 1.7};
  std::array<double, 3> size_stddev{0.019, 0.046, 0.017};  // w, l, h (m)
  double objects_per_frame = 4.0;                       // Poisson mean
  double points_per_object = 10.0;                      // points per m^3 of object volume
  double clutter_rate = 25000.0;                        // background points per frame
  std::array<double, 3> frame_extent{40.0, 40.0, 3.0};  // x, y centered; z from ground
  /// Inward surface-point depth, as a fraction of the half extent (half-normal scale).
  double surface_jitter = 0.2;
  double center_noise = 0.0;  // m, per axis
  double yaw_noise = 0.0;     // rad
  double size_noise = 0.05;   // relative error of the predicted size residuals
  std::uint64_t seed = 0;

  /// Throws InvalidConfig naming the offending field.
  void validate() const;
};

struct SurrogateConfig {
  std::size_t grid = 4;  // feature dimension is grid^3
  /// Keep only the best of the two anchor orientations per object.
  bool nms = true;

  void validate() const;
};

struct ObjectPoint {
  float x, y, z;
  std::int32_t owner;  // object index within the frame, -1 for clutter
};

struct SyntheticObject {
  std::array<double, 3> center{};
  AnchorSizes size{1.0, 1.0, 1.0};
  double yaw = 0.0;
  // Detector-side estimates, fixed at generation so proposals are pure.
  std::array<double, 3> center_estimate{};
  double yaw_estimate = 0.0;
  std::array<double, 3> size_estimate{};
  std::size_t point_count = 0;
};

/// One frame; points are bucketed on a 1 m ground grid for box queries.
class SyntheticFrame {
 public:
  SyntheticFrame(std::vector<SyntheticObject> objects, std::vector<ObjectPoint> points,
                 std::array<double, 3> extent);

  const std::vector<SyntheticObject>& objects() const noexcept { return objects_; }
  /// Points ordered by bucket.
  const std::vector<ObjectPoint>& points() const noexcept { return points_; }

  /// Calls fn(point) for every point whose bucket overlaps the xy rectangle.
  template <typename Fn>
  void for_each_near(double x0, double y0, double x1, double y1, Fn&& fn) const;

 private:
  int bucket_x(double x) const;
  int bucket_y(double y) const;

  std::vector<SyntheticObject> objects_;
  std::vector<ObjectPoint> points_;
  double origin_x_, origin_y_;
  int nx_, ny_;
  std::vector<std::uint32_t> bucket_start_;
};

/// Oriented box used for pooling features.
struct PoolBox {
  std::array<double, 3> center{};
  std::array<double, 3> size{};  // w, l, h
  double yaw = 0.0;
};

struct BoxContents {
  std::vector<double> feature;  // grid^3 normalized occupancy
  std::size_t owner_captured = 0;
  std::size_t other_captured = 0;
  std::size_t owner_total = 0;
  double score = 0.0;
};

/// Occupancy of `points` inside `box`: grid^3 cells over the box extents in
/// box-local coordinates (x along length, y along width, z up), divided by
/// the number of captured points. Score is
/// captured / (captured + foreign + missed) for the points owned by `owner`.
BoxContents pool_box(std::span<const ObjectPoint> points, const PoolBox& box, std::int32_t owner,
                     std::size_t owner_total, std::size_t grid);

/// Samples an object's surface points in its local frame (x along length).
std::vector<std::array<double, 3>> sample_object_surface(const AnchorSizes& size,
                                                         std::size_t count, double jitter,
                                                         Rng& rng);

/// Points of an object with the given local samples placed at center/yaw,
/// rounded to single precision.
std::vector<ObjectPoint> place_object(std::span<const std::array<double, 3>> local,
                                      const std::array<double, 3>& center, double yaw,
                                      std::int32_t owner);

class SyntheticExtractor final : public FeatureExtractor {
 public:
  SyntheticExtractor(SyntheticDomain domain, std::shared_ptr<const std::vector<SyntheticFrame>> frames,
                     AnchorSizes detector_anchor, SurrogateConfig config);

  std::size_t feature_dim() const override;
  AnchorSizes source_anchor() const override { return anchor_; }
  std::vector<FrameId> frames() const override;
  std::vector<ScoredProposal> propose(FrameId frame, const AnchorSizes& sizes,
                                      SizeResiduals policy) const override;

  const SyntheticDomain& domain() const noexcept { return domain_; }
  const SurrogateConfig& config() const noexcept { return config_; }
  const std::vector<SyntheticFrame>& frame_data() const noexcept { return *frames_; }
  const SyntheticFrame& frame(FrameId id) const;

  /// Same frames seen through a detector configured with another anchor.
  std::shared_ptr<const SyntheticExtractor> with_anchor(const AnchorSizes& anchor) const;

  std::size_t object_count() const;

 private:
  SyntheticDomain domain_;
  std::shared_ptr<const std::vector<SyntheticFrame>> frames_;
  AnchorSizes anchor_;
  SurrogateConfig config_;
};

/// Generates n_frames frames deterministically from spec.seed. The detector
/// anchor defaults to the domain's mean size (a detector trained on it).
std::shared_ptr<const SyntheticExtractor> generate_domain(
    const SyntheticDomain& spec, std::size_t n_frames,
    std::optional<AnchorSizes> detector_anchor = std::nullopt, SurrogateConfig config = {},
    std::size_t threads = 1);

// ---------------------------------------------------------------------------

template <typename Fn>
void SyntheticFrame::for_each_near(double x0, double y0, double x1, double y1, Fn&& fn) const {
  const int bx0 = bucket_x(x0), bx1 = bucket_x(x1);
  const int by0 = bucket_y(y0), by1 = bucket_y(y1);
  for (int bx = bx0; bx <= bx1; ++bx) {
    const auto row = static_cast<std::size_t>(bx) * static_cast<std::size_t>(ny_);
    const std::uint32_t begin = bucket_start_[row + static_cast<std::size_t>(by0)];
    const std::uint32_t end = bucket_start_[row + static_cast<std::size_t>(by1) + 1];
    for (std::uint32_t i = begin; i < end; ++i) {
      fn(points_[i]);
    }
  }
}

}  // namespace anchorcal
