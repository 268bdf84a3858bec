#include "anchorcal/synthdet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "anchorcal/error.hpp"
#include "anchorcal/parallel.hpp"

namespace anchorcal {
namespace {

constexpr double kBucketSize = 1.0;
constexpr double kPi = std::numbers::pi;

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) {
    throw Error(ErrorKind::InvalidConfig, "domain." + field + " " + rule);
  }
}

double footprint_radius(const AnchorSizes& s) {
  return 0.5 * std::hypot(s.w(), s.l());
}

bool inside_box(const std::array<double, 3>& p, const std::array<double, 3>& center,
                const AnchorSizes& size, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double dx = p[0] - center[0], dy = p[1] - center[1], dz = p[2] - center[2];
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::fabs(lx) <= 0.5 * size.l() && std::fabs(ly) <= 0.5 * size.w() &&
         std::fabs(dz) <= 0.5 * size.h();
}

// Streaming form of pool_box so frames can feed points straight from buckets.
class BoxPooler {
 public:
  BoxPooler(const PoolBox& box, std::int32_t owner, std::size_t grid)
      : box_(box),
        owner_(owner),
        grid_(grid),
        cos_(std::cos(box.yaw)),
        sin_(std::sin(box.yaw)),
        counts_(grid * grid * grid, 0) {}

  void add(const ObjectPoint& p) {
    const double dx = static_cast<double>(p.x) - box_.center[0];
    const double dy = static_cast<double>(p.y) - box_.center[1];
    const double dz = static_cast<double>(p.z) - box_.center[2];
    const double lx = cos_ * dx + sin_ * dy;
    const double ly = -sin_ * dx + cos_ * dy;
    const double hl = 0.5 * box_.size[1], hw = 0.5 * box_.size[0], hh = 0.5 * box_.size[2];
    if (std::fabs(lx) > hl || std::fabs(ly) > hw || std::fabs(dz) > hh) {
      return;
    }
    const auto cell = [&](double v, double half, double extent) {
      const auto g = static_cast<double>(grid_);
      const auto i = static_cast<std::size_t>(std::floor((v + half) / extent * g));
      return std::min(i, grid_ - 1);
    };
    const std::size_t ix = cell(lx, hl, box_.size[1]);
    const std::size_t iy = cell(ly, hw, box_.size[0]);
    const std::size_t iz = cell(dz, hh, box_.size[2]);
    ++counts_[(ix * grid_ + iy) * grid_ + iz];
    if (p.owner == owner_ && owner_ >= 0) {
      ++owner_captured_;
    } else {
      ++other_captured_;
    }
  }

  BoxContents finish(std::size_t owner_total) const {
    BoxContents out;
    out.owner_captured = owner_captured_;
    out.other_captured = other_captured_;
    out.owner_total = owner_total;
    const std::size_t captured = owner_captured_ + other_captured_;
    out.feature.assign(counts_.size(), 0.0);
    if (captured > 0) {
      const double inv = 1.0 / static_cast<double>(captured);
      for (std::size_t i = 0; i < counts_.size(); ++i) {
        out.feature[i] = static_cast<double>(counts_[i]) * inv;
      }
    }
    const std::size_t missed = owner_total > owner_captured_ ? owner_total - owner_captured_ : 0;
    const std::size_t denom = owner_captured_ + other_captured_ + missed;
    out.score = denom == 0 ? 0.0
                           : static_cast<double>(owner_captured_) / static_cast<double>(denom);
    return out;
  }

 private:
  PoolBox box_;
  std::int32_t owner_;
  std::size_t grid_;
  double cos_, sin_;
  std::vector<std::uint32_t> counts_;
  std::size_t owner_captured_ = 0;
  std::size_t other_captured_ = 0;
};

SyntheticFrame generate_frame(const SyntheticDomain& spec, std::size_t index) {
  Rng rng(mix_seed(spec.seed, index));
  const double half_x = 0.5 * spec.frame_extent[0];
  const double half_y = 0.5 * spec.frame_extent[1];

  std::vector<SyntheticObject> objects;
  std::vector<ObjectPoint> points;
  const auto wanted = poisson(rng, spec.objects_per_frame);
  for (std::uint64_t n = 0; n < wanted; ++n) {
    std::array<double, 3> dims{};
    for (int a = 0; a < 3; ++a) {
      const double mean = spec.mean_size.values()[a];
      do {
        dims[a] = normal(rng, mean, spec.size_stddev[a]);
      } while (dims[a] < 0.1 * mean);
    }
    SyntheticObject obj;
    obj.size = AnchorSizes(dims[0], dims[1], dims[2]);
    obj.yaw = uniform(rng, -kPi, kPi);
    const double radius = footprint_radius(obj.size);

    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      const double x = uniform(rng, -half_x + radius, half_x - radius);
      const double y = uniform(rng, -half_y + radius, half_y - radius);
      placed = std::all_of(objects.begin(), objects.end(), [&](const SyntheticObject& o) {
        return std::hypot(o.center[0] - x, o.center[1] - y) >=
               footprint_radius(o.size) + radius + 1.0;
      });
      obj.center = {x, y, 0.5 * obj.size.h()};
    }
    if (!placed) {
      continue;
    }
    for (int a = 0; a < 3; ++a) {
      obj.center_estimate[a] = obj.center[a] + normal(rng, 0.0, spec.center_noise);
    }
    obj.yaw_estimate = normalize_angle(obj.yaw + normal(rng, 0.0, spec.yaw_noise));
    for (int a = 0; a < 3; ++a) {
      obj.size_estimate[a] =
          std::max(0.05, dims[a] * (1.0 + normal(rng, 0.0, spec.size_noise)));
    }
    const double volume = dims[0] * dims[1] * dims[2];
    const auto count = static_cast<std::size_t>(poisson(rng, spec.points_per_object * volume));
    const auto local = sample_object_surface(obj.size, count, spec.surface_jitter, rng);
    const auto owner = static_cast<std::int32_t>(objects.size());
    auto placed_points = place_object(local, obj.center, obj.yaw, owner);
    obj.point_count = placed_points.size();
    points.insert(points.end(), placed_points.begin(), placed_points.end());
    objects.push_back(obj);
  }

  const auto clutter = poisson(rng, spec.clutter_rate);
  for (std::uint64_t n = 0; n < clutter; ++n) {
    const std::array<double, 3> p{uniform(rng, -half_x, half_x), uniform(rng, -half_y, half_y),
                                  uniform(rng, 0.0, spec.frame_extent[2])};
    // Object interiors are solid.
    const bool occluded = std::any_of(objects.begin(), objects.end(), [&](const SyntheticObject& o) {
      return inside_box(p, o.center, o.size, o.yaw);
    });
    if (!occluded) {
      points.push_back({static_cast<float>(p[0]), static_cast<float>(p[1]),
                        static_cast<float>(p[2]), -1});
    }
  }
  return SyntheticFrame(std::move(objects), std::move(points), spec.frame_extent);
}

}  // namespace

void SyntheticDomain::validate() const {
  require(objects_per_frame >= 0.0 && std::isfinite(objects_per_frame), "objects_per_frame",
          "must be >= 0");
  require(points_per_object > 0.0 && std::isfinite(points_per_object), "points_per_object",
          "must be > 0");
  require(clutter_rate >= 0.0 && std::isfinite(clutter_rate), "clutter_rate", "must be >= 0");
  for (int a = 0; a < 3; ++a) {
    const std::string axis(axis_name(kAllAxes[a]));
    require(size_stddev[a] >= 0.0, "size_stddev." + axis, "must be >= 0");
    require(mean_size.values()[a] > 3.0 * size_stddev[a], "size_stddev." + axis,
            "must be below a third of the mean size");
    require(frame_extent[a] > 0.0, "frame_extent", "must be positive");
  }
  const double span = footprint_radius(mean_size) * 2.0 + 1.0;
  require(frame_extent[0] > span && frame_extent[1] > span, "frame_extent",
          "must fit at least one object");
  require(surface_jitter >= 0.0, "surface_jitter", "must be >= 0");
  require(center_noise >= 0.0, "center_noise", "must be >= 0");
  require(yaw_noise >= 0.0, "yaw_noise", "must be >= 0");
  require(size_noise >= 0.0 && size_noise < 0.5, "size_noise", "must lie in [0, 0.5)");
}

void SurrogateConfig::validate() const {
  if (grid < 1 || grid > 16) {
    throw Error(ErrorKind::InvalidConfig, "surrogate.grid must lie in [1, 16]");
  }
}

std::vector<std::array<double, 3>> sample_object_surface(const AnchorSizes& size,
                                                         std::size_t count, double jitter,
                                                         Rng& rng) {
  // Local frame: x along length, y along width, z up.
  const std::array<double, 3> half{0.5 * size.l(), 0.5 * size.w(), 0.5 * size.h()};
  const std::array<double, 3> face_area{size.w() * size.h(), size.l() * size.h(),
                                        size.l() * size.w()};
  const double total = 2.0 * (face_area[0] + face_area[1] + face_area[2]);
  std::vector<std::array<double, 3>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    double pick = uniform01(rng) * total;
    int axis = 0;
    while (axis < 2 && pick >= 2.0 * face_area[axis]) {
      pick -= 2.0 * face_area[axis];
      ++axis;
    }
    const double sign = pick < face_area[axis] ? 1.0 : -1.0;
    std::array<double, 3> p{};
    for (int a = 0; a < 3; ++a) {
      p[a] = uniform(rng, -half[a], half[a]);
    }
    const double depth = std::min(std::fabs(standard_normal(rng)) * jitter * half[axis], half[axis]);
    p[axis] = sign * (half[axis] - depth);
    out.push_back(p);
  }
  return out;
}

std::vector<ObjectPoint> place_object(std::span<const std::array<double, 3>> local,
                                      const std::array<double, 3>& center, double yaw,
                                      std::int32_t owner) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  std::vector<ObjectPoint> out;
  out.reserve(local.size());
  for (const auto& q : local) {
    out.push_back({static_cast<float>(center[0] + c * q[0] - s * q[1]),
                   static_cast<float>(center[1] + s * q[0] + c * q[1]),
                   static_cast<float>(center[2] + q[2]), owner});
  }
  return out;
}

BoxContents pool_box(std::span<const ObjectPoint> points, const PoolBox& box, std::int32_t owner,
                     std::size_t owner_total, std::size_t grid) {
  BoxPooler pooler(box, owner, grid);
  for (const auto& p : points) {
    pooler.add(p);
  }
  return pooler.finish(owner_total);
}

SyntheticFrame::SyntheticFrame(std::vector<SyntheticObject> objects,
                               std::vector<ObjectPoint> points, std::array<double, 3> extent)
    : objects_(std::move(objects)),
      origin_x_(-0.5 * extent[0]),
      origin_y_(-0.5 * extent[1]),
      nx_(std::max(1, static_cast<int>(std::ceil(extent[0] / kBucketSize)))),
      ny_(std::max(1, static_cast<int>(std::ceil(extent[1] / kBucketSize)))) {
  const std::size_t buckets = static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_);
  std::vector<std::uint32_t> key(points.size());
  std::vector<std::uint32_t> count(buckets + 1, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    key[i] = static_cast<std::uint32_t>(bucket_x(points[i].x) * ny_ + bucket_y(points[i].y));
    ++count[key[i] + 1];
  }
  std::partial_sum(count.begin(), count.end(), count.begin());
  bucket_start_ = count;
  points_.resize(points.size());
  // Counting sort keeps the generation order within a bucket.
  for (std::size_t i = 0; i < points.size(); ++i) {
    points_[count[key[i]]++] = points[i];
  }
}

int SyntheticFrame::bucket_x(double x) const {
  return std::clamp(static_cast<int>(std::floor((x - origin_x_) / kBucketSize)), 0, nx_ - 1);
}

int SyntheticFrame::bucket_y(double y) const {
  return std::clamp(static_cast<int>(std::floor((y - origin_y_) / kBucketSize)), 0, ny_ - 1);
}

SyntheticExtractor::SyntheticExtractor(SyntheticDomain domain,
                                       std::shared_ptr<const std::vector<SyntheticFrame>> frames,
                                       AnchorSizes detector_anchor, SurrogateConfig config)
    : domain_(std::move(domain)),
      frames_(std::move(frames)),
      anchor_(detector_anchor),
      config_(config) {
  config_.validate();
}

std::size_t SyntheticExtractor::feature_dim() const {
  return config_.grid * config_.grid * config_.grid;
}

std::vector<FrameId> SyntheticExtractor::frames() const {
  std::vector<FrameId> ids(frames_->size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = FrameId{static_cast<std::uint32_t>(i)};
  }
  return ids;
}

const SyntheticFrame& SyntheticExtractor::frame(FrameId id) const {
  if (id.value >= frames_->size()) {
    throw Error(ErrorKind::UnknownFrame, "frame " + std::to_string(id.value) +
                                             " is not part of domain '" + domain_.name + "'");
  }
  return (*frames_)[id.value];
}

std::size_t SyntheticExtractor::object_count() const {
  std::size_t n = 0;
  for (const auto& f : *frames_) n += f.objects().size();
  return n;
}

std::shared_ptr<const SyntheticExtractor> SyntheticExtractor::with_anchor(
    const AnchorSizes& anchor) const {
  return std::make_shared<const SyntheticExtractor>(domain_, frames_, anchor, config_);
}

std::vector<ScoredProposal> SyntheticExtractor::propose(FrameId id, const AnchorSizes& sizes,
                                                        SizeResiduals policy) const {
  const SyntheticFrame& fr = frame(id);
  std::vector<ScoredProposal> out;
  const auto& objects = fr.objects();
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const SyntheticObject& obj = objects[k];
    const std::array<double, 3> residual{obj.size_estimate[0] - sizes.w(),
                                         obj.size_estimate[1] - sizes.l(),
                                         obj.size_estimate[2] - sizes.h()};
    PoolBox box;
    box.center = obj.center_estimate;
    box.size = policy == SizeResiduals::Suppress
                   ? sizes.values()
                   : std::array<double, 3>{obj.size_estimate[0], obj.size_estimate[1],
                                           obj.size_estimate[2]};
    // Anchors sit on a 1 m ground grid at two orientations, 0 and pi/2.
    const std::array<double, 3> anchor_pos{std::round(obj.center_estimate[0]),
                                           std::round(obj.center_estimate[1]), 0.5 * sizes.h()};

    std::optional<ScoredProposal> best;
    for (int orientation = 0; orientation < 2; ++orientation) {
      const double anchor_yaw = orientation == 0 ? 0.0 : 0.5 * kPi;
      // The aligned anchor's yaw regression succeeds; the perpendicular one
      // keeps its box rotated by a quarter turn.
      box.yaw = normalize_angle(obj.yaw_estimate + (orientation == 0 ? 0.0 : 0.5 * kPi));
      const double reach = 0.5 * std::hypot(box.size[0], box.size[1]);
      BoxPooler pooler(box, static_cast<std::int32_t>(k), config_.grid);
      fr.for_each_near(box.center[0] - reach, box.center[1] - reach, box.center[0] + reach,
                       box.center[1] + reach, [&](const ObjectPoint& p) { pooler.add(p); });
      BoxContents contents = pooler.finish(obj.point_count);
      if (contents.owner_captured + contents.other_captured == 0) {
        continue;
      }
      ScoredProposal p;
      p.score = contents.score;
      for (int a = 0; a < 3; ++a) {
        p.center_residuals[a] = obj.center_estimate[a] - anchor_pos[a];
      }
      p.yaw_residual = normalize_angle(obj.yaw_estimate - anchor_yaw);
      p.size_residuals = residual;
      p.feature = FeatureVector(std::move(contents.feature));
      if (!config_.nms) {
        out.push_back(std::move(p));
      } else if (!best || p.score > best->score) {
        best = std::move(p);
      }
    }
    if (best) {
      out.push_back(std::move(*best));
    }
  }
  return out;
}

std::shared_ptr<const SyntheticExtractor> generate_domain(const SyntheticDomain& spec,
                                                          std::size_t n_frames,
                                                          std::optional<AnchorSizes> detector_anchor,
                                                          SurrogateConfig config,
                                                          std::size_t threads) {
  spec.validate();
  config.validate();
  if (n_frames < 1) {
    throw Error(ErrorKind::InvalidConfig, "n_frames must be >= 1");
  }
  std::vector<std::optional<SyntheticFrame>> slots(n_frames);
  parallel_for(n_frames, threads, [&](std::size_t i) { slots[i].emplace(generate_frame(spec, i)); });
  auto frames = std::make_shared<std::vector<SyntheticFrame>>();
  frames->reserve(n_frames);
  for (auto& s : slots) frames->push_back(std::move(*s));
  return std::make_shared<const SyntheticExtractor>(spec, std::move(frames),
                                                    detector_anchor.value_or(spec.mean_size), config);
}

}  // namespace anchorcal
