#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "anchorcal/error.hpp"
#include "anchorcal/extractor.hpp"
#include "anchorcal/synthdet.hpp"

using namespace anchorcal;

namespace {

SyntheticDomain clean_domain() {
  SyntheticDomain d;
  d.name = "clean";
  d.mean_size = AnchorSizes(1.8, 4.4, 1.6);
  d.size_stddev = {0.0, 0.0, 0.0};
  d.objects_per_frame = 3.0;
  d.points_per_object = 30.0;
  d.clutter_rate = 0.0;
  d.center_noise = 0.0;
  d.yaw_noise = 0.0;
  d.size_noise = 0.0;
  d.seed = 11;
  return d;
}

SyntheticDomain cluttered_domain() {
  SyntheticDomain d;
  d.name = "cluttered";
  d.mean_size = AnchorSizes(1.6, 3.9, 1.5);
  d.size_stddev = {0.016, 0.039, 0.015};
  d.points_per_object = 10.0;
  d.clutter_rate = 25000.0;
  d.center_noise = 0.0;
  d.seed = 5;
  return d;
}

// Box-local coordinates of a world point, written out independently.
std::array<double, 3> to_local(const ObjectPoint& p, const std::array<double, 3>& c, double yaw) {
  const double dx = p.x - c[0], dy = p.y - c[1];
  return {std::cos(yaw) * dx + std::sin(yaw) * dy, -std::sin(yaw) * dx + std::cos(yaw) * dy,
          p.z - c[2]};
}

struct Count {
  std::size_t owner = 0, other = 0;
};

// Brute-force count over every frame point for an object-centered box.
Count count_in_box(const SyntheticFrame& f, std::size_t k, const std::array<double, 3>& size_wlh,
                   double yaw) {
  const auto& obj = f.objects()[k];
  Count c;
  for (const auto& p : f.points()) {
    const auto q = to_local(p, obj.center_estimate, yaw);
    if (std::fabs(q[0]) <= 0.5 * size_wlh[1] && std::fabs(q[1]) <= 0.5 * size_wlh[0] &&
        std::fabs(q[2]) <= 0.5 * size_wlh[2]) {
      (p.owner == static_cast<int>(k) ? c.owner : c.other)++;
    }
  }
  return c;
}

double oracle_score(const SyntheticFrame& f, std::size_t k, const std::array<double, 3>& size_wlh) {
  const auto& obj = f.objects()[k];
  double best = -1.0;
  for (double turn : {0.0, 0.5 * std::numbers::pi}) {
    const Count c = count_in_box(f, k, size_wlh, obj.yaw_estimate + turn);
    if (c.owner + c.other == 0) continue;
    const double missed = static_cast<double>(obj.point_count - c.owner);
    best = std::max(best, c.owner / (c.owner + c.other + missed));
  }
  return best;
}

double mean_score(const SyntheticExtractor& ex, const AnchorSizes& sizes) {
  double sum = 0.0;
  std::size_t n = 0;
  for (FrameId f : ex.frames()) {
    for (const auto& p : ex.propose(f, sizes, SizeResiduals::Suppress)) {
      sum += p.score;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

TEST_CASE("zero objects per frame gives empty frames") {
  auto d = clean_domain();
  d.objects_per_frame = 0.0;
  d.clutter_rate = 100.0;
  const auto ex = generate_domain(d, 10);
  CHECK(ex->object_count() == 0);
  for (FrameId f : ex->frames()) {
    CHECK(ex->propose(f, d.mean_size, SizeResiduals::Suppress).empty());
  }
}

TEST_CASE("generation is deterministic and thread independent") {
  const auto d = cluttered_domain();
  const auto a = generate_domain(d, 6, std::nullopt, {}, 1);
  const auto b = generate_domain(d, 6, std::nullopt, {}, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& pa = a->frame_data()[i].points();
    const auto& pb = b->frame_data()[i].points();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t j = 0; j < pa.size(); ++j) {
      CHECK(pa[j].x == pb[j].x);
      CHECK(pa[j].y == pb[j].y);
      CHECK(pa[j].z == pb[j].z);
      CHECK(pa[j].owner == pb[j].owner);
    }
    const auto qa = a->propose(FrameId{static_cast<std::uint32_t>(i)}, d.mean_size, SizeResiduals::Apply);
    const auto qb = b->propose(FrameId{static_cast<std::uint32_t>(i)}, d.mean_size, SizeResiduals::Apply);
    REQUIRE(qa.size() == qb.size());
    for (std::size_t j = 0; j < qa.size(); ++j) {
      CHECK(qa[j].score == qb[j].score);
      CHECK(qa[j].feature == qb[j].feature);
    }
  }
}

TEST_CASE("object count follows the Poisson rate") {
  auto d = cluttered_domain();
  d.objects_per_frame = 4.0;
  d.clutter_rate = 0.0;
  const auto ex = generate_domain(d, 100);
  const double n = static_cast<double>(ex->object_count());
  CHECK(std::fabs(n - 400.0) <= 3.0 * std::sqrt(400.0));
}

TEST_CASE("true box with no clutter scores 1 and pools the canonical descriptor") {
  const auto d = clean_domain();
  const auto ex = generate_domain(d, 5);
  const std::size_t g = ex->config().grid;
  std::size_t checked = 0;
  for (FrameId f : ex->frames()) {
    const auto& fr = ex->frame(f);
    const auto props = ex->propose(f, d.mean_size, SizeResiduals::Suppress);
    REQUIRE(props.size() == fr.objects().size());
    for (std::size_t k = 0; k < props.size(); ++k) {
      const auto& obj = fr.objects()[k];
      CHECK(props[k].score == 1.0);
      // Canonical descriptor: the object's own points binned in its own frame.
      std::vector<double> expected(g * g * g, 0.0);
      std::size_t own = 0;
      for (const auto& p : fr.points()) {
        if (p.owner != static_cast<int>(k)) continue;
        const auto q = to_local(p, obj.center, obj.yaw);
        const auto bin = [&](double v, double extent) {
          const auto i = static_cast<std::size_t>(std::floor((v / extent + 0.5) * static_cast<double>(g)));
          return std::min(i, g - 1);
        };
        ++expected[(bin(q[0], obj.size.l()) * g + bin(q[1], obj.size.w())) * g + bin(q[2], obj.size.h())];
        ++own;
      }
      for (auto& x : expected) x /= static_cast<double>(own);
      const auto& got = props[k].feature.values();
      REQUIRE(got.size() == expected.size());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
      ++checked;
    }
  }
  CHECK(checked >= 5);
}

TEST_CASE("half-size anchor scores lower, matching a brute-force count") {
  const auto d = clean_domain();
  const auto ex = generate_domain(d, 5);
  const AnchorSizes half(0.9, 2.2, 0.8);
  for (FrameId f : ex->frames()) {
    const auto& fr = ex->frame(f);
    const auto full = ex->propose(f, d.mean_size, SizeResiduals::Suppress);
    const auto small = ex->propose(f, half, SizeResiduals::Suppress);
    REQUIRE(full.size() == small.size());
    for (std::size_t k = 0; k < small.size(); ++k) {
      CHECK(small[k].score < full[k].score);
      CHECK(small[k].score == doctest::Approx(oracle_score(fr, k, half.values())).epsilon(1e-12));
    }
  }
}

TEST_CASE("double-size anchor scores lower on average under clutter") {
  const auto d = cluttered_domain();
  const auto ex = generate_domain(d, 100);
  const AnchorSizes twice(2.0 * d.mean_size.w(), 2.0 * d.mean_size.l(), 2.0 * d.mean_size.h());
  CHECK(mean_score(*ex, twice) < mean_score(*ex, d.mean_size));
}

TEST_CASE("mean score per axis peaks at the grid point nearest the truth") {
  const auto d = cluttered_domain();
  const auto ex = generate_domain(d, 60);
  REQUIRE(ex->object_count() >= 200);
  // Default sweep grid around the domain's own detector anchor.
  const AnchorSizes source = ex->source_anchor();
  for (Axis axis : kAllAxes) {
    const auto a = static_cast<std::size_t>(axis);
    std::vector<double> values, scores;
    for (int i = 0; i < 21; ++i) {
      auto v = d.mean_size.values();
      v[a] = source.values()[a] * (0.5 + 0.05 * i);
      values.push_back(v[a]);
      scores.push_back(mean_score(*ex, AnchorSizes(v[0], v[1], v[2])));
    }
    const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (std::fabs(values[i] - d.mean_size.values()[a]) < std::fabs(values[nearest] - d.mean_size.values()[a])) {
        nearest = i;
      }
    }
    INFO("axis " << axis_name(axis));
    CHECK(best == nearest);
    for (std::size_t i = 1; i <= best; ++i) CHECK(scores[i] >= scores[i - 1]);
    for (std::size_t i = best + 1; i < scores.size(); ++i) CHECK(scores[i] <= scores[i - 1]);
  }
}

TEST_CASE("occupancy is identical for yaw 0 and yaw pi with an aligned box") {
  Rng rng(3);
  const AnchorSizes size(1.7, 4.1, 1.5);
  const auto local = sample_object_surface(size, 400, 0.2, rng);
  const std::array<double, 3> c{2.0, -3.0, 0.75};
  for (std::size_t g : {2u, 4u, 5u}) {
    const auto p0 = place_object(local, c, 0.0, 0);
    const auto p1 = place_object(local, c, std::numbers::pi, 0);
    const auto b0 = pool_box(p0, PoolBox{c, size.values(), 0.0}, 0, p0.size(), g);
    const auto b1 = pool_box(p1, PoolBox{c, size.values(), std::numbers::pi}, 0, p1.size(), g);
    CHECK(b0.owner_captured == 400);
    CHECK(b0.feature == b1.feature);
  }
}

TEST_CASE("object points stay within 1.5x the true extents") {
  const auto d = cluttered_domain();
  const auto ex = generate_domain(d, 20);
  for (const auto& fr : ex->frame_data()) {
    for (const auto& p : fr.points()) {
      if (p.owner < 0) continue;
      const auto& obj = fr.objects()[static_cast<std::size_t>(p.owner)];
      const auto q = to_local(p, obj.center, obj.yaw);
      CHECK(std::fabs(q[0]) <= 0.75 * obj.size.l());
      CHECK(std::fabs(q[1]) <= 0.75 * obj.size.w());
      CHECK(std::fabs(q[2]) <= 0.75 * obj.size.h());
    }
  }
}

TEST_CASE("three well-separated objects all score at least 0.9 with the true anchor") {
  SyntheticDomain d = clean_domain();
  d.objects_per_frame = 3.0;
  const auto ex = generate_domain(d, 1);
  const auto& fr = ex->frame(FrameId{0});
  std::vector<SyntheticObject> objs;
  std::vector<ObjectPoint> pts;
  Rng rng(9);
  const std::array<std::array<double, 3>, 3> centers{{{-10, -10, 0.8}, {0, 5, 0.8}, {12, -3, 0.8}}};
  for (int k = 0; k < 3; ++k) {
    SyntheticObject o;
    o.size = d.mean_size;
    o.center = centers[k];
    o.center_estimate = centers[k];
    o.yaw = o.yaw_estimate = 0.3 * k;
    o.size_estimate = d.mean_size.values();
    const auto local = sample_object_surface(o.size, 200, 0.2, rng);
    const auto placed = place_object(local, o.center, o.yaw, k);
    o.point_count = placed.size();
    pts.insert(pts.end(), placed.begin(), placed.end());
    objs.push_back(o);
  }
  (void)fr;
  auto frames = std::make_shared<std::vector<SyntheticFrame>>();
  frames->emplace_back(objs, pts, d.frame_extent);
  const SyntheticExtractor hand(d, frames, d.mean_size, {});
  const auto props = hand.propose(FrameId{0}, d.mean_size, SizeResiduals::Suppress);
  REQUIRE(props.size() == 3);
  for (const auto& p : props) CHECK(p.score >= 0.9);
}

TEST_CASE("gated cardinality matches an independent point-counting oracle") {
  const auto d = cluttered_domain();
  const auto ex = generate_domain(d, 50);
  GateConfig gate;
  gate.tau = 0.6;
  const auto frames = ex->frames();
  const auto got = collect_features(*ex, frames, d.mean_size, SizeResiduals::Suppress, gate);
  std::size_t expected = 0;
  for (FrameId f : frames) {
    const auto& fr = ex->frame(f);
    for (std::size_t k = 0; k < fr.objects().size(); ++k) {
      if (oracle_score(fr, k, d.mean_size.values()) > gate.tau) ++expected;
    }
  }
  REQUIRE(expected > 0);
  const double n = static_cast<double>(got.features.size());
  CHECK(std::fabs(n - static_cast<double>(expected)) <= 0.05 * static_cast<double>(expected));
}

TEST_CASE("shrinking the anchor by 20 percent yields fewer gated features") {
  const auto d = cluttered_domain();
  const auto ex = generate_domain(d, 50);
  GateConfig gate;
  gate.tau = 0.6;
  const auto frames = ex->frames();
  const AnchorSizes shrunk(0.8 * d.mean_size.w(), 0.8 * d.mean_size.l(), 0.8 * d.mean_size.h());
  const auto full = collect_features(*ex, frames, d.mean_size, SizeResiduals::Suppress, gate);
  const auto small = collect_features(*ex, frames, shrunk, SizeResiduals::Suppress, gate);
  CHECK(small.features.size() < full.features.size());
}

TEST_CASE("with_anchor shares frames and changes only the detector anchor") {
  const auto d = cluttered_domain();
  const auto ex = generate_domain(d, 3);
  const AnchorSizes other(2.0, 4.5, 1.7);
  const auto view = ex->with_anchor(other);
  CHECK(&view->frame_data() == &ex->frame_data());
  CHECK(view->source_anchor() == other);
  CHECK(ex->source_anchor() == d.mean_size);
}

TEST_CASE("unknown frames are rejected") {
  const auto ex = generate_domain(clean_domain(), 2);
  CHECK_THROWS_AS(ex->propose(FrameId{2}, AnchorSizes(1, 1, 1), SizeResiduals::Apply), Error);
  try {
    ex->propose(FrameId{7}, AnchorSizes(1, 1, 1), SizeResiduals::Apply);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownFrame);
  }
}

TEST_CASE("domain validation names the field") {
  const auto message = [](SyntheticDomain d) {
    try {
      d.validate();
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidConfig);
      return std::string(e.what());
    }
    return std::string();
  };
  auto d = clean_domain();
  d.objects_per_frame = -1.0;
  CHECK(message(d).find("domain.objects_per_frame") != std::string::npos);
  d = clean_domain();
  d.points_per_object = 0.0;
  CHECK(message(d).find("domain.points_per_object") != std::string::npos);
  d = clean_domain();
  d.size_stddev = {1.0, 0.0, 0.0};
  CHECK(message(d).find("domain.size_stddev.w") != std::string::npos);
  d = clean_domain();
  d.size_noise = 0.7;
  CHECK(message(d).find("domain.size_noise") != std::string::npos);
  SurrogateConfig s;
  s.grid = 0;
  CHECK_THROWS_AS(s.validate(), Error);
  CHECK_THROWS_AS(generate_domain(clean_domain(), 0), Error);
}
