#pragma once

// The frozen-detector contract and the two feature-database builders.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "anchorcal/core.hpp"

namespace anchorcal {

struct FrameId {
  std::uint32_t value = 0;
  friend auto operator<=>(const FrameId&, const FrameId&) = default;
};

/// Whether predicted size residuals are applied to the box a feature is
/// pooled from. Calibration always suppresses them so that only the anchor
/// sizes shape the feature.
enum class SizeResiduals { Suppress, Apply };

/// A frozen region-proposal stage bound to one domain. Implementations must
/// be stateless: identical (frame, sizes, policy) inputs give bit-identical
/// proposals, and propose may be called concurrently.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual std::size_t feature_dim() const = 0;
  /// The anchor the detector was trained with.
  virtual AnchorSizes source_anchor() const = 0;
  virtual std::vector<FrameId> frames() const = 0;
  /// Throws UnknownFrame for a frame outside the domain.
  virtual std::vector<ScoredProposal> propose(FrameId frame, const AnchorSizes& sizes,
                                              SizeResiduals policy) const = 0;
};

using ExtractorHandle = std::shared_ptr<const FeatureExtractor>;

struct FrameSubset {
  double fraction = 1.0;  // in (0, 1]
  std::uint64_t seed = 0;
};

struct GateConfig {
  double tau = 0.6;
  std::optional<std::size_t> max_features;
  std::optional<FrameSubset> frame_subset;
  bool suppress_size_residuals_in_reference = true;
  /// Target databases with fewer features score as empty. An average over a
  /// handful of survivors is too noisy to compare against a full database.
  std::size_t min_target_features = 1;

  void validate() const;
};

/// Applies gate.frame_subset: seeded shuffle, keep a prefix, restore input order.
std::vector<FrameId> select_frames(std::span<const FrameId> frames, const GateConfig& gate);

struct GatedFeatures {
  FeatureDatabase features;
  std::size_t proposals = 0;   // before gating
  double mean_score = 0.0;     // over all proposals, 0 when there are none
};

/// Features of every proposal with score > tau, concatenated in frame order,
/// truncated to gate.max_features.
GatedFeatures collect_features(const FeatureExtractor& extractor, std::span<const FrameId> frames,
                               const AnchorSizes& sizes, SizeResiduals policy,
                               const GateConfig& gate, std::size_t threads = 1);

/// Reference database under the extractor's source anchor. Throws
/// ZeroFeatures when the gate admits nothing.
FeatureDatabase build_reference_db(const FeatureExtractor& extractor,
                                   std::span<const FrameId> frames, const GateConfig& gate,
                                   std::size_t threads = 1);

/// Target database under candidate sizes with size residuals suppressed. An
/// empty result is returned, not thrown; the optimizer maps it to the worst
/// fitness.
FeatureDatabase build_target_db(const FeatureExtractor& extractor, std::span<const FrameId> frames,
                                const AnchorSizes& sizes, const GateConfig& gate,
                                std::size_t threads = 1);

}  // namespace anchorcal
