#include "anchorcal/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "anchorcal/error.hpp"
#include "anchorcal/parallel.hpp"
#include "anchorcal/random.hpp"

namespace anchorcal {

void GateConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "gate.tau must lie in [0, 1]");
  }
  if (frame_subset && !(frame_subset->fraction > 0.0 && frame_subset->fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "gate.frame_subset.fraction must lie in (0, 1]");
  }
  if (min_target_features < 1) {
    throw Error(ErrorKind::InvalidConfig, "gate.min_target_features must be >= 1");
  }
}

std::vector<FrameId> select_frames(std::span<const FrameId> frames, const GateConfig& gate) {
  if (!gate.frame_subset || gate.frame_subset->fraction >= 1.0) {
    return {frames.begin(), frames.end()};
  }
  const std::size_t n = frames.size();
  const auto keep = static_cast<std::size_t>(
      std::max(1.0, std::ceil(gate.frame_subset->fraction * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(gate.frame_subset->seed);
  for (std::size_t i = 0; i < keep && i + 1 < n; ++i) {
    std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  }
  idx.resize(std::min(keep, n));
  std::sort(idx.begin(), idx.end());
  std::vector<FrameId> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(frames[i]);
  return out;
}

GatedFeatures collect_features(const FeatureExtractor& extractor, std::span<const FrameId> frames,
                               const AnchorSizes& sizes, SizeResiduals policy,
                               const GateConfig& gate, std::size_t threads) {
  gate.validate();
  if (frames.empty()) {
    throw Error(ErrorKind::InvalidArgument, "frame list is empty");
  }
  const auto selected = select_frames(frames, gate);
  std::vector<std::vector<ScoredProposal>> per_frame(selected.size());
  parallel_for(selected.size(), threads, [&](std::size_t i) {
    per_frame[i] = extractor.propose(selected[i], sizes, policy);
  });

  GatedFeatures out{FeatureDatabase(extractor.feature_dim()), 0, 0.0};
  double score_sum = 0.0;
  for (const auto& proposals : per_frame) {
    for (const auto& p : proposals) {
      ++out.proposals;
      score_sum += p.score;
      if (p.score > gate.tau) {
        out.features.push_back(p.feature);
      }
    }
  }
  if (out.proposals > 0) {
    out.mean_score = score_sum / static_cast<double>(out.proposals);
  }
  if (gate.max_features) {
    out.features.truncate(*gate.max_features);
  }
  return out;
}

FeatureDatabase build_reference_db(const FeatureExtractor& extractor,
                                   std::span<const FrameId> frames, const GateConfig& gate,
                                   std::size_t threads) {
  const auto policy =
      gate.suppress_size_residuals_in_reference ? SizeResiduals::Suppress : SizeResiduals::Apply;
  auto collected =
      collect_features(extractor, frames, extractor.source_anchor(), policy, gate, threads);
  if (collected.features.empty()) {
    throw Error(ErrorKind::ZeroFeatures,
                "no proposal exceeded tau=" + std::to_string(gate.tau) +
                    " while building the reference database; lower the threshold");
  }
  return std::move(collected.features);
}

FeatureDatabase build_target_db(const FeatureExtractor& extractor, std::span<const FrameId> frames,
                                const AnchorSizes& sizes, const GateConfig& gate,
                                std::size_t threads) {
  return collect_features(extractor, frames, sizes, SizeResiduals::Suppress, gate, threads)
      .features;
}

}  // namespace anchorcal
