#pragma once

// On-disk formats: SFDB feature databases, JSON models and results, CSV
// curves, and cached synthetic domains. Every writer is deterministic so
// identical inputs give byte-identical files. Failures throw Error(Io).

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "anchorcal/core.hpp"
#include "anchorcal/gmm.hpp"
#include "anchorcal/optimizer.hpp"
#include "anchorcal/synthdet.hpp"

namespace anchorcal::io {

namespace fs = std::filesystem;

/// "SFDB", u32 version 1, u32 dim, u64 count, count*dim f32, little-endian.
void write_sfdb(const fs::path& path, const FeatureDatabase& db);
FeatureDatabase read_sfdb(const fs::path& path);

void write_gmm(const fs::path& path, const Gmm& model);
Gmm read_gmm(const fs::path& path);

void write_result(const fs::path& path, const CalibrationResult& result);
CalibrationResult read_result(const fs::path& path);

/// Header "value,fitness"; -inf is written literally.
void write_curve_csv(const fs::path& path, const SweepCurve& curve);
SweepCurve read_curve_csv(const fs::path& path, Axis axis);

/// Header "generation,best_fitness".
void write_trace_csv(const fs::path& path, std::span<const double> trace);

/// Manifest JSON next to a dim-5 SFDB of points (frame, owner, x, y, z).
/// `stem` names both files: <stem>.json and <stem>.points.sfdb.
void write_domain_cache(const fs::path& dir, const std::string& stem,
                        const SyntheticExtractor& domain);
std::shared_ptr<const SyntheticExtractor> read_domain_cache(const fs::path& manifest);

/// Writes through a temporary file and renames, so readers never see a
/// partial artifact.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Shortest text that parses back to the same double; non-finite values as
/// "inf", "-inf", "nan".
std::string format_double(double x);
double parse_double(const std::string& s);

}  // namespace anchorcal::io
