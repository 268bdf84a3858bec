#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "anchorcal/core.hpp"

namespace anchorcal {

/// Mixture of K diagonal-covariance Gaussians over R^D. Immutable.
class Gmm {
 public:
  /// means and variances are K*D row-major. Validates shapes, weight
  /// normalization (1e-9), positivity and finiteness.
  Gmm(std::size_t dim, std::vector<double> weights, std::vector<double> means,
      std::vector<double> variances);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t components() const noexcept { return weights_.size(); }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<const double> means() const noexcept { return means_; }
  std::span<const double> variances() const noexcept { return variances_; }
  std::span<const double> mean(std::size_t k) const;
  std::span<const double> variance(std::size_t k) const;

  /// log sum_k w_k N(f | mu_k, diag(var_k)), evaluated with log-sum-exp.
  double log_pdf(std::span<const double> f) const;
  double log_pdf(const FeatureVector& f) const { return log_pdf(f.values()); }

  /// log w_k + log N(f | mu_k, var_k) for every component, written to out.
  void component_log_densities(std::span<const double> f, std::span<double> out) const;

  /// Largest component peak log N(mu_k | mu_k, var_k); an upper bound on log_pdf.
  double peak_log_density() const noexcept { return peak_log_density_; }

  friend bool operator==(const Gmm& a, const Gmm& b) {
    return a.dim_ == b.dim_ && a.weights_ == b.weights_ && a.means_ == b.means_ &&
           a.variances_ == b.variances_;
  }

 private:
  std::size_t dim_;
  std::vector<double> weights_;
  std::vector<double> means_;
  std::vector<double> variances_;
  std::vector<double> inv_variances_;
  std::vector<double> log_norm_;  // log w_k - 0.5 * (D log 2pi + sum log var_k)
  double peak_log_density_;
};

struct EmConfig {
  std::size_t k = 8;
  std::size_t max_iters = 200;
  double ll_tolerance = 1e-6;
  std::size_t restarts = 3;
  double variance_floor = 1e-6;
  std::uint64_t seed = 0;
  /// Upper bound on the number of samples considered by k-means++ seeding.
  std::size_t seeding_subsample = 2000;

  void validate() const;
};

struct EmFit {
  Gmm model;
  /// Average log-likelihood before each M-step plus the final value, per restart.
  std::vector<std::vector<double>> ll_traces;
  std::size_t best_restart = 0;
  double final_average_ll = 0.0;
};

/// EM with k-means++ seeding. The result does not depend on row order or on
/// `threads`; it is fully determined by the database contents and cfg.seed.
EmFit fit_em_detailed(const FeatureDatabase& db, const EmConfig& cfg, std::size_t threads = 1);

inline Gmm fit_em(const FeatureDatabase& db, const EmConfig& cfg, std::size_t threads = 1) {
  return fit_em_detailed(db, cfg, threads).model;
}

/// Per-sample average log-likelihood of db under model. Throws ZeroFeatures
/// on an empty database.
double fitness(const FeatureDatabase& db, const Gmm& model, std::size_t threads = 1);

}  // namespace anchorcal
