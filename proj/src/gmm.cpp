#include "anchorcal/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "anchorcal/error.hpp"
#include "anchorcal/parallel.hpp"
#include "anchorcal/random.hpp"
#include "summation.hpp"

namespace anchorcal {
namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) {
    return m;
  }
  double s = 0.0;
  for (double x : xs) {
    s += std::exp(x - m);
  }
  return m + std::log(s);
}

void require_dim(std::size_t got, std::size_t want) {
  if (got != want) {
    throw Error(ErrorKind::DimensionMismatch, "feature dimension " + std::to_string(got) +
                                                  " does not match model dimension " +
                                                  std::to_string(want));
  }
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double t = a[j] - b[j];
    d += t * t;
  }
  return d;
}

// Sample indices sorted lexicographically by feature value. Every reduction in
// EM runs in this order, which makes the fit independent of database order.
std::vector<std::size_t> canonical_order(const FeatureDatabase& db) {
  std::vector<std::size_t> order(db.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = db.row(a);
    const auto rb = db.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  return order;
}

// k-means++ seeding over a seeded subsample of the canonical order.
std::vector<double> seed_means(const FeatureDatabase& db, const std::vector<std::size_t>& order,
                               const EmConfig& cfg, Rng& rng) {
  const std::size_t n = order.size();
  const std::size_t d = db.dim();
  std::vector<std::size_t> pool = order;
  const std::size_t m = std::min(n, std::max(cfg.seeding_subsample, cfg.k));
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);

  std::vector<double> means;
  means.reserve(cfg.k * d);
  auto add_center = [&](std::size_t idx) {
    const auto r = db.row(idx);
    means.insert(means.end(), r.begin(), r.end());
  };
  add_center(pool[uniform_index(rng, m)]);

  std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < cfg.k; ++c) {
    const std::span<const double> last(means.data() + (c - 1) * d, d);
    detail::CompensatedSum total;
    for (std::size_t i = 0; i < m; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(db.row(pool[i]), last));
      total.add(nearest[i]);
    }
    const double t = total.value();
    std::size_t pick = 0;
    if (t > 0.0) {
      const double target = uniform01(rng) * t;
      double acc = 0.0;
      pick = m - 1;
      for (std::size_t i = 0; i < m; ++i) {
        acc += nearest[i];
        if (acc > target && nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(uniform_index(rng, m));
    }
    add_center(pool[pick]);
  }
  return means;
}

struct EmState {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> variances;
};

}  // namespace

Gmm::Gmm(std::size_t dim, std::vector<double> weights, std::vector<double> means,
         std::vector<double> variances)
    : dim_(dim),
      weights_(std::move(weights)),
      means_(std::move(means)),
      variances_(std::move(variances)) {
  const std::size_t k = weights_.size();
  if (dim_ == 0 || k == 0) {
    throw Error(ErrorKind::InvalidArgument, "GMM needs dim >= 1 and at least one component");
  }
  if (means_.size() != k * dim_ || variances_.size() != k * dim_) {
    throw Error(ErrorKind::DimensionMismatch, "GMM parameter arrays do not match K x D");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0) || w > 1.0 || !std::isfinite(w)) {
      throw Error(ErrorKind::InvalidArgument, "GMM weights must lie in (0, 1]");
    }
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "GMM weights must sum to 1");
  }
  for (double m : means_) {
    if (!std::isfinite(m)) {
      throw Error(ErrorKind::NonFiniteInput, "GMM mean is not finite");
    }
  }
  for (double v : variances_) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::InvalidArgument, "GMM variances must be finite and positive");
    }
  }
  inv_variances_.resize(variances_.size());
  log_norm_.resize(k);
  peak_log_density_ = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    double log_det = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double v = variances_[c * dim_ + j];
      inv_variances_[c * dim_ + j] = 1.0 / v;
      log_det += std::log(v);
    }
    const double peak = -0.5 * (static_cast<double>(dim_) * kLog2Pi + log_det);
    log_norm_[c] = std::log(weights_[c]) + peak;
    peak_log_density_ = std::max(peak_log_density_, peak);
  }
}

std::span<const double> Gmm::mean(std::size_t k) const {
  return std::span<const double>(means_).subspan(k * dim_, dim_);
}

std::span<const double> Gmm::variance(std::size_t k) const {
  return std::span<const double>(variances_).subspan(k * dim_, dim_);
}

void Gmm::component_log_densities(std::span<const double> f, std::span<double> out) const {
  require_dim(f.size(), dim_);
  for (std::size_t c = 0; c < weights_.size(); ++c) {
    const double* mu = means_.data() + c * dim_;
    const double* iv = inv_variances_.data() + c * dim_;
    double q = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double t = f[j] - mu[j];
      q += t * t * iv[j];
    }
    out[c] = log_norm_[c] - 0.5 * q;
  }
}

double Gmm::log_pdf(std::span<const double> f) const {
  std::vector<double> comp(weights_.size());
  component_log_densities(f, comp);
  return log_sum_exp(comp);
}

void EmConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, msg);
  };
  require(k >= 1, "em.k must be >= 1");
  require(max_iters >= 1, "em.max_iters must be >= 1");
  require(restarts >= 1, "em.restarts must be >= 1");
  require(ll_tolerance > 0.0, "em.ll_tolerance must be > 0");
  require(variance_floor > 0.0, "em.variance_floor must be > 0");
  require(seeding_subsample >= 1, "em.seeding_subsample must be >= 1");
}

EmFit fit_em_detailed(const FeatureDatabase& db, const EmConfig& cfg, std::size_t threads) {
  cfg.validate();
  const std::size_t n = db.size();
  const std::size_t d = db.dim();
  const std::size_t k = cfg.k;
  if (n < k) {
    throw Error(ErrorKind::InsufficientSamples, "EM needs at least k=" + std::to_string(k) +
                                                    " samples, database has " + std::to_string(n));
  }
  const auto order = canonical_order(db);

  // Global per-dimension variance seeds every component's covariance.
  std::vector<double> global_mean(d, 0.0), global_var(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    detail::CompensatedSum s;
    for (std::size_t i : order) s.add(db.row(i)[j]);
    global_mean[j] = s.value() / static_cast<double>(n);
    detail::CompensatedSum v;
    for (std::size_t i : order) {
      const double t = db.row(i)[j] - global_mean[j];
      v.add(t * t);
    }
    global_var[j] = std::max(v.value() / static_cast<double>(n), cfg.variance_floor);
  }

  std::vector<double> resp(n * k);
  std::vector<double> sample_ll(n);

  // E-step under the given parameters; fills resp and returns the average LL.
  auto e_step = [&](const Gmm& model) {
    parallel_for(n, threads, [&](std::size_t pos) {
      const auto f = db.row(order[pos]);
      std::span<double> r(resp.data() + pos * k, k);
      model.component_log_densities(f, r);
      const double lse = log_sum_exp(r);
      sample_ll[pos] = lse;
      for (double& x : r) x = std::exp(x - lse);
    });
    return detail::compensated_sum(sample_ll) / static_cast<double>(n);
  };

  auto m_step = [&](const EmState& prev) {
    EmState next = prev;
    std::vector<double> nk(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      detail::CompensatedSum s;
      for (std::size_t pos = 0; pos < n; ++pos) s.add(resp[pos * k + c]);
      nk[c] = s.value();
    }
    const double total = detail::compensated_sum(nk);
    parallel_for(k, threads, [&](std::size_t c) {
      // A component that has lost all responsibility keeps its parameters.
      if (!(nk[c] > 1e-12)) {
        return;
      }
      for (std::size_t j = 0; j < d; ++j) {
        detail::CompensatedSum s;
        for (std::size_t pos = 0; pos < n; ++pos) s.add(resp[pos * k + c] * db.row(order[pos])[j]);
        next.means[c * d + j] = s.value() / nk[c];
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double mu = next.means[c * d + j];
        detail::CompensatedSum s;
        for (std::size_t pos = 0; pos < n; ++pos) {
          const double t = db.row(order[pos])[j] - mu;
          s.add(resp[pos * k + c] * t * t);
        }
        next.variances[c * d + j] = std::max(s.value() / nk[c], cfg.variance_floor);
      }
    });
    for (std::size_t c = 0; c < k; ++c) {
      next.weights[c] = std::max(nk[c] / total, std::numeric_limits<double>::min());
    }
    const double wsum = std::accumulate(next.weights.begin(), next.weights.end(), 0.0);
    for (double& w : next.weights) w /= wsum;
    return next;
  };

  auto to_model = [&](const EmState& s) { return Gmm(d, s.weights, s.means, s.variances); };

  EmFit fit{to_model({std::vector<double>(k, 1.0 / static_cast<double>(k)),
                      std::vector<double>(k * d, 0.0), std::vector<double>(k * d, 1.0)}),
            {}, 0, -std::numeric_limits<double>::infinity()};

  for (std::size_t restart = 0; restart < cfg.restarts; ++restart) {
    Rng rng(mix_seed(cfg.seed, restart));
    EmState state;
    state.weights.assign(k, 1.0 / static_cast<double>(k));
    state.means = seed_means(db, order, cfg, rng);
    state.variances.resize(k * d);
    for (std::size_t c = 0; c < k; ++c) {
      std::copy(global_var.begin(), global_var.end(), state.variances.begin() + c * d);
    }

    std::vector<double> trace;
    double ll = e_step(to_model(state));
    trace.push_back(ll);
    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
      state = m_step(state);
      const double next_ll = e_step(to_model(state));
      trace.push_back(next_ll);
      const double improvement = (next_ll - ll) / std::max(std::fabs(ll), 1.0);
      ll = next_ll;
      if (improvement < cfg.ll_tolerance) {
        break;
      }
    }
    if (ll > fit.final_average_ll) {
      fit.model = to_model(state);
      fit.best_restart = restart;
      fit.final_average_ll = ll;
    }
    fit.ll_traces.push_back(std::move(trace));
  }
  return fit;
}

double fitness(const FeatureDatabase& db, const Gmm& model, std::size_t threads) {
  if (db.empty()) {
    throw Error(ErrorKind::ZeroFeatures, "fitness of an empty feature database is undefined");
  }
  require_dim(db.dim(), model.dim());
  std::vector<double> ll(db.size());
  parallel_for(db.size(), threads, [&](std::size_t i) { ll[i] = model.log_pdf(db.row(i)); });
  return detail::compensated_sum(ll) / static_cast<double>(db.size());
}

}  // namespace anchorcal
