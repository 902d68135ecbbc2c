#pragma once

#include "gppbed/eki.hpp"
#include "gppbed/pooling.hpp"
#include "gppbed/statcore.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace gppbed {

struct WeightVector {
  Vector logw;  // as computed, before the shift
  Vector w;     // self-normalized

  /// Realized ESS 1 / sum w^2.
  double ess() const { return 1.0 / w.squaredNorm(); }
};

/// Max-shift normalization. Throws AllWeightsUnderflow(sample_index) when no finite
/// log-weight remains.
WeightVector normalize_log_weights(const Vector& logw, std::size_t sample_index = 0);

/// Likelihood-ratio SNIS weights of proposal predictions (J x d_y) against the target
/// posterior of y_i under a pooled proposal. The prior cancels and is never evaluated.
WeightVector snis_weights(const Matrix& predictions, const Vector& y_i, const PooledObservation& pooled,
                          const Matrix& noise, std::size_t sample_index = 0);

/// J exp(-a^T Sigma_ff a) with a = Sigma^{-1} (y_i - y-bar).
double ess_lognormal(const Vector& y_i, const PooledObservation& pooled, const Matrix& noise, const Matrix& sigma_ff,
                     double j);
/// Same with the forecast covariance P_FF of the prediction step.
double ess_conservative(const Vector& y_i, const PooledObservation& pooled, const Matrix& noise, const EkiStats& stats,
                        double j);

struct EssReport {
  std::vector<double> conservative;
  std::vector<std::optional<double>> lognormal;
  std::vector<std::optional<double>> realized;
  std::vector<bool> underflow;
};
void to_json(nlohmann::json& j, const EssReport& r);

struct GroupingOptions {
  double threshold = 1.0;        // S
  std::size_t proposals = 3;     // K, counting the ok group when it is nonempty
  double trigger_fraction = 0.05;
  int max_iterations = 200;
};

struct Grouping {
  std::vector<std::size_t> ok;
  std::vector<std::vector<std::size_t>> groups;  // problematic clusters
  std::vector<double> ess;                       // conservative ESS per outer sample
  double threshold = 0.0;
  bool triggered = false;

  /// Number of proposals this grouping needs (ok group, if any, plus the clusters).
  std::size_t proposal_count() const { return (ok.empty() ? 0 : 1) + groups.size(); }
  /// Index sets in proposal order: ok first (when nonempty), then the clusters.
  std::vector<std::vector<std::size_t>> proposal_sets() const;
};
void to_json(nlohmann::json& j, const Grouping& g);

/// Flags problematic samples by the conservative ESS, and if more than trigger_fraction
/// of them are, clusters them in observation space (Mahalanobis k-means, farthest-point
/// seeding).
Grouping make_grouping(const OuterSet& outer, const PooledObservation& pooled_global, const Matrix& noise,
                       const EkiStats& stats, double j, const GroupingOptions& options);

/// Deterministic k-means on rows of `points` (already whitened). Empty clusters are refilled
/// by splitting the largest one. Returns the cluster label of each row.
std::vector<std::size_t> kmeans(const Matrix& points, std::size_t k, int max_iterations);

/// Pooled targets for every proposal set of the grouping, weights renormalized per group.
std::vector<PooledObservation> group_targets(const OuterSet& outer, const PoolingWeights& nu, const Grouping& g);

}  // namespace gppbed
