#include "gppbed/isampling.hpp"

#include "gppbed/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gppbed {

WeightVector normalize_log_weights(const Vector& logw, std::size_t sample_index) {
  if (logw.size() < 1) throw InvalidArgument("normalize_log_weights: empty weight vector");
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logw.size(); ++j)
    if (!std::isnan(logw(j)) && logw(j) > top) top = logw(j);
  if (!std::isfinite(top)) throw AllWeightsUnderflow(sample_index);
  WeightVector out;
  out.logw = logw;
  out.w.resize(logw.size());
  for (Eigen::Index j = 0; j < logw.size(); ++j)
    out.w(j) = std::isnan(logw(j)) ? 0.0 : std::exp(logw(j) - top);
  out.w /= out.w.sum();
  return out;
}

WeightVector snis_weights(const Matrix& predictions, const Vector& y_i, const PooledObservation& pooled,
                          const Matrix& noise, std::size_t sample_index) {
  if (predictions.cols() != y_i.size() || pooled.mean.size() != y_i.size())
    throw DimensionMismatch("snis_weights: observation dimension mismatch");
  Eigen::LLT<Matrix> target(noise);
  Eigen::LLT<Matrix> proposal(pooled.cov);
  if (target.info() != Eigen::Success || proposal.info() != Eigen::Success)
    throw SingularNoise("snis_weights: noise covariance is not positive definite");
  const Matrix r_target = (-predictions).rowwise() + y_i.transpose();
  const Matrix r_prop = (-predictions).rowwise() + pooled.mean.transpose();
  const Matrix z_target = target.matrixL().solve(r_target.transpose());
  const Matrix z_prop = proposal.matrixL().solve(r_prop.transpose());
  const Vector logw = -0.5 * z_target.colwise().squaredNorm().transpose() + 0.5 * z_prop.colwise().squaredNorm().transpose();
  return normalize_log_weights(logw, sample_index);
}

double ess_lognormal(const Vector& y_i, const PooledObservation& pooled, const Matrix& noise, const Matrix& sigma_ff,
                     double j) {
  const Vector diff = y_i - pooled.mean;
  if (diff.isZero(0.0)) return j;
  Eigen::LLT<Matrix> llt(noise);
  if (llt.info() != Eigen::Success) throw SingularNoise("ess: noise covariance is not positive definite");
  const Vector a = llt.solve(diff);
  return j * std::exp(-a.dot(sigma_ff * a));
}

double ess_conservative(const Vector& y_i, const PooledObservation& pooled, const Matrix& noise, const EkiStats& stats,
                        double j) {
  return ess_lognormal(y_i, pooled, noise, stats.p_ff, j);
}

void to_json(nlohmann::json& j, const EssReport& r) {
  auto optional_list = [](const std::vector<std::optional<double>>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : v) a.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
    return a;
  };
  j = nlohmann::json{{"ess_conservative", r.conservative},
                     {"ess_lognormal", optional_list(r.lognormal)},
                     {"ess_realized", optional_list(r.realized)},
                     {"underflow", r.underflow}};
}

std::vector<std::vector<std::size_t>> Grouping::proposal_sets() const {
  std::vector<std::vector<std::size_t>> out;
  if (!ok.empty()) out.push_back(ok);
  out.insert(out.end(), groups.begin(), groups.end());
  return out;
}

void to_json(nlohmann::json& j, const Grouping& g) {
  j = nlohmann::json{{"threshold", g.threshold},  {"triggered", g.triggered}, {"ok", g.ok},
                     {"groups", g.groups},        {"ess_conservative", g.ess},
                     {"proposal_count", g.proposal_count()}};
}

std::vector<std::size_t> kmeans(const Matrix& points, std::size_t k, int max_iterations) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1) throw InvalidArgument("kmeans: need at least one cluster");
  if (k > n) throw InvalidArgument("kmeans: more clusters than points");
  const auto row = [&](std::size_t i) { return points.row(static_cast<Eigen::Index>(i)); };

  // Farthest-point seeding, starting from the point farthest from the overall mean.
  const Eigen::RowVectorXd mean = points.colwise().mean();
  std::vector<std::size_t> seeds;
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t first = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (row(i) - mean).squaredNorm();
    if (d > best) best = d, first = i;
  }
  seeds.push_back(first);
  while (seeds.size() < k) {
    const auto& last = seeds.back();
    std::size_t pick = 0;
    best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], (row(i) - row(last)).squaredNorm());
      if (nearest[i] > best) best = nearest[i], pick = i;
    }
    seeds.push_back(pick);
  }

  Matrix centers(static_cast<Eigen::Index>(k), points.cols());
  for (std::size_t c = 0; c < k; ++c) centers.row(static_cast<Eigen::Index>(c)) = row(seeds[c]);

  std::vector<std::size_t> label(n, 0);
  for (int it = 0; it < std::max(max_iterations, 1); ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = (row(i) - centers.row(static_cast<Eigen::Index>(c))).squaredNorm();
        if (d < dmin) dmin = d, arg = c;
      }
      if (label[i] != arg) changed = true;
      label[i] = arg;
    }
    // Refill empty clusters from the largest one: move its point farthest from its center.
    for (;;) {
      std::vector<std::size_t> sizes(k, 0);
      for (auto l : label) ++sizes[l];
      const auto empty = std::find(sizes.begin(), sizes.end(), 0u);
      if (empty == sizes.end()) break;
      const auto largest = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      std::size_t far = n;
      double dfar = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != largest) continue;
        const double d = (row(i) - centers.row(static_cast<Eigen::Index>(largest))).squaredNorm();
        if (d > dfar) dfar = d, far = i;
      }
      if (sizes[largest] < 2 || far == n) throw EmptyGroup("kmeans: cannot refill an empty cluster");
      label[far] = static_cast<std::size_t>(empty - sizes.begin());
      centers.row(static_cast<Eigen::Index>(label[far])) = row(far);
      changed = true;
    }
    centers.setZero();
    std::vector<double> counts(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      centers.row(static_cast<Eigen::Index>(label[i])) += row(i);
      counts[label[i]] += 1.0;
    }
    for (std::size_t c = 0; c < k; ++c) centers.row(static_cast<Eigen::Index>(c)) /= counts[c];
    if (!changed) break;
  }
  return label;
}

Grouping make_grouping(const OuterSet& outer, const PooledObservation& pooled_global, const Matrix& noise,
                       const EkiStats& stats, double j, const GroupingOptions& options) {
  if (!(options.threshold > 0.0)) throw InvalidArgument("grouping threshold S must be positive");
  if (options.proposals < 1) throw InvalidArgument("grouping needs at least one proposal");
  const auto n = static_cast<std::size_t>(outer.size());
  Grouping g;
  g.threshold = options.threshold;
  g.ess.resize(n);
  std::vector<std::size_t> prob;
  for (std::size_t i = 0; i < n; ++i) {
    g.ess[i] = ess_conservative(outer.y(static_cast<Eigen::Index>(i)), pooled_global, noise, stats, j);
    if (g.ess[i] < options.threshold) prob.push_back(i);
    else g.ok.push_back(i);
  }
  // A budget of one proposal cannot split anything: fall back to the single global proposal.
  if (options.proposals <= 1 || static_cast<double>(prob.size()) <= options.trigger_fraction * static_cast<double>(n)) {
    g.ok.resize(n);
    std::iota(g.ok.begin(), g.ok.end(), std::size_t{0});
    return g;
  }
  const std::size_t wanted = g.ok.empty() ? options.proposals : options.proposals - 1;
  const std::size_t k = std::min(wanted, prob.size());
  g.triggered = true;

  // Whiten with Sigma^{-1} so Euclidean k-means is Mahalanobis in observation space.
  Eigen::LLT<Matrix> llt(noise);
  if (llt.info() != Eigen::Success) throw SingularNoise("grouping: noise covariance is not positive definite");
  Matrix pts(static_cast<Eigen::Index>(prob.size()), outer.obs_dim());
  for (std::size_t r = 0; r < prob.size(); ++r)
    pts.row(static_cast<Eigen::Index>(r)) =
        llt.matrixL().solve(outer.y(static_cast<Eigen::Index>(prob[r]))).transpose();
  const auto label = kmeans(pts, k, options.max_iterations);
  g.groups.assign(k, {});
  for (std::size_t r = 0; r < prob.size(); ++r) g.groups[label[r]].push_back(prob[r]);
  // Order clusters by their smallest member so output does not depend on seeding order.
  std::sort(g.groups.begin(), g.groups.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return g;
}

std::vector<PooledObservation> group_targets(const OuterSet& outer, const PoolingWeights& nu, const Grouping& g) {
  std::vector<PooledObservation> out;
  for (const auto& set : g.proposal_sets()) out.push_back(make_pooled(outer, nu, set));
  return out;
}

}  // namespace gppbed
