#pragma once

// Scores for separated fibers against ground truth.

#include "fodsplit/simulate.hpp"
#include "fodsplit/sphcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fodsplit {

/// Angular correlation over the l >= 2 coefficients; the mean term is left
/// out so positive scaling has no effect.
inline double acc(const ShVector& u, const ShVector& v)
{
  u.require_same(v);
  const Eigen::Index n = u.size() - 1;
  const auto a = u.coeffs().tail(n), b = v.coeffs().tail(n);
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0))
    throw std::domain_error("ACC is undefined for a function with no energy above l = 0");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// Fiber axis angle in degrees, folded to [0, 90].
inline double angular_error(const Direction& est, const Direction& truth)
{
  return rad2deg(axis_angle(est, truth));
}

struct FiberMatch
{
  int estimated = -1;
  int truth = -1;
  double acc = 0.0;
};

struct Assignment
{
  std::vector<FiberMatch> matches;      // ordered by truth index
  std::vector<int> missed_truth;        // truth fibers with no estimate
  std::vector<int> unmatched_estimated; // surplus estimates
  double total_acc = 0.0;
};

/// One-to-one assignment maximizing total ACC, searched exhaustively over all
/// injections of the shorter list into the longer. Estimates with no
/// l >= 2 energy score -1 against everything.
inline Assignment match_fibers(const std::vector<ShVector>& estimated, const std::vector<ShVector>& truth)
{
  if (truth.empty())
    throw std::invalid_argument("match_fibers needs at least one true fiber");
  const int ne = static_cast<int>(estimated.size()), nt = static_cast<int>(truth.size());
  std::vector<std::vector<double>> score(static_cast<std::size_t>(ne), std::vector<double>(static_cast<std::size_t>(nt)));
  for (int e = 0; e < ne; ++e)
    for (int t = 0; t < nt; ++t) {
      const ShVector& u = estimated[static_cast<std::size_t>(e)];
      const bool flat = u.coeffs().tail(u.size() - 1).squaredNorm() == 0.0;
      score[static_cast<std::size_t>(e)][static_cast<std::size_t>(t)] =
          flat ? -1.0 : acc(u, truth[static_cast<std::size_t>(t)]);
    }

  // each truth fiber takes a distinct estimate or none; at most min(ne, nt) matches
  const int k = std::min(ne, nt);
  std::vector<int> current(static_cast<std::size_t>(nt), -1), best;
  std::vector<bool> used(static_cast<std::size_t>(ne), false);
  double best_total = -std::numeric_limits<double>::infinity();
  auto recurse = [&](auto&& self, int t, int matched, double total) -> void {
    if (t == nt) {
      if (matched == k && total > best_total) {
        best_total = total;
        best = current;
      }
      return;
    }
    if (matched + (nt - t) > k) // leaving this truth fiber unmatched still allows k matches
      self(self, t + 1, matched, total);
    for (int e = 0; e < ne; ++e) {
      if (used[static_cast<std::size_t>(e)] || matched == k)
        continue;
      used[static_cast<std::size_t>(e)] = true;
      current[static_cast<std::size_t>(t)] = e;
      self(self, t + 1, matched + 1, total + score[static_cast<std::size_t>(e)][static_cast<std::size_t>(t)]);
      current[static_cast<std::size_t>(t)] = -1;
      used[static_cast<std::size_t>(e)] = false;
    }
  };
  recurse(recurse, 0, 0, 0.0);

  Assignment a;
  a.total_acc = k == 0 ? 0.0 : best_total;
  std::vector<bool> taken(static_cast<std::size_t>(ne), false);
  for (int t = 0; t < nt; ++t) {
    const int e = k == 0 ? -1 : best[static_cast<std::size_t>(t)];
    if (e < 0) {
      a.missed_truth.push_back(t);
      continue;
    }
    taken[static_cast<std::size_t>(e)] = true;
    a.matches.push_back({e, t, score[static_cast<std::size_t>(e)][static_cast<std::size_t>(t)]});
  }
  for (int e = 0; e < ne; ++e)
    if (!taken[static_cast<std::size_t>(e)])
      a.unmatched_estimated.push_back(e);
  return a;
}

/// RMS fraction difference over the true fibers; a missed fiber counts its
/// whole true fraction.
inline double vf_error(const std::vector<double>& est, const std::vector<double>& truth, const Assignment& a)
{
  if (truth.empty())
    throw std::invalid_argument("vf_error needs at least one true fraction");
  double sum = 0.0;
  for (const FiberMatch& m : a.matches) {
    const double d = est.at(static_cast<std::size_t>(m.estimated)) - truth.at(static_cast<std::size_t>(m.truth));
    sum += d * d;
  }
  for (int t : a.missed_truth)
    sum += truth.at(static_cast<std::size_t>(t)) * truth.at(static_cast<std::size_t>(t));
  return std::sqrt(sum / static_cast<double>(truth.size()));
}

/// Linear-interpolation quantile (q in [0, 1]) of an unsorted list.
inline double quantile(std::vector<double> values, double q)
{
  if (values.empty())
    throw std::invalid_argument("quantile of an empty list");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct Summary
{
  double median = 0.0;
  double iqr = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  std::size_t count = 0;
};

inline Summary summarize(const std::vector<double>& values)
{
  if (values.empty())
    throw std::invalid_argument("cannot summarize an empty list");
  Summary s;
  s.median = quantile(values, 0.5);
  s.q1 = quantile(values, 0.25);
  s.q3 = quantile(values, 0.75);
  s.iqr = s.q3 - s.q1;
  s.count = values.size();
  return s;
}

// ---------------------------------------------------------------------------

/// Angular error charged to a true fiber with no matching estimate.
inline constexpr double kMissedFiberAngleDeg = 90.0;

/// Per-sample scores of one method.
struct EvalRecord
{
  std::string method;
  long sample = 0;
  int n_fibers = 0;
  double min_separation_deg = 0.0;
  double min_fraction = 0.0;
  int n_estimated = 0;
  int n_missed = 0;
  std::vector<double> acc;                 // matched true fibers, by truth index
  std::vector<double> angular_error_deg;   // every true fiber; misses charged 90 deg
  double vf_rmse = 0.0;
  double ms_per_voxel = 0.0;

  /// Smallest per-fiber ACC with misses counted as 0.
  double min_acc() const
  {
    double m = n_missed > 0 ? 0.0 : 1.0;
    for (double a : acc)
      m = std::min(m, a);
    return m;
  }
};

/// Scores estimated single-fiber ODFs (with their axes and fractions)
/// against a ground-truth sample.
inline EvalRecord evaluate_sample(const std::string& method, long index, const OdfSample& truth,
                                  const std::vector<ShVector>& est, const std::vector<Direction>& est_axes,
                                  const std::vector<double>& est_fractions, double ms_per_voxel)
{
  if (est.size() != est_axes.size() || est.size() != est_fractions.size())
    throw std::invalid_argument("estimated ODFs, axes and fractions must have equal length");
  EvalRecord r;
  r.method = method;
  r.sample = index;
  r.n_fibers = truth.config.count();
  r.min_separation_deg = truth.config.min_separation_deg();
  r.min_fraction = truth.config.min_fraction();
  r.n_estimated = static_cast<int>(est.size());
  r.ms_per_voxel = ms_per_voxel;

  const Assignment a = match_fibers(est, truth.components);
  r.n_missed = static_cast<int>(a.missed_truth.size());
  r.angular_error_deg.assign(static_cast<std::size_t>(r.n_fibers), kMissedFiberAngleDeg);
  for (const FiberMatch& m : a.matches) {
    r.acc.push_back(m.acc);
    r.angular_error_deg[static_cast<std::size_t>(m.truth)] =
        angular_error(est_axes[static_cast<std::size_t>(m.estimated)],
                      truth.config.fibers()[static_cast<std::size_t>(m.truth)].direction);
  }
  r.vf_rmse = vf_error(est_fractions, truth.config.fractions(), a);
  return r;
}

/// Table row for one method: medians and IQRs over records.
struct MethodSummary
{
  std::string method;
  Summary angular_error_deg;
  Summary vf_rmse;
  Summary acc;
  double ms_per_voxel = 0.0;
  std::size_t samples = 0;
};

inline MethodSummary summarize_records(const std::vector<EvalRecord>& records)
{
  if (records.empty())
    throw std::invalid_argument("no records to summarize");
  MethodSummary s;
  s.method = records.front().method;
  std::vector<double> ang, vf, ac;
  double ms = 0.0;
  for (const EvalRecord& r : records) {
    if (r.method != s.method)
      throw std::invalid_argument("records mix methods '" + s.method + "' and '" + r.method + "'");
    ang.insert(ang.end(), r.angular_error_deg.begin(), r.angular_error_deg.end());
    ac.insert(ac.end(), r.acc.begin(), r.acc.end());
    vf.push_back(r.vf_rmse);
    ms += r.ms_per_voxel;
  }
  s.angular_error_deg = summarize(ang);
  s.vf_rmse = summarize(vf);
  s.acc = ac.empty() ? Summary{std::nan(""), std::nan(""), std::nan(""), std::nan(""), 0} : summarize(ac);
  s.ms_per_voxel = ms / static_cast<double>(records.size());
  s.samples = records.size();
  return s;
}

} // namespace fodsplit
