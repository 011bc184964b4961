#pragma once

// Separation of a multi-fiber ODF into axially symmetric single-fiber ODFs by
// multistart search over fiber axes with a linear inner solve.

#include "fodsplit/lobes.hpp"
#include "fodsplit/mesh.hpp"
#include "fodsplit/random.hpp"
#include "fodsplit/sphcore.hpp"

#include <gsl/gsl_multimin.h>

#include <Eigen/QR>

#include <algorithm>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace fodsplit {

struct FissileCosts
{
  double fit = 0.0;
  double shape = 0.0;
  double sign = 0.0;
  double total = 0.0;
};

struct FissileFit
{
  std::vector<RotationFrame> frames;
  std::vector<ShVector> fiber_coeffs; ///< in each fiber's own frame, m = 0 only
  std::vector<ShVector> world;        ///< fiber_coeffs rotated to the world frame
  FissileCosts costs;
  bool converged = false;   ///< the returned search reached its tolerance
  bool exhausted = false;   ///< the inner-solve budget ran out
  bool degenerate = false;
  int inner_solves = 0;
};

/// Least-squares split of `total` into zonal (axially symmetric) fibers about
/// the given frame axes. The l = 0 basis function is the same for every
/// fiber, so the design has one shared mean column plus the rotated l >= 2
/// zonal columns of each fiber; the fitted mean is then divided between
/// fibers in proportion to their (positive) l = 2 coefficients. Rank-deficient
/// designs get the minimum-norm solution and the degenerate flag.
inline FissileFit symmetric_least_squares(const ShVector& total, const std::vector<RotationFrame>& frames)
{
  if (frames.empty() || frames.size() > 3)
    throw std::invalid_argument("symmetric_least_squares takes 1 to 3 frames");
  const int lmax = total.lmax();
  const int per = lmax / 2 + 1;
  const int nf = static_cast<int>(frames.size());
  std::vector<Eigen::MatrixXd> blocks(static_cast<std::size_t>(nf), Eigen::MatrixXd(total.size(), per));
  Eigen::MatrixXd a(total.size(), 1 + nf * (per - 1));
  for (int f = 0; f < nf; ++f) {
    rotated_zonal_basis_into(frames[static_cast<std::size_t>(f)].axis(), lmax, blocks[static_cast<std::size_t>(f)]);
    a.middleCols(1 + f * (per - 1), per - 1) = blocks[static_cast<std::size_t>(f)].rightCols(per - 1);
  }
  a.col(0) = blocks.front().col(0);
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  const Eigen::VectorXd x = cod.solve(total.coeffs());

  std::vector<double> share(static_cast<std::size_t>(nf), 1.0 / nf);
  if (per > 1) {
    double sum = 0.0;
    for (int f = 0; f < nf; ++f)
      sum += std::max(0.0, x[1 + f * (per - 1)]);
    if (sum > 0.0)
      for (int f = 0; f < nf; ++f)
        share[static_cast<std::size_t>(f)] = std::max(0.0, x[1 + f * (per - 1)]) / sum;
  }

  FissileFit fit;
  fit.frames = frames;
  fit.degenerate = cod.rank() < a.cols();
  fit.inner_solves = 1;
  for (int f = 0; f < nf; ++f) {
    Eigen::VectorXd c(per);
    c[0] = x[0] * share[static_cast<std::size_t>(f)];
    c.tail(per - 1) = x.segment(1 + f * (per - 1), per - 1);
    ShVector own(lmax), world(lmax);
    for (int k = 0; k < per; ++k)
      own.at(2 * k, 0) = c[k];
    world.coeffs() = blocks[static_cast<std::size_t>(f)] * c;
    fit.fiber_coeffs.push_back(std::move(own));
    fit.world.push_back(std::move(world));
  }
  return fit;
}

inline ShVector reconstruct(const FissileFit& fit)
{
  ShVector sum(fit.world.front().lmax());
  for (const ShVector& w : fit.world)
    sum += w;
  return sum;
}

inline double fit_cost(const FissileFit& fit, const ShVector& total)
{
  return (reconstruct(fit) - total).coeffs().norm();
}

/// Largest rise of any fiber profile (in its own frame, azimuth 0) between
/// the samples at 30, 60 and 90 degrees.
inline double shape_cost(const FissileFit& fit)
{
  double worst = 0.0;
  for (const ShVector& y : fit.fiber_coeffs) {
    const double y30 = eval_sh(y, Direction::from_angles(deg2rad(30.0), 0.0));
    const double y60 = eval_sh(y, Direction::from_angles(deg2rad(60.0), 0.0));
    const double y90 = eval_sh(y, Direction::from_angles(deg2rad(90.0), 0.0));
    worst = std::max({worst, y90 - y60, y60 - y30});
  }
  return worst;
}

/// 1 if any fiber has a negative mean term, else 0.
inline double sign_cost(const FissileFit& fit)
{
  for (const ShVector& y : fit.fiber_coeffs)
    if (y[0] < 0.0)
      return 1.0;
  return 0.0;
}

inline FissileCosts evaluate_costs(const FissileFit& fit, const ShVector& total)
{
  FissileCosts c;
  c.fit = fit_cost(fit, total);
  c.shape = shape_cost(fit);
  c.sign = sign_cost(fit);
  c.total = c.fit + c.shape + c.sign;
  return c;
}

/// Norm of the m != 0 coefficients of `y_world` seen from `frame`.
inline double axial_asymmetry(const ShVector& y_world, const RotationFrame& frame)
{
  const ShVector local = rotate_sh(y_world, frame.inverse());
  double s = 0.0;
  for (Eigen::Index i = 0; i < local.size(); ++i)
    if (sh_order(static_cast<int>(i)) != 0)
      s += local[i] * local[i];
  return std::sqrt(s);
}

struct FissileOptions
{
  int max_fibers = 3;
  double cost_threshold = 1e-5;
  int n_starts = 16;
  std::uint64_t seed = 0;
  int max_inner_solves = 5000;
  /// Spread of the perturbed starting axes around the initial frames.
  double perturb_deg = 20.0;
  double initial_step_rad = 0.1;
  /// Simplex size at which each start stops and at which the best is polished.
  /// Each start is also capped at a quarter of the budget split over starts.
  double coarse_tol_rad = 1e-3;
  double simplex_tol_rad = 1e-10;
  int polish_rounds = 3;
  int max_nm_iterations = 2000;
  int refit_grid_pixels = kDenseMeshPixels;
  /// Axis sets with two axes closer than this cost an extra 1; splitting a
  /// fiber into coaxial parts lowers the shape cost without explaining
  /// anything.
  double min_axis_sep_deg = 12.0;
  /// Fibers whose coefficient norm is below this fraction of the input's are
  /// removed from the result.
  double prune_rel = 1e-6;
  InitOptions init;
};

struct FissileResult
{
  std::vector<ShVector> odfs;
  FissileFit fit;
};

namespace detail {

// Fiber axes flattened as (theta_1, phi_1, theta_2, phi_2, ...).
inline std::vector<RotationFrame> frames_from_params(const double* p, int n_fibers)
{
  std::vector<RotationFrame> frames;
  for (int f = 0; f < n_fibers; ++f)
    frames.push_back(RotationFrame::from_angles(p[2 * f], p[2 * f + 1]));
  return frames;
}

inline double min_axis_separation(const std::vector<RotationFrame>& frames)
{
  double m = kPi / 2.0;
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (std::size_t j = i + 1; j < frames.size(); ++j)
      m = std::min(m, axis_angle(frames[i].axis(), frames[j].axis()));
  return m;
}

struct Search
{
  const ShVector* total = nullptr;
  const FissileOptions* opt = nullptr;
  int n_fibers = 0;
  int solves = 0;
  bool exhausted = false;
  FissileFit best;
  double best_cost = 0.0;
  bool have_best = false;

  double evaluate(const double* p)
  {
    if (solves >= opt->max_inner_solves) {
      exhausted = true;
      return std::numeric_limits<double>::max();
    }
    ++solves;
    FissileFit fit = symmetric_least_squares(*total, frames_from_params(p, n_fibers));
    fit.costs = evaluate_costs(fit, *total);
    double c = fit.costs.total;
    if (min_axis_separation(fit.frames) < deg2rad(opt->min_axis_sep_deg))
      c += 1.0;
    if (!have_best || c < best_cost) {
      best = std::move(fit);
      best_cost = c;
      have_best = true;
    }
    return c;
  }

  static double trampoline(const gsl_vector* x, void* self)
  {
    return static_cast<Search*>(self)->evaluate(x->data);
  }

  // One Nelder-Mead descent; returns true when the simplex size tolerance
  // was reached.
  bool descend(std::vector<double>& start, double tol, int max_solves = std::numeric_limits<int>::max())
  {
    const int stop_at = max_solves > std::numeric_limits<int>::max() - solves ? std::numeric_limits<int>::max()
                                                                              : solves + max_solves;
    const std::size_t n = start.size();
    gsl_multimin_function fn{&Search::trampoline, n, this};
    std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)> x(gsl_vector_alloc(n), &gsl_vector_free);
    std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)> step(gsl_vector_alloc(n), &gsl_vector_free);
    std::copy(start.begin(), start.end(), x->data);
    gsl_vector_set_all(step.get(), opt->initial_step_rad);
    std::unique_ptr<gsl_multimin_fminimizer, decltype(&gsl_multimin_fminimizer_free)> nm(
        gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n), &gsl_multimin_fminimizer_free);
    gsl_multimin_fminimizer_set(nm.get(), &fn, x.get(), step.get());
    bool done = false;
    for (int it = 0; it < opt->max_nm_iterations && !exhausted && solves < stop_at; ++it) {
      if (gsl_multimin_fminimizer_iterate(nm.get()) != GSL_SUCCESS)
        break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(nm.get()), tol) == GSL_SUCCESS) {
        done = true;
        break;
      }
    }
    const gsl_vector* xm = gsl_multimin_fminimizer_x(nm.get());
    std::copy(xm->data, xm->data + n, start.begin());
    return done && !exhausted;
  }
};

inline std::vector<double> params_from_frames(const std::vector<RotationFrame>& frames)
{
  std::vector<double> p;
  for (const RotationFrame& f : frames) {
    const Direction a = f.axis();
    p.push_back(a.theta());
    p.push_back(a.phi());
  }
  return p;
}

// Random axis within roughly `spread` radians of `d`.
inline Direction perturb(const Direction& d, double spread, Rng& rng)
{
  const Eigen::Vector3d v = d.vec() + spread * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  return v.norm() > 1e-12 ? Direction(v) : d;
}

// Multistart over fiber axes. Start 0 is `seed_frames`. The next starts
// replace the last seed frame by each of `candidates`; after that, odd starts
// perturb every seed frame and even starts keep the first `n_fixed` frames
// and draw the others uniformly. Every start descends to the coarse
// tolerance, then the best (lowest index on ties) is polished to the fine
// tolerance with fresh-simplex restarts.
inline FissileFit multistart(const ShVector& total, const std::vector<RotationFrame>& seed_frames, int n_fixed,
                             const std::vector<Direction>& candidates, const FissileOptions& opt, Rng& rng,
                             int& solves_left, bool& converged)
{
  Search search;
  search.total = &total;
  FissileOptions local = opt;
  local.max_inner_solves = solves_left;
  search.opt = &local;
  search.n_fibers = static_cast<int>(seed_frames.size());

  std::vector<double> best_p;
  double best_c = std::numeric_limits<double>::max();
  for (int s = 0; s < opt.n_starts && !search.exhausted; ++s) {
    std::vector<RotationFrame> frames = seed_frames;
    const auto c_index = static_cast<std::size_t>(s - 1);
    if (s > 0 && c_index < candidates.size()) {
      frames.back() = RotationFrame::from_axis(candidates[c_index]);
    } else if (s > 0 && s % 2 == 1) {
      for (RotationFrame& f : frames)
        f = RotationFrame::from_axis(perturb(f.axis(), deg2rad(opt.perturb_deg), rng));
    } else if (s > 0) {
      for (std::size_t f = static_cast<std::size_t>(n_fixed); f < frames.size(); ++f)
        frames[f] = RotationFrame::from_axis(Direction(rng.normal(), rng.normal(), rng.normal()));
    }
    std::vector<double> p = params_from_frames(frames);
    search.descend(p, opt.coarse_tol_rad, std::max(1, opt.max_inner_solves / (4 * opt.n_starts)));
    const double c = search.evaluate(p.data());
    if (c < best_c) {
      best_c = c;
      best_p = p;
    }
  }

  converged = false;
  for (int round = 0; round < opt.polish_rounds && !search.exhausted && !best_p.empty(); ++round) {
    converged = search.descend(best_p, opt.simplex_tol_rad);
    const double c = search.evaluate(best_p.data());
    if (!(c < best_c))
      break;
    best_c = c;
  }
  solves_left -= search.solves;
  search.best.inner_solves = search.solves;
  search.best.converged = converged && !search.exhausted;
  return search.best;
}

// Candidate axes for an added fiber: local maxima of the worst fiber's
// unexplained, non-axial signal, strongest first. `worst` receives that
// fiber's axial asymmetry.
inline std::vector<Direction> refit_directions(const FissileFit& fit, const ShVector& total, int grid_pixels,
                                               double& worst)
{
  const ShVector residual = total - reconstruct(fit);
  worst = -1.0;
  ShVector nonaxial(total.lmax());
  for (std::size_t f = 0; f < fit.world.size(); ++f) {
    const ShVector estimate = fit.world[f] + residual;
    const double a = axial_asymmetry(estimate, fit.frames[f]);
    if (a > worst) {
      worst = a;
      ShVector local = rotate_sh(estimate, fit.frames[f].inverse());
      for (int l = 0; l <= local.lmax(); l += 2)
        local.at(l, 0) = 0.0;
      nonaxial = rotate_sh(local, fit.frames[f]);
    }
  }
  const MeshField m = sample_to_mesh(nonaxial, shared_mesh(grid_pixels));
  std::vector<Direction> out;
  if (!(m.amplitudes.maxCoeff() > 0.0))
    return out;
  for (const Peak& p : local_maxima(m, {0.0, 10.0}))
    out.push_back(p.direction);
  return out;
}

} // namespace detail

/// Full separation: watershed initialization, multistart axis search, and
/// refits that add a fiber at the most asymmetric residual while the total
/// cost stays above the threshold. A refit is kept only if it lowers the
/// total cost. Fibers are returned in the world frame, largest mass first.
inline FissileResult fissile_separate(const ShVector& total, const FissileOptions& opt = {})
{
  if (opt.max_fibers < 1 || opt.max_fibers > 3)
    throw std::invalid_argument("max_fibers must lie in [1, 3]");
  if (opt.n_starts < 1 || opt.max_inner_solves < 1)
    throw std::invalid_argument("n_starts and max_inner_solves must be positive");
  Rng rng(opt.seed);
  std::vector<RotationFrame> frames = fissile_init(total, opt.init);
  if (static_cast<int>(frames.size()) > opt.max_fibers)
    frames.resize(static_cast<std::size_t>(opt.max_fibers));

  int solves_left = opt.max_inner_solves;
  bool converged = false;
  FissileFit best = detail::multistart(total, frames, 0, {}, opt, rng, solves_left, converged);
  int used = best.inner_solves;

  while (best.costs.total > opt.cost_threshold && static_cast<int>(best.frames.size()) < opt.max_fibers &&
         solves_left > 0) {
    double asym = 0.0;
    std::vector<Direction> axes = detail::refit_directions(best, total, opt.refit_grid_pixels, asym);
    if (asym <= opt.cost_threshold || axes.empty())
      break;
    std::vector<RotationFrame> grown = best.frames;
    grown.push_back(RotationFrame::from_axis(axes.front()));
    axes.erase(axes.begin());
    bool grown_converged = false;
    FissileFit candidate = detail::multistart(total, grown, static_cast<int>(best.frames.size()), axes, opt, rng,
                                              solves_left, grown_converged);
    used += candidate.inner_solves;
    if (!(candidate.costs.total < best.costs.total - opt.cost_threshold) || candidate.degenerate ||
        detail::min_axis_separation(candidate.frames) < deg2rad(opt.min_axis_sep_deg))
      break;
    best = std::move(candidate);
    converged = grown_converged;
  }
  // drop fibers that carry no signal and re-solve on the remaining axes
  std::vector<RotationFrame> kept;
  for (std::size_t f = 0; f < best.world.size(); ++f)
    if (sh_norm(best.world[f]) > opt.prune_rel * sh_norm(total))
      kept.push_back(best.frames[f]);
  if (!kept.empty() && kept.size() < best.frames.size()) {
    FissileFit pruned = symmetric_least_squares(total, kept);
    pruned.costs = evaluate_costs(pruned, total);
    best = std::move(pruned);
    ++used;
  }
  best.inner_solves = used;
  best.converged = converged;
  best.exhausted = solves_left <= 0;

  // largest mass first
  std::vector<std::size_t> order(best.world.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return best.fiber_coeffs[a][0] > best.fiber_coeffs[b][0]; });
  FissileFit sorted = best;
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted.frames[k] = best.frames[order[k]];
    sorted.fiber_coeffs[k] = best.fiber_coeffs[order[k]];
    sorted.world[k] = best.world[order[k]];
  }
  return {sorted.world, sorted};
}

} // namespace fodsplit
