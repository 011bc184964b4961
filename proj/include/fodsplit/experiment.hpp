#pragma once

// Running the three separators over datasets and sweep grids.

#include "fodsplit/fissile.hpp"
#include "fodsplit/lobes.hpp"
#include "fodsplit/metrics.hpp"
#include "fodsplit/simulate.hpp"
#include "fodsplit/vmfnet.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fodsplit {

enum class Method
{
  fissile,
  watershed,
  net,
};

inline std::string to_string(Method m)
{
  switch (m) {
  case Method::fissile:
    return "fissile";
  case Method::watershed:
    return "watershed";
  case Method::net:
    return "net";
  }
  return "?";
}

inline Method method_from_string(const std::string& s)
{
  for (Method m : {Method::fissile, Method::watershed, Method::net})
    if (to_string(m) == s)
      return m;
  throw std::invalid_argument("unknown method '" + s + "' (expected fissile, watershed or net)");
}

/// Single-fiber ODFs with their axes and volume fractions.
struct Separation
{
  std::vector<ShVector> odfs;
  std::vector<Direction> axes;
  std::vector<double> fractions;
  std::vector<Fixel> fixels;
};

struct SeparatorOptions
{
  FissileOptions fissile;
  WatershedOptions watershed;
  PeakOptions net_peaks;
};

/// One of the three methods, ready to run on ODFs. The network variant
/// shares its model and is safe to call from several threads.
class Separator
{
public:
  Separator(Method method, SeparatorOptions opt = {}, std::shared_ptr<const MlpModel> model = nullptr)
      : method_(method), opt_(std::move(opt)), model_(std::move(model))
  {
    if (method_ == Method::net) {
      if (!model_)
        throw std::invalid_argument("the net method needs a trained model (pass a checkpoint)");
      mesh_ = shared_mesh(model_->input_size());
    }
  }

  Method method() const { return method_; }

  Separation operator()(const ShVector& total) const
  {
    switch (method_) {
    case Method::fissile:
      return from_fissile(fissile_separate(total, opt_.fissile));
    case Method::watershed:
      return from_fixels(watershed_separate(total, opt_.watershed).fixels, total.lmax());
    case Method::net:
      return from_fixels(net_separate_full(*model_, total, mesh_, opt_.net_peaks).fixels, total.lmax());
    }
    return {};
  }

  /// Network separation of many ODFs with one batched forward pass.
  std::vector<Separation> batch(const std::vector<ShVector>& totals) const
  {
    if (method_ != Method::net) {
      std::vector<Separation> out;
      for (const ShVector& t : totals)
        out.push_back((*this)(t));
      return out;
    }
    const Eigen::MatrixXd p = predict_distributions(*model_, totals, *mesh_);
    std::vector<Separation> out;
    for (std::size_t j = 0; j < totals.size(); ++j)
      out.push_back(from_fixels(
          fixels_from_prediction(p.col(static_cast<Eigen::Index>(j)), mesh_, totals[j].lmax(), opt_.net_peaks).fixels,
          totals[j].lmax()));
    return out;
  }

private:
  static Separation from_fissile(const FissileResult& r)
  {
    Separation s;
    s.odfs = r.odfs;
    const double mass = reconstruct(r.fit).integral();
    for (std::size_t k = 0; k < r.odfs.size(); ++k) {
      s.axes.push_back(r.fit.frames[k].axis().canonical());
      s.fractions.push_back(mass != 0.0 ? r.odfs[k].integral() / mass : 0.0);
    }
    return s;
  }

  static Separation from_fixels(std::vector<Fixel> fixels, int lmax)
  {
    Separation s;
    if (fixels.empty())
      return s;
    s.odfs = fixels_to_sh(fixels, lmax, true);
    for (const ShVector& o : s.odfs)
      s.fractions.push_back(o.integral());
    for (const Fixel& f : fixels)
      s.axes.push_back(f.direction);
    s.fixels = std::move(fixels);
    return s;
  }

  Method method_;
  SeparatorOptions opt_;
  std::shared_ptr<const MlpModel> model_;
  std::shared_ptr<const HemiMesh> mesh_;
};

struct RunOptions
{
  /// Process at most this many samples (0 = all).
  long max_voxels = 0;
  int threads = 1;
  /// Network batch size; 1 times every voxel through the full pipeline.
  int net_batch = 256;
};

struct RunResult
{
  std::vector<Separation> separations;
  std::vector<EvalRecord> records;
  double wall_seconds = 0.0;
  double ms_per_voxel = 0.0;
};

/// Apply `fn(i)` for i in [0, n) on `threads` workers; results depend only on
/// i, so the thread count never changes the output.
template <class F>
void parallel_for(long n, int threads, F&& fn)
{
  if (threads <= 1 || n <= 1) {
    for (long i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<long>(threads, n); ++t)
    pool.emplace_back([&] {
      for (long i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error)
            error = std::current_exception();
        }
      }
    });
  for (std::thread& t : pool)
    t.join();
  if (error)
    std::rethrow_exception(error);
}

/// Separate and score every sample. Per-voxel time is total wall time over
/// the voxel count.
inline RunResult run_separation(const std::vector<OdfSample>& data, const Separator& sep, const RunOptions& opt = {})
{
  const long n = opt.max_voxels > 0 ? std::min<long>(opt.max_voxels, static_cast<long>(data.size()))
                                    : static_cast<long>(data.size());
  RunResult r;
  r.separations.resize(static_cast<std::size_t>(n));
  const auto t0 = std::chrono::steady_clock::now();
  if (sep.method() == Method::net && opt.net_batch > 1) {
    const long chunk = opt.net_batch;
    const long n_chunks = (n + chunk - 1) / chunk;
    parallel_for(n_chunks, opt.threads, [&](long c) {
      std::vector<ShVector> totals;
      for (long i = c * chunk; i < std::min(n, (c + 1) * chunk); ++i)
        totals.push_back(data[static_cast<std::size_t>(i)].total);
      auto out = sep.batch(totals);
      for (std::size_t k = 0; k < out.size(); ++k)
        r.separations[static_cast<std::size_t>(c * chunk) + k] = std::move(out[k]);
    });
  } else {
    parallel_for(n, opt.threads,
                 [&](long i) { r.separations[static_cast<std::size_t>(i)] = sep(data[static_cast<std::size_t>(i)].total); });
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.ms_per_voxel = n > 0 ? 1e3 * r.wall_seconds / static_cast<double>(n) : 0.0;
  for (long i = 0; i < n; ++i) {
    const Separation& s = r.separations[static_cast<std::size_t>(i)];
    r.records.push_back(evaluate_sample(to_string(sep.method()), i, data[static_cast<std::size_t>(i)], s.odfs, s.axes,
                                        s.fractions, r.ms_per_voxel));
  }
  return r;
}

// ---------------------------------------------------------------------------

struct SweepGrid
{
  std::vector<double> separations_deg{20, 25, 30, 35, 40, 45, 50, 60, 70, 80, 90};
  std::vector<double> minor_fractions{0.1, 0.2, 0.3, 0.4, 0.5};
  int samples_per_cell = 30;
  std::uint64_t seed = 0;
  int lmax = 6;

  void validate() const
  {
    if (separations_deg.empty() || minor_fractions.empty())
      throw std::invalid_argument("sweep grid has no cells");
    if (samples_per_cell < 1)
      throw std::invalid_argument("sweep needs at least one sample per cell");
    for (double s : separations_deg)
      if (!(s > 0.0 && s <= 90.0))
        throw std::invalid_argument("sweep separations must lie in (0, 90] degrees");
    for (double v : minor_fractions)
      if (!(v > 0.0 && v <= 0.5))
        throw std::invalid_argument("sweep minor fractions must lie in (0, 0.5]");
    validate_lmax(lmax);
  }
};

/// Two-fiber samples for one cell; sample k of cell (i, j) draws from a seed
/// derived from (seed, i, j, k) only.
inline std::vector<OdfSample> sweep_cell_samples(const SweepGrid& g, std::size_t i, std::size_t j)
{
  std::vector<OdfSample> out;
  const std::uint64_t cell = derive_seed(derive_seed(g.seed, i), j);
  for (int k = 0; k < g.samples_per_cell; ++k) {
    Rng rng(derive_seed(cell, static_cast<std::uint64_t>(k)));
    out.push_back(compose_multifiber(two_fiber_config(rng, g.separations_deg[i], g.minor_fractions[j]), g.lmax));
  }
  return out;
}

struct SweepCell
{
  std::string method;
  double separation_deg = 0.0;
  double minor_fraction = 0.0;
  Summary min_acc;
  double ms_per_voxel = 0.0;
};

/// Median and IQR of the per-sample minimum ACC (misses count as 0) for
/// every grid cell.
inline std::vector<SweepCell> run_sweep(const SweepGrid& g, const Separator& sep, const RunOptions& opt = {})
{
  g.validate();
  RunOptions cell_opt = opt;
  cell_opt.max_voxels = 0;
  std::vector<SweepCell> out;
  for (std::size_t i = 0; i < g.separations_deg.size(); ++i)
    for (std::size_t j = 0; j < g.minor_fractions.size(); ++j) {
      const RunResult r = run_separation(sweep_cell_samples(g, i, j), sep, cell_opt);
      std::vector<double> mins;
      for (const EvalRecord& rec : r.records)
        mins.push_back(rec.min_acc());
      out.push_back({to_string(sep.method()), g.separations_deg[i], g.minor_fractions[j], summarize(mins),
                     r.ms_per_voxel});
    }
  return out;
}

} // namespace fodsplit
