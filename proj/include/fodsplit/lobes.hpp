#pragma once

// Watershed lobe segmentation of a sampled ODF, fixel extraction, and the
// fixel-based separation baseline.

#include "fodsplit/mesh.hpp"
#include "fodsplit/sphcore.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace fodsplit {

struct Lobe
{
  std::vector<int> members;
  std::vector<double> amplitudes;
  int peak = -1;
  double peak_amplitude = 0.0;
};

struct Fixel
{
  Direction direction;
  double weight = 0.0;
};

struct SegmentOptions
{
  /// Lobes whose peak is below this fraction of the global maximum are
  /// discarded; 0 keeps the full partition of positive pixels. Ringing of
  /// order-6 deltas forms lobes up to about 0.2 of the maximum.
  double min_peak_rel = 0.2;
};

/// Descending-amplitude region growing over the mesh adjacency. A pixel joins
/// the lobe of its largest already-assigned neighbor or founds a new lobe;
/// non-positive pixels stay unassigned. Lobes are ordered by peak amplitude.
inline std::vector<Lobe> segment_lobes(const MeshField& f, const SegmentOptions& opt = {})
{
  if (!(opt.min_peak_rel >= 0.0 && opt.min_peak_rel < 1.0))
    throw std::invalid_argument("min_peak_rel must lie in [0, 1)");
  const HemiMesh& mesh = *f.mesh;
  const int n = f.size();
  // positive pixels by descending amplitude, ties by index
  std::vector<std::pair<double, int>> order;
  order.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    if (f.amplitudes[i] > 0.0)
      order.emplace_back(f.amplitudes[i], i);
  std::sort(order.begin(), order.end(),
            [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });

  std::vector<int> label(static_cast<std::size_t>(n), -1);
  std::vector<Lobe> lobes;
  for (const auto& [a, i] : order) {
    int best = -1;
    for (int j : mesh.neighbors(i))
      if (label[static_cast<std::size_t>(j)] >= 0 && (best < 0 || f.amplitudes[j] > f.amplitudes[best]))
        best = j;
    int id;
    if (best < 0) {
      id = static_cast<int>(lobes.size());
      lobes.push_back({{}, {}, i, a});
    } else {
      id = label[static_cast<std::size_t>(best)];
    }
    label[static_cast<std::size_t>(i)] = id;
    lobes[static_cast<std::size_t>(id)].members.push_back(i);
    lobes[static_cast<std::size_t>(id)].amplitudes.push_back(a);
  }
  if (lobes.empty())
    return lobes;
  const double cut = opt.min_peak_rel * lobes.front().peak_amplitude;
  std::erase_if(lobes, [&](const Lobe& l) { return l.peak_amplitude < cut; });
  return lobes;
}

inline std::vector<Lobe> segment_lobes(const ShVector& s, std::shared_ptr<const HemiMesh> dense_mesh,
                                       const SegmentOptions& opt = {})
{
  return segment_lobes(sample_to_mesh(s, std::move(dense_mesh)), opt);
}

/// Amplitude-weighted mean direction (members folded toward the peak) and
/// hemisphere-integrated weight of each lobe, sorted by descending weight.
inline std::vector<Fixel> lobes_to_fixels(const std::vector<Lobe>& lobes, const HemiMesh& mesh)
{
  std::vector<Fixel> out;
  for (const Lobe& lobe : lobes) {
    const Eigen::Vector3d& p = mesh.direction(lobe.peak).vec();
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    double mass = 0.0;
    for (std::size_t k = 0; k < lobe.members.size(); ++k) {
      const Eigen::Vector3d& d = mesh.direction(lobe.members[k]).vec();
      sum += lobe.amplitudes[k] * (d.dot(p) < 0.0 ? -d : d);
      mass += lobe.amplitudes[k];
    }
    out.push_back({Direction(sum).canonical(), mass * mesh.pixel_area()});
  }
  std::stable_sort(out.begin(), out.end(), [](const Fixel& a, const Fixel& b) { return a.weight > b.weight; });
  return out;
}

/// One truncated delta per fixel, scaled by its weight (normalized to sum to
/// 1 when `normalize` is set).
inline std::vector<ShVector> fixels_to_sh(const std::vector<Fixel>& fixels, int lmax, bool normalize = true)
{
  if (fixels.empty())
    throw std::invalid_argument("fixels_to_sh needs at least one fixel");
  double total = 0.0;
  for (const Fixel& x : fixels) {
    if (!std::isfinite(x.weight) || x.weight < 0.0)
      throw std::invalid_argument("fixel weights must be finite and non-negative");
    total += x.weight;
  }
  if (!(total > 0.0))
    throw std::invalid_argument("fixel weights are all zero");
  std::vector<ShVector> out;
  for (const Fixel& x : fixels)
    out.push_back(delta_sh(x.direction, lmax) * (normalize ? x.weight / total : x.weight));
  return out;
}

struct InitOptions
{
  int grid_pixels = kDenseMeshPixels;
  double merge_sep_deg = 35.0;
  double min_peak_rel = 0.2;
  int max_frames = 3;
};

/// Starting fiber frames from the lobe peaks. Peaks closer than
/// merge_sep_deg to a stronger peak are merged into it and peaks below
/// min_peak_rel of the global maximum are dropped.
inline std::vector<RotationFrame> fissile_init(const ShVector& s, const InitOptions& opt = {})
{
  const auto grid = shared_mesh(opt.grid_pixels);
  const MeshField f = sample_to_mesh(s, grid);
  const std::vector<Lobe> lobes = segment_lobes(f, {0.0});
  std::vector<RotationFrame> frames;
  if (lobes.empty()) {
    Eigen::Index arg = 0;
    f.amplitudes.maxCoeff(&arg);
    frames.push_back(RotationFrame::from_axis(grid->direction(static_cast<int>(arg))));
    return frames;
  }
  const double cut = opt.min_peak_rel * lobes.front().peak_amplitude;
  const double merge = deg2rad(opt.merge_sep_deg);
  std::vector<Direction> kept;
  for (const Lobe& lobe : lobes) {
    const Direction& d = grid->direction(lobe.peak);
    const bool merged = std::any_of(kept.begin(), kept.end(),
                                    [&](const Direction& k) { return axis_angle(k, d) < merge; });
    if (merged || lobe.peak_amplitude < cut)
      continue;
    kept.push_back(d);
    if (static_cast<int>(kept.size()) == opt.max_frames)
      break;
  }
  for (const Direction& d : kept)
    frames.push_back(RotationFrame::from_axis(d));
  return frames;
}

struct WatershedOptions
{
  int dense_pixels = kDenseMeshPixels;
  SegmentOptions segment;
  bool normalize = true;
};

struct WatershedResult
{
  std::vector<Fixel> fixels;
  std::vector<ShVector> odfs;
};

/// Fixel-based separation: segment, take one fixel per lobe, and rebuild a
/// truncated delta for each.
inline WatershedResult watershed_separate(const ShVector& s, const WatershedOptions& opt = {})
{
  const auto mesh = shared_mesh(opt.dense_pixels);
  WatershedResult r;
  r.fixels = lobes_to_fixels(segment_lobes(s, mesh, opt.segment), *mesh);
  if (!r.fixels.empty())
    r.odfs = fixels_to_sh(r.fixels, s.lmax(), opt.normalize);
  return r;
}

} // namespace fodsplit
