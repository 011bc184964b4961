#pragma once

// Equal-area hemispherical pixelization (HEALPix layout folded by antipodal
// symmetry), sampling of SH expansions onto it, and peak detection.

#include "fodsplit/sphcore.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fodsplit {

inline constexpr int kMinNside = 2;
inline constexpr int kMaxNside = 64;

/// Hemisphere of a HEALPix tiling with nside^2 * 12 full-sphere pixels, i.e.
/// n_pixels = 6 nside^2 (384 for nside 8). Pixels are ordered by ring from
/// the pole, then by azimuth. Adjacency folds neighbors that fall on the
/// lower hemisphere back through the origin.
class HemiMesh
{
public:
  static HemiMesh build(int n_pixels)
  {
    const int nside = nside_for(n_pixels);
    HemiMesh mesh;
    mesh.nside_ = nside;
    mesh.construct();
    return mesh;
  }

  static int nside_for(int n_pixels)
  {
    for (int ns = kMinNside; ns <= kMaxNside; ++ns)
      if (6 * ns * ns == n_pixels)
        return ns;
    std::string msg = "unsupported n_pixels " + std::to_string(n_pixels) +
                      "; supported values are 6*nside^2 for nside in [2, 64]:";
    for (int ns = kMinNside; ns <= kMaxNside; ++ns)
      msg += " " + std::to_string(6 * ns * ns);
    throw std::invalid_argument(msg);
  }

  int nside() const { return nside_; }
  int size() const { return static_cast<int>(dirs_.size()); }
  const std::vector<Direction>& directions() const { return dirs_; }
  const Direction& direction(int i) const { return dirs_[static_cast<std::size_t>(i)]; }

  /// Solid angle of one pixel: 2 pi / n_pixels.
  double pixel_area() const { return 2.0 * kPi / size(); }

  std::span<const int> neighbors(int i) const
  {
    const auto b = static_cast<std::size_t>(nbr_offset_[static_cast<std::size_t>(i)]);
    const auto e = static_cast<std::size_t>(nbr_offset_[static_cast<std::size_t>(i) + 1]);
    return {nbr_.data() + b, e - b};
  }

  /// Basis values at every pixel for lmax = 8; the lmax = 6 basis is the
  /// first 28 columns.
  Eigen::Ref<const Eigen::MatrixXd> basis(int lmax) const
  {
    validate_lmax(lmax);
    return basis_.leftCols(sh_size(lmax));
  }

  /// Pixel whose center is closest to the axis of d.
  int nearest(const Direction& d) const
  {
    int best = 0;
    double best_dot = -1.0;
    for (int i = 0; i < size(); ++i) {
      const double c = std::abs(dirs_[static_cast<std::size_t>(i)].dot(d));
      if (c > best_dot) {
        best_dot = c;
        best = i;
      }
    }
    return best;
  }

  bool operator==(const HemiMesh& o) const
  {
    return nside_ == o.nside_ && dirs_ == o.dirs_ && nbr_ == o.nbr_ && nbr_offset_ == o.nbr_offset_;
  }

private:
  struct FullPixel
  {
    int ring = 0; // 1 .. 4 nside - 1 from the north pole
    int q = 0;    // azimuth = q * pi / den
    int den = 1;
    double z = 0.0;
  };

  FullPixel full_pixel(int face, int ix, int iy) const
  {
    static constexpr int jrll[] = {2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4};
    static constexpr int jpll[] = {1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7};
    const int ns = nside_, nl4 = 4 * ns;
    const double fact2 = 4.0 / (12.0 * ns * ns);
    const double fact1 = 2.0 * ns * fact2;
    FullPixel p;
    const int jr = jrll[face] * ns - ix - iy - 1;
    int nr, kshift;
    if (jr < ns) {
      nr = jr;
      p.z = 1.0 - nr * nr * fact2;
      kshift = 0;
    } else if (jr > 3 * ns) {
      nr = nl4 - jr;
      p.z = nr * nr * fact2 - 1.0;
      kshift = 0;
    } else {
      nr = ns;
      p.z = (2 * ns - jr) * fact1;
      kshift = (jr - ns) & 1;
    }
    int jp = (jpll[face] * nr + ix - iy + 1 + kshift) / 2;
    if (jp > nl4)
      jp -= nl4;
    if (jp < 1)
      jp += nl4;
    // phi = (jp - (kshift + 1) / 2) * (pi / 2) / nr
    p.ring = jr;
    p.q = 2 * jp - (kshift + 1);
    p.den = 4 * nr;
    return p;
  }

  int full_index(int face, int ix, int iy) const { return (face * nside_ + ix) * nside_ + iy; }

  // Up to 8 neighbors (x, y, face offsets), -1 where a corner has only 7.
  std::array<int, 8> full_neighbors(int face, int ix, int iy) const
  {
    static constexpr int xoffset[] = {-1, -1, 0, 1, 1, 1, 0, -1};
    static constexpr int yoffset[] = {0, 1, 1, 1, 0, -1, -1, -1};
    static constexpr int facearray[][12] = {{8, 9, 10, 11, -1, -1, -1, -1, 10, 11, 8, 9},
                                            {5, 6, 7, 4, 8, 9, 10, 11, 9, 10, 11, 8},
                                            {-1, -1, -1, -1, 5, 6, 7, 4, -1, -1, -1, -1},
                                            {4, 5, 6, 7, 11, 8, 9, 10, 11, 8, 9, 10},
                                            {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11},
                                            {1, 2, 3, 0, 0, 1, 2, 3, 5, 6, 7, 4},
                                            {-1, -1, -1, -1, 7, 4, 5, 6, -1, -1, -1, -1},
                                            {3, 0, 1, 2, 3, 0, 1, 2, 4, 5, 6, 7},
                                            {2, 3, 0, 1, -1, -1, -1, -1, 0, 1, 2, 3}};
    static constexpr int swaparray[][12] = {{0, 0, 0, 0, 0, 0, 0, 0, 3, 3, 3, 3},
                                            {0, 0, 0, 0, 0, 0, 0, 0, 6, 6, 6, 6},
                                            {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                                            {0, 0, 0, 0, 0, 0, 0, 0, 5, 5, 5, 5},
                                            {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                                            {5, 5, 5, 5, 0, 0, 0, 0, 0, 0, 0, 0},
                                            {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                                            {6, 6, 6, 6, 0, 0, 0, 0, 0, 0, 0, 0},
                                            {3, 3, 3, 3, 0, 0, 0, 0, 0, 0, 0, 0}};
    std::array<int, 8> out{};
    const int ns = nside_;
    for (int i = 0; i < 8; ++i) {
      int x = ix + xoffset[i], y = iy + yoffset[i];
      int nbnum = 4;
      if (x < 0) {
        x += ns;
        nbnum -= 1;
      } else if (x >= ns) {
        x -= ns;
        nbnum += 1;
      }
      if (y < 0) {
        y += ns;
        nbnum -= 3;
      } else if (y >= ns) {
        y -= ns;
        nbnum += 3;
      }
      const int f = facearray[nbnum][face];
      if (f < 0) {
        out[static_cast<std::size_t>(i)] = -1;
        continue;
      }
      const int swap = swaparray[nbnum][face];
      if (swap & 1)
        x = ns - x - 1;
      if (swap & 2)
        y = ns - y - 1;
      if (swap & 4)
        std::swap(x, y);
      out[static_cast<std::size_t>(i)] = full_index(f, x, y);
    }
    return out;
  }

  void construct()
  {
    const int ns = nside_, npix = 12 * ns * ns;
    std::vector<FullPixel> full(static_cast<std::size_t>(npix));
    std::map<std::pair<int, int>, int> by_key;
    for (int f = 0; f < 12; ++f)
      for (int x = 0; x < ns; ++x)
        for (int y = 0; y < ns; ++y) {
          const int idx = full_index(f, x, y);
          full[static_cast<std::size_t>(idx)] = full_pixel(f, x, y);
          const FullPixel& p = full[static_cast<std::size_t>(idx)];
          by_key[{p.ring, p.q}] = idx;
        }

    // antipode: ring -> 4 nside - ring, azimuth -> azimuth + pi
    auto antipode = [&](int idx) {
      const FullPixel& p = full[static_cast<std::size_t>(idx)];
      const int q = (p.q + p.den) % (2 * p.den);
      return by_key.at({4 * ns - p.ring, q});
    };
    auto upper = [&](const FullPixel& p) {
      return p.ring < 2 * ns || (p.ring == 2 * ns && p.q >= 0 && p.q < p.den);
    };

    std::vector<int> north;
    for (int i = 0; i < npix; ++i)
      if (upper(full[static_cast<std::size_t>(i)]))
        north.push_back(i);
    std::sort(north.begin(), north.end(), [&](int a, int b) {
      const FullPixel& pa = full[static_cast<std::size_t>(a)];
      const FullPixel& pb = full[static_cast<std::size_t>(b)];
      if (pa.ring != pb.ring)
        return pa.ring < pb.ring;
      return pa.q < pb.q;
    });

    std::vector<int> hemi_of(static_cast<std::size_t>(npix), -1);
    for (std::size_t h = 0; h < north.size(); ++h)
      hemi_of[static_cast<std::size_t>(north[h])] = static_cast<int>(h);
    for (int i = 0; i < npix; ++i)
      if (hemi_of[static_cast<std::size_t>(i)] < 0)
        hemi_of[static_cast<std::size_t>(i)] = hemi_of[static_cast<std::size_t>(antipode(i))];

    dirs_.clear();
    nbr_.clear();
    nbr_offset_.assign(1, 0);
    for (int h_full : north) {
      const FullPixel& p = full[static_cast<std::size_t>(h_full)];
      const double phi = p.q * kPi / p.den;
      const double st = std::sqrt(std::max(0.0, (1.0 - p.z) * (1.0 + p.z)));
      dirs_.emplace_back(st * std::cos(phi), st * std::sin(phi), p.z);

      const int f = h_full / (ns * ns), x = (h_full / ns) % ns, y = h_full % ns;
      std::vector<int> adj;
      for (int n : full_neighbors(f, x, y))
        if (n >= 0) {
          const int hn = hemi_of[static_cast<std::size_t>(n)];
          if (hn != hemi_of[static_cast<std::size_t>(h_full)])
            adj.push_back(hn);
        }
      std::sort(adj.begin(), adj.end());
      adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
      nbr_.insert(nbr_.end(), adj.begin(), adj.end());
      nbr_offset_.push_back(static_cast<int>(nbr_.size()));
    }

    basis_.resize(static_cast<Eigen::Index>(dirs_.size()), sh_size(kMaxSupportedLmax));
    Eigen::VectorXd b(sh_size(kMaxSupportedLmax));
    for (std::size_t i = 0; i < dirs_.size(); ++i) {
      eval_basis_into(dirs_[i], kMaxSupportedLmax, b);
      basis_.row(static_cast<Eigen::Index>(i)) = b.transpose();
    }
  }

  int nside_ = 0;
  std::vector<Direction> dirs_;
  std::vector<int> nbr_;
  std::vector<int> nbr_offset_;
  Eigen::MatrixXd basis_;
};

/// Process-wide immutable mesh for n_pixels, built on first use.
inline std::shared_ptr<const HemiMesh> shared_mesh(int n_pixels)
{
  static std::mutex mutex;
  static std::map<int, std::shared_ptr<const HemiMesh>> cache;
  const std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n_pixels);
  if (it == cache.end())
    it = cache.emplace(n_pixels, std::make_shared<const HemiMesh>(HemiMesh::build(n_pixels))).first;
  return it->second;
}

inline std::shared_ptr<const HemiMesh> build_mesh(int n_pixels) { return shared_mesh(n_pixels); }

inline constexpr int kNetworkMeshPixels = 384;
/// Smallest hemisphere tiling with at least 1281 directions (nside 15).
inline constexpr int kDenseMeshPixels = 1350;

// ---------------------------------------------------------------------------

/// One real amplitude per mesh pixel.
struct MeshField
{
  std::shared_ptr<const HemiMesh> mesh;
  Eigen::VectorXd amplitudes;

  MeshField() = default;
  MeshField(std::shared_ptr<const HemiMesh> m, Eigen::VectorXd a)
      : mesh(std::move(m)), amplitudes(std::move(a))
  {
    if (!mesh)
      throw std::invalid_argument("MeshField needs a mesh");
    if (amplitudes.size() != mesh->size())
      throw std::invalid_argument("MeshField length " + std::to_string(amplitudes.size()) +
                                  " does not match mesh size " + std::to_string(mesh->size()));
    if (!amplitudes.allFinite())
      throw std::invalid_argument("MeshField amplitudes must be finite");
  }

  int size() const { return static_cast<int>(amplitudes.size()); }

  /// Sum of amplitude times pixel area (integral over the hemisphere).
  double integral() const { return amplitudes.sum() * mesh->pixel_area(); }
};

inline MeshField sample_to_mesh(const ShVector& s, std::shared_ptr<const HemiMesh> mesh)
{
  Eigen::VectorXd a = mesh->basis(s.lmax()) * s.coeffs();
  return {std::move(mesh), std::move(a)};
}

struct Peak
{
  Direction direction;
  double amplitude = 0.0;
  int pixel = -1;
};

struct PeakOptions
{
  double rel_threshold = 0.1;
  double min_sep_deg = 15.0;
};

/// Strict local maxima above rel_threshold * max, greedily merged (larger
/// kept) when closer than min_sep_deg as axes. Descending amplitude.
inline std::vector<Peak> local_maxima(const MeshField& f, const PeakOptions& opt = {})
{
  if (!(opt.rel_threshold >= 0.0 && opt.rel_threshold < 1.0))
    throw std::invalid_argument("rel_threshold must be in [0, 1)");
  if (!(opt.min_sep_deg > 0.0))
    throw std::invalid_argument("min_sep_deg must be positive");
  const HemiMesh& mesh = *f.mesh;
  const double global_max = f.amplitudes.maxCoeff();
  const double floor = opt.rel_threshold * global_max;

  std::vector<Peak> candidates;
  for (int i = 0; i < mesh.size(); ++i) {
    const double a = f.amplitudes[i];
    if (!(a > floor))
      continue;
    bool strict = true;
    for (int n : mesh.neighbors(i))
      if (!(a > f.amplitudes[n])) {
        strict = false;
        break;
      }
    if (strict)
      candidates.push_back({mesh.direction(i), a, i});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Peak& a, const Peak& b) { return a.amplitude > b.amplitude; });

  const double min_sep = deg2rad(opt.min_sep_deg);
  std::vector<Peak> peaks;
  for (const Peak& c : candidates) {
    const bool close = std::any_of(peaks.begin(), peaks.end(), [&](const Peak& p) {
      return axis_angle(p.direction, c.direction) < min_sep;
    });
    if (!close)
      peaks.push_back(c);
  }
  return peaks;
}

} // namespace fodsplit
