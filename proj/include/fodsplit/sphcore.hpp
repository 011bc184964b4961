#pragma once

// Real, even-order spherical harmonics: basis evaluation, coefficient
// rotation and delta projection.
//
// Convention: orthonormal real basis without the Condon-Shortley phase,
// coefficients ordered as in MRtrix, i.e. for l = 0, 2, ..., lmax and
// m = -l..l the coefficient of Y(l,m) lives at index l(l+1)/2 + m.
//
//   m < 0 : sqrt(2) N(l,|m|) P(l,|m|)(cos theta) sin(|m| phi)
//   m = 0 :         N(l,0)   P(l,0)(cos theta)
//   m > 0 : sqrt(2) N(l,m)   P(l,m)(cos theta) cos(m phi)

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace fodsplit {

inline constexpr double kPi = std::numbers::pi;
inline constexpr int kMaxSupportedLmax = 8;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Throws std::invalid_argument unless lmax is even and in [0, 8].
inline void validate_lmax(int lmax)
{
  if (lmax < 0 || lmax % 2 != 0 || lmax > kMaxSupportedLmax)
    throw std::invalid_argument("lmax must be an even integer in [0, 8], got " +
                                std::to_string(lmax));
}

/// Number of coefficients of an even-order expansion up to lmax.
constexpr int sh_size(int lmax) { return (lmax + 1) * (lmax + 2) / 2; }

/// Index of coefficient (l, m); l must be even.
constexpr int sh_index(int l, int m) { return l * (l + 1) / 2 + m; }

/// Degree l of the coefficient stored at `index`.
constexpr int sh_degree(int index)
{
  int l = 0;
  while (sh_index(l, l) < index)
    l += 2;
  return l;
}

constexpr int sh_order(int index) { return index - sh_index(sh_degree(index), 0); }

// ---------------------------------------------------------------------------

/// Unit 3-vector. The antipodal pair (d, -d) represents the same fiber axis;
/// canonical() picks the representative on the upper hemisphere.
class Direction
{
public:
  Direction() : v_(0.0, 0.0, 1.0) {}

  explicit Direction(const Eigen::Vector3d& v)
  {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw std::invalid_argument("direction vector must be finite and non-zero");
    v_ = v / n;
  }

  Direction(double x, double y, double z) : Direction(Eigen::Vector3d(x, y, z)) {}

  static Direction from_angles(double theta, double phi)
  {
    const double st = std::sin(theta);
    return Direction(st * std::cos(phi), st * std::sin(phi), std::cos(theta));
  }

  static Direction x_axis() { return {1.0, 0.0, 0.0}; }
  static Direction y_axis() { return {0.0, 1.0, 0.0}; }
  static Direction z_axis() { return {0.0, 0.0, 1.0}; }

  const Eigen::Vector3d& vec() const { return v_; }
  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }

  /// Polar angle in [0, pi].
  double theta() const { return std::acos(std::clamp(v_.z(), -1.0, 1.0)); }

  /// Azimuth in [0, 2 pi).
  double phi() const
  {
    double p = std::atan2(v_.y(), v_.x());
    if (p < 0.0)
      p += 2.0 * kPi;
    if (p >= 2.0 * kPi)
      p = 0.0;
    return p;
  }

  double dot(const Direction& other) const { return v_.dot(other.v_); }

  Direction operator-() const
  {
    Direction d;
    d.v_ = -v_;
    return d;
  }

  /// The antipodal representative with z > 0 (ties on the equator broken by
  /// y > 0, then x > 0).
  Direction canonical() const
  {
    const bool flip = v_.z() < 0.0 ||
                      (v_.z() == 0.0 && (v_.y() < 0.0 || (v_.y() == 0.0 && v_.x() < 0.0)));
    return flip ? -*this : *this;
  }

  bool operator==(const Direction&) const = default;

private:
  Eigen::Vector3d v_;
};

/// Angle between two fiber axes in radians, in [0, pi/2].
inline double axis_angle(const Direction& a, const Direction& b)
{
  return std::atan2(a.vec().cross(b.vec()).norm(), std::abs(a.dot(b)));
}

// ---------------------------------------------------------------------------

/// Proper rotation. The canonical pole z is carried onto axis().
class RotationFrame
{
public:
  RotationFrame() : r_(Eigen::Matrix3d::Identity()) {}

  /// Rz(phi) * Ry(theta) * Rz(spin): takes z onto the direction (theta, phi).
  static RotationFrame from_angles(double theta, double phi, double spin = 0.0)
  {
    const Eigen::Matrix3d m = (Eigen::AngleAxisd(phi, Eigen::Vector3d::UnitZ()) *
                               Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(spin, Eigen::Vector3d::UnitZ()))
                                  .toRotationMatrix();
    RotationFrame f;
    f.r_ = m;
    return f;
  }

  static RotationFrame from_axis(const Direction& axis)
  {
    return from_angles(axis.theta(), axis.phi());
  }

  static RotationFrame from_matrix(const Eigen::Matrix3d& m)
  {
    const double ortho = (m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho < 1e-10) || std::abs(m.determinant() - 1.0) > 1e-10)
      throw std::invalid_argument("matrix is not a proper rotation");
    RotationFrame f;
    f.r_ = m;
    return f;
  }

  const Eigen::Matrix3d& matrix() const { return r_; }
  Direction axis() const { return Direction(r_.col(2)); }
  Eigen::Vector3d apply(const Eigen::Vector3d& v) const { return r_ * v; }
  Direction apply(const Direction& d) const { return Direction(r_ * d.vec()); }

  RotationFrame inverse() const
  {
    RotationFrame f;
    f.r_ = r_.transpose();
    return f;
  }

  /// Composition: (b * a) applies a first, then b.
  friend RotationFrame operator*(const RotationFrame& b, const RotationFrame& a)
  {
    RotationFrame f;
    f.r_ = b.r_ * a.r_;
    return f;
  }

private:
  Eigen::Matrix3d r_;
};

// ---------------------------------------------------------------------------

/// Coefficients of an even-order real spherical-harmonic expansion.
class ShVector
{
public:
  ShVector() : ShVector(0) {}

  explicit ShVector(int lmax) : lmax_(lmax)
  {
    validate_lmax(lmax);
    c_ = Eigen::VectorXd::Zero(sh_size(lmax));
  }

  ShVector(int lmax, Eigen::VectorXd coeffs) : lmax_(lmax), c_(std::move(coeffs))
  {
    validate_lmax(lmax);
    if (c_.size() != sh_size(lmax))
      throw std::invalid_argument("coefficient count " + std::to_string(c_.size()) +
                                  " does not match lmax " + std::to_string(lmax));
    if (!c_.allFinite())
      throw std::invalid_argument("coefficients must be finite");
  }

  int lmax() const { return lmax_; }
  Eigen::Index size() const { return c_.size(); }

  const Eigen::VectorXd& coeffs() const { return c_; }
  Eigen::VectorXd& coeffs() { return c_; }

  double operator[](Eigen::Index i) const { return c_[i]; }
  double& operator[](Eigen::Index i) { return c_[i]; }

  double at(int l, int m) const { return c_[sh_index(l, m)]; }
  double& at(int l, int m) { return c_[sh_index(l, m)]; }

  /// Euclidean norm of the degree-l block.
  double block_norm(int l) const { return c_.segment(sh_index(l, -l), 2 * l + 1).norm(); }

  /// Integral over the whole sphere (only l = 0 survives).
  double integral() const { return c_[0] * std::sqrt(4.0 * kPi); }

  ShVector& operator+=(const ShVector& o)
  {
    require_same(o);
    c_ += o.c_;
    return *this;
  }
  ShVector& operator-=(const ShVector& o)
  {
    require_same(o);
    c_ -= o.c_;
    return *this;
  }
  ShVector& operator*=(double s)
  {
    c_ *= s;
    return *this;
  }

  friend ShVector operator+(ShVector a, const ShVector& b) { return a += b; }
  friend ShVector operator-(ShVector a, const ShVector& b) { return a -= b; }
  friend ShVector operator*(ShVector a, double s) { return a *= s; }
  friend ShVector operator*(double s, ShVector a) { return a *= s; }

  bool operator==(const ShVector& o) const { return lmax_ == o.lmax_ && c_ == o.c_; }

  void require_same(const ShVector& o) const
  {
    if (o.lmax_ != lmax_)
      throw std::invalid_argument("ShVector lmax mismatch: " + std::to_string(lmax_) + " vs " +
                                  std::to_string(o.lmax_));
  }

private:
  int lmax_ = 0;
  Eigen::VectorXd c_;
};

// ---------------------------------------------------------------------------

namespace detail {

// Associated Legendre P(l,m)(x), no Condon-Shortley phase, scaled by the
// orthonormalization factor sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!).
// Fills out[l][m] for 0 <= m <= l <= lmax.
template <int MaxL = 8>
struct NormalizedLegendre
{
  std::array<std::array<double, MaxL + 1>, MaxL + 1> p{};

  NormalizedLegendre(double x, int lmax)
  {
    const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
    for (int m = 0; m <= lmax; ++m) {
      // P(m,m) = (2m-1)!! s^m
      double pmm = 1.0;
      for (int k = 1; k <= m; ++k)
        pmm *= (2.0 * k - 1.0) * s;
      p[m][m] = pmm;
      if (m + 1 <= lmax)
        p[m + 1][m] = x * (2.0 * m + 1.0) * pmm;
      for (int l = m + 2; l <= lmax; ++l)
        p[l][m] = ((2.0 * l - 1.0) * x * p[l - 1][m] - (l + m - 1.0) * p[l - 2][m]) / (l - m);
    }
    for (int l = 0; l <= lmax; ++l)
      for (int m = 0; m <= l; ++m) {
        double ratio = 1.0; // (l-m)!/(l+m)!
        for (int k = l - m + 1; k <= l + m; ++k)
          ratio /= k;
        p[l][m] *= std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * ratio);
      }
  }
};

} // namespace detail

/// Fills `out` (length sh_size(lmax)) with the basis evaluated at d.
inline void eval_basis_into(const Direction& d, int lmax, Eigen::Ref<Eigen::VectorXd> out)
{
  const double x = std::clamp(d.z(), -1.0, 1.0);
  const detail::NormalizedLegendre<> leg(x, lmax);
  const double phi = std::atan2(d.y(), d.x());
  for (int l = 0; l <= lmax; l += 2) {
    out[sh_index(l, 0)] = leg.p[l][0];
    for (int m = 1; m <= l; ++m) {
      const double a = std::sqrt(2.0) * leg.p[l][m];
      out[sh_index(l, m)] = a * std::cos(m * phi);
      out[sh_index(l, -m)] = a * std::sin(m * phi);
    }
  }
}

/// Basis values at d, one per coefficient in ShVector order.
inline Eigen::VectorXd eval_basis(const Direction& d, int lmax)
{
  validate_lmax(lmax);
  Eigen::VectorXd out(sh_size(lmax));
  eval_basis_into(d, lmax, out);
  return out;
}

inline double eval_sh(const ShVector& s, const Direction& d)
{
  Eigen::VectorXd b(s.size());
  eval_basis_into(d, s.lmax(), b);
  return s.coeffs().dot(b);
}

/// Value of a zonal (m = 0 only) expansion at polar angle theta, given the
/// m = 0 coefficients per even degree.
inline double eval_zonal(const ShVector& s, double theta)
{
  const detail::NormalizedLegendre<> leg(std::cos(theta), s.lmax());
  double v = 0.0;
  for (int l = 0; l <= s.lmax(); l += 2)
    v += s.at(l, 0) * leg.p[l][0];
  return v;
}

/// Antipodally symmetrized unit-mass Dirac delta at d, truncated to lmax.
inline ShVector delta_sh(const Direction& d, int lmax)
{
  return ShVector(lmax, eval_basis(d, lmax));
}

inline double sh_inner(const ShVector& u, const ShVector& v)
{
  u.require_same(v);
  return u.coeffs().dot(v.coeffs());
}

inline double sh_norm(const ShVector& u) { return u.coeffs().norm(); }

// ---------------------------------------------------------------------------

/// Product Gauss-Legendre (in cos theta) x uniform (in phi) grid on the sphere.
struct SphereQuadrature
{
  std::vector<Direction> nodes;
  std::vector<double> weights; // sum to 4 pi
};

/// Gauss-Legendre nodes and weights on [-1, 1].
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w)
{
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16)
        break;
    }
    // recompute derivative at the converged node
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (z * p1 - p0) / (z * z - 1.0);
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

inline SphereQuadrature gauss_product_grid(int n_theta, int n_phi)
{
  if (n_theta < 1 || n_phi < 1)
    throw std::invalid_argument("quadrature grid sizes must be positive");
  std::vector<double> x, w;
  gauss_legendre(n_theta, x, w);
  SphereQuadrature q;
  q.nodes.reserve(static_cast<std::size_t>(n_theta) * n_phi);
  const double dphi = 2.0 * kPi / n_phi;
  for (int i = 0; i < n_theta; ++i)
    for (int j = 0; j < n_phi; ++j) {
      q.nodes.push_back(Direction::from_angles(std::acos(x[i]), (j + 0.5) * dphi));
      q.weights.push_back(w[i] * dphi);
    }
  return q;
}

/// A grid that integrates products of two degree-lmax functions exactly.
inline const SphereQuadrature& exact_grid(int lmax)
{
  validate_lmax(lmax);
  static const std::array<SphereQuadrature, 5> grids = [] {
    std::array<SphereQuadrature, 5> g;
    for (int k = 0; k < 5; ++k)
      g[k] = gauss_product_grid(2 * k + 2, 4 * k + 2);
    return g;
  }();
  return grids[lmax / 2];
}

/// Matrix M with rotate_sh(s, frame).coeffs() == M * s.coeffs(). Computed by
/// sampling the rotated basis on an exact quadrature grid and re-projecting;
/// only the within-degree blocks are kept (rotations never mix degrees).
inline Eigen::MatrixXd sh_rotation_matrix(const RotationFrame& frame, int lmax)
{
  validate_lmax(lmax);
  const SphereQuadrature& q = exact_grid(lmax);
  const int n = sh_size(lmax);
  const Eigen::Index nq = static_cast<Eigen::Index>(q.nodes.size());
  Eigen::MatrixXd at_nodes(nq, n);   // Y_i(d_q) * w_q
  Eigen::MatrixXd at_rotated(nq, n); // Y_j(R^-1 d_q)
  const Eigen::Matrix3d rinv = frame.matrix().transpose();
  Eigen::VectorXd b(n);
  for (Eigen::Index k = 0; k < nq; ++k) {
    eval_basis_into(q.nodes[k], lmax, b);
    at_nodes.row(k) = b.transpose() * q.weights[k];
    eval_basis_into(Direction(rinv * q.nodes[k].vec()), lmax, b);
    at_rotated.row(k) = b.transpose();
  }
  Eigen::MatrixXd full = at_nodes.transpose() * at_rotated;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int l = 0; l <= lmax; l += 2) {
    const int s = sh_index(l, -l);
    m.block(s, s, 2 * l + 1, 2 * l + 1) = full.block(s, s, 2 * l + 1, 2 * l + 1);
  }
  return m;
}

/// Coefficients of d -> s(frame^-1 d).
inline ShVector rotate_sh(const ShVector& s, const RotationFrame& frame)
{
  return ShVector(s.lmax(), sh_rotation_matrix(frame, s.lmax()) * s.coeffs());
}

/// Coefficients of the degree-l zonal basis function Y(l,0) rotated so its
/// pole lies on `axis` (addition theorem: sqrt(4 pi/(2l+1)) Y(l,m)(axis)).
inline void rotated_zonal_basis_into(const Direction& axis, int lmax,
                                     Eigen::Ref<Eigen::MatrixXd> columns)
{
  // columns: sh_size(lmax) x (lmax/2 + 1)
  Eigen::VectorXd b(sh_size(lmax));
  eval_basis_into(axis, lmax, b);
  columns.setZero();
  for (int l = 0, k = 0; l <= lmax; l += 2, ++k) {
    const int s = sh_index(l, -l);
    columns.col(k).segment(s, 2 * l + 1) =
        b.segment(s, 2 * l + 1) * std::sqrt(4.0 * kPi / (2.0 * l + 1.0));
  }
}

} // namespace fodsplit
