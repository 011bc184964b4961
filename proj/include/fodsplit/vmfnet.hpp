#pragma once

// Von Mises-Fisher fiber-probability targets on the mesh, a feedforward
// mesh-to-mesh network with Adam training, and the network separation
// pipeline (distribution -> peaks -> fixels -> single-fiber ODFs).

#include "fodsplit/lobes.hpp"
#include "fodsplit/mesh.hpp"
#include "fodsplit/random.hpp"
#include "fodsplit/simulate.hpp"
#include "fodsplit/sphcore.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fodsplit {

inline constexpr double kDefaultKappa = 100.0;

/// Antipodally symmetrized von Mises-Fisher density on the full sphere.
inline double vmf_density(const Direction& d, const Direction& mean, double kappa = kDefaultKappa)
{
  if (!(kappa > 0.0))
    throw std::invalid_argument("vMF concentration must be positive");
  // kappa / (4 pi sinh kappa) * exp(kappa t), written to avoid overflow
  const double c = kappa / (2.0 * kPi * -std::expm1(-2.0 * kappa));
  const double t = std::clamp(d.dot(mean), -1.0, 1.0);
  return 0.5 * c * (std::exp(kappa * (t - 1.0)) + std::exp(kappa * (-t - 1.0)));
}

/// Polar angle (degrees) at which the symmetrized density falls to half its
/// peak value; the full width at half maximum is twice this.
inline double vmf_half_max_angle_deg(double kappa = kDefaultKappa)
{
  const Direction z = Direction::z_axis();
  const double half = 0.5 * vmf_density(z, z, kappa);
  double lo = 0.0, hi = kPi / 2.0;
  if (vmf_density(Direction::x_axis(), z, kappa) >= half)
    throw std::invalid_argument("vMF too broad for a half-maximum on the hemisphere");
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (vmf_density(Direction::from_angles(mid, 0.0), z, kappa) > half ? lo : hi) = mid;
  }
  return rad2deg(0.5 * (lo + hi));
}

inline double vmf_fwhm_deg(double kappa = kDefaultKappa) { return 2.0 * vmf_half_max_angle_deg(kappa); }

struct VmfComponent
{
  Direction mean;
  double weight = 1.0;
};

class VmfMixture
{
public:
  VmfMixture(std::vector<VmfComponent> components, double kappa = kDefaultKappa)
      : components_(std::move(components)), kappa_(kappa)
  {
    if (components_.empty())
      throw std::invalid_argument("a vMF mixture needs at least one component");
    if (!(kappa_ > 0.0))
      throw std::invalid_argument("vMF concentration must be positive");
    double sum = 0.0;
    for (const VmfComponent& c : components_) {
      if (!(c.weight >= 0.0))
        throw std::invalid_argument("vMF weights must be non-negative");
      sum += c.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("vMF weights must sum to 1");
  }

  explicit VmfMixture(const FiberConfig& config, double kappa = kDefaultKappa)
      : VmfMixture(components_of(config), kappa)
  {}

  const std::vector<VmfComponent>& components() const { return components_; }
  double kappa() const { return kappa_; }

  /// Full-sphere density (integrates to 1 over the sphere).
  double density(const Direction& d) const
  {
    double s = 0.0;
    for (const VmfComponent& c : components_)
      s += c.weight * vmf_density(d, c.mean, kappa_);
    return s;
  }

private:
  static std::vector<VmfComponent> components_of(const FiberConfig& config)
  {
    std::vector<VmfComponent> out;
    for (const Fiber& f : config.fibers())
      out.push_back({f.direction, f.fraction});
    return out;
  }

  std::vector<VmfComponent> components_;
  double kappa_;
};

/// Non-negative probability amplitudes on a hemisphere mesh.
using MeshDistribution = MeshField;

/// Mixture density folded onto the hemisphere (twice the full-sphere
/// density), so the mesh integral is 1.
inline MeshDistribution target_distribution(const VmfMixture& mix, std::shared_ptr<const HemiMesh> mesh)
{
  Eigen::VectorXd a(mesh->size());
  for (int i = 0; i < mesh->size(); ++i)
    a[i] = 2.0 * mix.density(mesh->direction(i));
  return {std::move(mesh), std::move(a)};
}

inline MeshDistribution target_distribution(const FiberConfig& config, std::shared_ptr<const HemiMesh> mesh,
                                            double kappa = kDefaultKappa)
{
  return target_distribution(VmfMixture(config, kappa), std::move(mesh));
}

// ---------------------------------------------------------------------------

enum class Activation
{
  identity,
  tanh,
  softplus,
};

inline std::string to_string(Activation a)
{
  switch (a) {
  case Activation::identity:
    return "identity";
  case Activation::tanh:
    return "tanh";
  case Activation::softplus:
    return "softplus";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s)
{
  for (Activation a : {Activation::identity, Activation::tanh, Activation::softplus})
    if (to_string(a) == s)
      return a;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

/// Layer widths for a mesh-to-mesh network with `n_layers` weight layers.
inline std::vector<int> mesh_network_widths(int n_pixels, int hidden, int n_layers = 6)
{
  if (n_pixels < 1 || hidden < 1 || n_layers < 1)
    throw std::invalid_argument("network widths and depth must be positive");
  std::vector<int> w{n_pixels};
  for (int k = 1; k < n_layers; ++k)
    w.push_back(hidden);
  w.push_back(n_pixels);
  return w;
}

/// Fully connected network; columns of the input matrix are samples. Hidden
/// layers share one activation and the output layer has its own.
template <class T>
class Mlp
{
public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  struct Gradients
  {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
  };

  Mlp() = default;

  /// Glorot-uniform weights and zero biases drawn from Rng(seed).
  Mlp(std::vector<int> widths, std::uint64_t seed, Activation hidden = Activation::tanh,
      Activation output = Activation::softplus)
      : widths_(std::move(widths)), seed_(seed), hidden_(hidden), output_(output)
  {
    if (widths_.size() < 2)
      throw std::invalid_argument("a network needs at least one layer");
    for (int w : widths_)
      if (w < 1)
        throw std::invalid_argument("layer widths must be positive");
    Rng rng(seed);
    for (std::size_t k = 0; k + 1 < widths_.size(); ++k) {
      const int in = widths_[k], out = widths_[k + 1];
      const double limit = std::sqrt(6.0 / (in + out));
      Matrix w(out, in);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i)
          w(i, j) = static_cast<T>(rng.uniform(-limit, limit));
      weights_.push_back(std::move(w));
      biases_.push_back(Vector::Zero(out));
    }
  }

  const std::vector<int>& widths() const { return widths_; }
  int n_layers() const { return static_cast<int>(weights_.size()); }
  int input_size() const { return widths_.front(); }
  int output_size() const { return widths_.back(); }
  std::uint64_t seed() const { return seed_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }

  std::vector<Matrix>& weights() { return weights_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  std::vector<Vector>& biases() { return biases_; }
  const std::vector<Vector>& biases() const { return biases_; }

  std::size_t parameter_count() const
  {
    std::size_t n = 0;
    for (std::size_t k = 0; k < weights_.size(); ++k)
      n += static_cast<std::size_t>(weights_[k].size() + biases_[k].size());
    return n;
  }

  bool all_finite() const
  {
    for (std::size_t k = 0; k < weights_.size(); ++k)
      if (!weights_[k].allFinite() || !biases_[k].allFinite())
        return false;
    return true;
  }

  Matrix forward(const Matrix& x) const
  {
    check_input(x);
    Matrix a = x;
    for (int k = 0; k < n_layers(); ++k) {
      Matrix z = weights_[static_cast<std::size_t>(k)] * a;
      z.colwise() += biases_[static_cast<std::size_t>(k)];
      apply(activation(k), z);
      a = std::move(z);
    }
    return a;
  }

  /// Mean squared error over samples and outputs.
  T loss(const Matrix& x, const Matrix& y) const
  {
    const Matrix p = forward(x);
    check_target(p, y);
    return (p - y).squaredNorm() / static_cast<T>(y.size());
  }

  /// Mean squared error and its gradient with respect to every parameter.
  T loss_and_grad(const Matrix& x, const Matrix& y, Gradients& g) const
  {
    check_input(x);
    const std::size_t n = weights_.size();
    std::vector<Matrix> acts(n + 1), pre(n);
    acts[0] = x;
    for (std::size_t k = 0; k < n; ++k) {
      pre[k] = weights_[k] * acts[k];
      pre[k].colwise() += biases_[k];
      acts[k + 1] = pre[k];
      apply(activation(static_cast<int>(k)), acts[k + 1]);
    }
    check_target(acts[n], y);
    const T scale = T(2) / static_cast<T>(y.size());
    Matrix delta = (acts[n] - y) * scale;
    const T value = (acts[n] - y).squaredNorm() / static_cast<T>(y.size());

    g.weights.resize(n);
    g.biases.resize(n);
    for (std::size_t k = n; k-- > 0;) {
      multiply_derivative(activation(static_cast<int>(k)), pre[k], acts[k + 1], delta);
      g.weights[k].noalias() = delta * acts[k].transpose();
      g.biases[k] = delta.rowwise().sum();
      if (k > 0)
        delta = weights_[k].transpose() * delta;
    }
    return value;
  }

  bool operator==(const Mlp& o) const
  {
    if (widths_ != o.widths_ || hidden_ != o.hidden_ || output_ != o.output_ || seed_ != o.seed_)
      return false;
    for (std::size_t k = 0; k < weights_.size(); ++k)
      if (weights_[k] != o.weights_[k] || biases_[k] != o.biases_[k])
        return false;
    return true;
  }

private:
  Activation activation(int layer) const { return layer + 1 == n_layers() ? output_ : hidden_; }

  void check_input(const Matrix& x) const
  {
    if (weights_.empty())
      throw std::logic_error("network has no layers");
    if (x.rows() != input_size())
      throw std::invalid_argument("input has " + std::to_string(x.rows()) + " rows, network expects " +
                                  std::to_string(input_size()));
  }

  static void check_target(const Matrix& p, const Matrix& y)
  {
    if (p.rows() != y.rows() || p.cols() != y.cols())
      throw std::invalid_argument("target shape does not match the network output");
  }

  static T softplus(T z) { return z > T(30) ? z : std::log1p(std::exp(z)); }
  static T sigmoid(T z) { return T(1) / (T(1) + std::exp(-z)); }

  static void apply(Activation a, Matrix& z)
  {
    switch (a) {
    case Activation::identity:
      break;
    case Activation::tanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::softplus:
      z = z.unaryExpr([](T v) { return softplus(v); });
      break;
    }
  }

  static void multiply_derivative(Activation a, const Matrix& z, const Matrix& out, Matrix& delta)
  {
    switch (a) {
    case Activation::identity:
      break;
    case Activation::tanh:
      delta.array() *= T(1) - out.array().square();
      break;
    case Activation::softplus:
      delta.array() *= z.unaryExpr([](T v) { return sigmoid(v); }).array();
      break;
    }
  }

  std::vector<int> widths_;
  std::uint64_t seed_ = 0;
  Activation hidden_ = Activation::tanh;
  Activation output_ = Activation::softplus;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

using MlpModel = Mlp<double>;

/// Adam with bias-corrected moments.
template <class T>
class Adam
{
public:
  explicit Adam(const Mlp<T>& model, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps)
  {
    for (std::size_t k = 0; k < model.weights().size(); ++k) {
      mw_.push_back(Mlp<T>::Matrix::Zero(model.weights()[k].rows(), model.weights()[k].cols()));
      vw_.push_back(mw_.back());
      mb_.push_back(Mlp<T>::Vector::Zero(model.biases()[k].size()));
      vb_.push_back(mb_.back());
    }
  }

  void step(Mlp<T>& model, const typename Mlp<T>::Gradients& g)
  {
    ++t_;
    const T c1 = static_cast<T>(1.0 - std::pow(b1_, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(b2_, static_cast<double>(t_)));
    for (std::size_t k = 0; k < mw_.size(); ++k) {
      update(model.weights()[k], mw_[k], vw_[k], g.weights[k], c1, c2);
      update(model.biases()[k], mb_[k], vb_[k], g.biases[k], c1, c2);
    }
  }

  long steps() const { return t_; }

private:
  template <class M>
  void update(M& p, M& m, M& v, const M& g, T c1, T c2) const
  {
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    p.array() -= static_cast<T>(lr_) * (m.array() / c1) / ((v.array() / c2).sqrt() + static_cast<T>(eps_));
  }

  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<typename Mlp<T>::Matrix> mw_, vw_;
  std::vector<typename Mlp<T>::Vector> mb_, vb_;
};

// ---------------------------------------------------------------------------

struct TrainConfig
{
  double learning_rate = 1e-3;
  int batch_size = 512;
  long train_samples = 51200;
  int validation_samples = 5120;
  int validate_every = 50;
  int patience = 250;
  std::uint64_t seed = 0;
  int lmax = 6;
  int mesh_pixels = kNetworkMeshPixels;
  int hidden_width = 512;
  int n_layers = 6;
  double kappa = kDefaultKappa;
  bool include_single = false;
  double alpha = 1.0;

  void validate() const
  {
    if (!(learning_rate > 0.0) || batch_size < 1 || train_samples < 1 || validation_samples < 1 ||
        validate_every < 1 || patience < 1 || hidden_width < 1 || n_layers < 1 || !(kappa > 0.0) || !(alpha > 0.0))
      throw std::invalid_argument("training settings must all be positive");
    if (patience < validate_every)
      throw std::invalid_argument("patience must be at least validate_every");
    validate_lmax(lmax);
    HemiMesh::build(mesh_pixels);
  }
};

struct TrainLogRow
{
  long batch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

enum class StopReason
{
  budget,
  early_stop,
};

inline std::string to_string(StopReason r) { return r == StopReason::budget ? "budget" : "early_stop"; }

struct TrainResult
{
  MlpModel model;
  std::vector<TrainLogRow> log;
  double initial_validation_loss = 0.0;
  double best_validation_loss = 0.0;
  long best_batch = 0;
  long batches_run = 0;
  StopReason stop = StopReason::budget;
};

struct TrainHooks
{
  /// Replaces the measured validation loss (batch, loss) -> loss.
  std::function<double(long, double)> validation_filter;
  std::function<void(const TrainLogRow&)> on_row;
};

class TrainingDiverged : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Network inputs (ODFs sampled on the mesh) and targets for samples, one
/// column each.
struct TrainingBatch
{
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
};

inline TrainingBatch make_batch(const std::vector<OdfSample>& samples, const HemiMesh& mesh, int lmax, double kappa)
{
  TrainingBatch b;
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd coeffs(sh_size(lmax), n);
  b.targets.resize(mesh.size(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const OdfSample& s = samples[static_cast<std::size_t>(j)];
    if (s.total.lmax() != lmax)
      throw std::invalid_argument("sample order does not match the network");
    coeffs.col(j) = s.total.coeffs();
    const VmfMixture mix(s.config, kappa);
    for (int i = 0; i < mesh.size(); ++i)
      b.targets(i, j) = 2.0 * mix.density(mesh.direction(i));
  }
  b.inputs = mesh.basis(lmax) * coeffs;
  return b;
}

/// Seeds used by training: the train stream uses the config seed, the
/// validation stream and parameter initialization use derived seeds.
inline std::uint64_t validation_stream_seed(std::uint64_t seed) { return derive_seed(seed, 0x76616c6964ULL); }
inline std::uint64_t parameter_seed(std::uint64_t seed) { return derive_seed(seed, 0x706172616dULL); }

inline TrainingBatch validation_batch(const TrainConfig& cfg)
{
  const SampleStream stream(validation_stream_seed(cfg.seed), cfg.lmax, cfg.include_single, cfg.alpha);
  std::vector<OdfSample> v;
  for (int i = 0; i < cfg.validation_samples; ++i)
    v.push_back(stream.at(static_cast<std::uint64_t>(i)));
  return make_batch(v, *shared_mesh(cfg.mesh_pixels), cfg.lmax, cfg.kappa);
}

/// Mini-batch Adam on a seeded sample stream. Validation runs every
/// validate_every batches and after the last batch; training stops once the
/// best validation loss is `patience` batches old. Returns the
/// best-validation checkpoint.
inline TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {})
{
  cfg.validate();
  const auto mesh = shared_mesh(cfg.mesh_pixels);
  const SampleStream stream(cfg.seed, cfg.lmax, cfg.include_single, cfg.alpha);
  const TrainingBatch val = validation_batch(cfg);

  MlpModel model(mesh_network_widths(mesh->size(), cfg.hidden_width, cfg.n_layers), parameter_seed(cfg.seed));
  Adam<double> adam(model, cfg.learning_rate);
  MlpModel::Gradients grad;

  auto validate = [&](long batch) {
    double v = model.loss(val.inputs, val.targets);
    if (hooks.validation_filter)
      v = hooks.validation_filter(batch, v);
    if (!std::isfinite(v))
      throw TrainingDiverged("validation loss is not finite at batch " + std::to_string(batch));
    return v;
  };

  TrainResult r;
  r.initial_validation_loss = validate(0);
  r.best_validation_loss = r.initial_validation_loss;
  r.model = model;

  const long n_batches = (cfg.train_samples + cfg.batch_size - 1) / cfg.batch_size;
  double running = 0.0;
  int since = 0;
  std::uint64_t cursor = 0;
  std::vector<OdfSample> samples;
  for (long b = 1; b <= n_batches; ++b) {
    const long take = std::min<long>(cfg.batch_size, cfg.train_samples - static_cast<long>(cursor));
    samples.clear();
    for (long i = 0; i < take; ++i)
      samples.push_back(stream.at(cursor++));
    const TrainingBatch batch = make_batch(samples, *mesh, cfg.lmax, cfg.kappa);
    const double loss = model.loss_and_grad(batch.inputs, batch.targets, grad);
    if (!std::isfinite(loss))
      throw TrainingDiverged("training loss is not finite at batch " + std::to_string(b) +
                             " (try a smaller learning rate)");
    adam.step(model, grad);
    running += loss;
    ++since;
    r.batches_run = b;

    if (b % cfg.validate_every != 0 && b != n_batches)
      continue;
    const TrainLogRow row{b, running / since, validate(b)};
    running = 0.0;
    since = 0;
    r.log.push_back(row);
    if (hooks.on_row)
      hooks.on_row(row);
    if (row.validation_loss < r.best_validation_loss) {
      r.best_validation_loss = row.validation_loss;
      r.best_batch = b;
      r.model = model;
    } else if (b - r.best_batch >= cfg.patience) {
      r.stop = StopReason::early_stop;
      break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

inline nlohmann::json train_config_to_json(const TrainConfig& c)
{
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"train_samples", c.train_samples}, {"validation_samples", c.validation_samples},
          {"validate_every", c.validate_every}, {"patience", c.patience},
          {"seed", c.seed}, {"lmax", c.lmax},
          {"mesh_pixels", c.mesh_pixels}, {"hidden_width", c.hidden_width},
          {"n_layers", c.n_layers}, {"kappa", c.kappa},
          {"include_single", c.include_single}, {"alpha", c.alpha}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j)
{
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.train_samples = j.at("train_samples").get<long>();
  c.validation_samples = j.at("validation_samples").get<int>();
  c.validate_every = j.at("validate_every").get<int>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.lmax = j.at("lmax").get<int>();
  c.mesh_pixels = j.at("mesh_pixels").get<int>();
  c.hidden_width = j.at("hidden_width").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.kappa = j.at("kappa").get<double>();
  c.include_single = j.at("include_single").get<bool>();
  c.alpha = j.at("alpha").get<double>();
  return c;
}

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint document: widths, activations, seed, training settings and
/// parameters (column-major). Doubles are written in shortest round-trip
/// form, so reloading is bit-exact.
inline nlohmann::json checkpoint_to_json(const MlpModel& m, const TrainConfig& cfg)
{
  nlohmann::json layers = nlohmann::json::array();
  for (int k = 0; k < m.n_layers(); ++k) {
    const auto& w = m.weights()[static_cast<std::size_t>(k)];
    const auto& b = m.biases()[static_cast<std::size_t>(k)];
    layers.push_back({{"rows", w.rows()},
                      {"cols", w.cols()},
                      {"weights", std::vector<double>(w.data(), w.data() + w.size())},
                      {"biases", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  return {{"format", "fodsplit-mlp"},
          {"version", kCheckpointVersion},
          {"widths", m.widths()},
          {"hidden_activation", to_string(m.hidden_activation())},
          {"output_activation", to_string(m.output_activation())},
          {"seed", m.seed()},
          {"train_config", train_config_to_json(cfg)},
          {"layers", layers}};
}

inline MlpModel checkpoint_from_json(const nlohmann::json& j, TrainConfig* cfg = nullptr)
{
  if (j.value("format", "") != "fodsplit-mlp")
    throw std::invalid_argument("not a network checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::invalid_argument("unsupported checkpoint version " + j.at("version").dump());
  MlpModel m(j.at("widths").get<std::vector<int>>(), j.at("seed").get<std::uint64_t>(),
             activation_from_string(j.at("hidden_activation").get<std::string>()),
             activation_from_string(j.at("output_activation").get<std::string>()));
  const auto& layers = j.at("layers");
  if (static_cast<int>(layers.size()) != m.n_layers())
    throw std::invalid_argument("checkpoint layer count does not match its widths");
  for (int k = 0; k < m.n_layers(); ++k) {
    auto& w = m.weights()[static_cast<std::size_t>(k)];
    auto& b = m.biases()[static_cast<std::size_t>(k)];
    const auto wv = layers[static_cast<std::size_t>(k)].at("weights").get<std::vector<double>>();
    const auto bv = layers[static_cast<std::size_t>(k)].at("biases").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(wv.size()) != w.size() || static_cast<Eigen::Index>(bv.size()) != b.size())
      throw std::invalid_argument("checkpoint layer " + std::to_string(k) + " has the wrong size");
    std::copy(wv.begin(), wv.end(), w.data());
    std::copy(bv.begin(), bv.end(), b.data());
  }
  if (!m.all_finite())
    throw std::invalid_argument("checkpoint holds non-finite parameters");
  if (cfg)
    *cfg = train_config_from_json(j.at("train_config"));
  return m;
}

// ---------------------------------------------------------------------------

/// Peaks of a predicted distribution, weighted by amplitude and normalized to
/// sum to 1. No peaks gives an empty list.
inline std::vector<Fixel> distribution_to_fixels(const MeshDistribution& dist, const PeakOptions& opt = {})
{
  const std::vector<Peak> peaks = local_maxima(dist, opt);
  double total = 0.0;
  for (const Peak& p : peaks)
    total += p.amplitude;
  std::vector<Fixel> out;
  if (!(total > 0.0))
    return out;
  for (const Peak& p : peaks)
    out.push_back({p.direction, p.amplitude / total});
  return out;
}

struct NetResult
{
  std::vector<Fixel> fixels;
  std::vector<ShVector> odfs;
};

/// Predicted distributions for a set of ODFs, one column each.
inline Eigen::MatrixXd predict_distributions(const MlpModel& model, const std::vector<ShVector>& totals,
                                             const HemiMesh& mesh)
{
  if (totals.empty())
    return Eigen::MatrixXd(model.output_size(), 0);
  const int lmax = totals.front().lmax();
  Eigen::MatrixXd coeffs(sh_size(lmax), static_cast<Eigen::Index>(totals.size()));
  for (std::size_t j = 0; j < totals.size(); ++j) {
    totals[j].require_same(totals.front());
    coeffs.col(static_cast<Eigen::Index>(j)) = totals[j].coeffs();
  }
  return model.forward(mesh.basis(lmax) * coeffs);
}

inline NetResult fixels_from_prediction(const Eigen::VectorXd& prediction, std::shared_ptr<const HemiMesh> mesh,
                                        int lmax, const PeakOptions& peaks = {})
{
  NetResult r;
  r.fixels = distribution_to_fixels(MeshField(std::move(mesh), prediction), peaks);
  if (!r.fixels.empty())
    r.odfs = fixels_to_sh(r.fixels, lmax, true);
  return r;
}

/// Full network pipeline for one ODF: mesh sampling, forward pass, peak
/// fixels, and one normalized truncated delta per fixel.
inline NetResult net_separate_full(const MlpModel& model, const ShVector& total, std::shared_ptr<const HemiMesh> mesh,
                                   const PeakOptions& peaks = {})
{
  if (model.input_size() != mesh->size())
    throw std::invalid_argument("network width does not match the mesh");
  const Eigen::MatrixXd p = predict_distributions(model, {total}, *mesh);
  return fixels_from_prediction(p.col(0), std::move(mesh), total.lmax(), peaks);
}

inline std::vector<ShVector> net_separate(const MlpModel& model, const ShVector& total,
                                          std::shared_ptr<const HemiMesh> mesh, const PeakOptions& peaks = {})
{
  return net_separate_full(model, total, std::move(mesh), peaks).odfs;
}

} // namespace fodsplit
