// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "fodsplit/experiment.hpp"
#include "fodsplit/io.hpp"

#include <chrono>
#include <cstdio>
#include <string>

using namespace fodsplit;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail)
{
  std::printf("%s %d %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

void info(const std::string& s)
{
  std::printf("INFO %s\n", s.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v, int precision = 6)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::vector<OdfSample> well_separated_pairs(std::uint64_t seed, int n)
{
  std::vector<OdfSample> out;
  for (std::uint64_t i = 0; static_cast<int>(out.size()) < n; ++i) {
    Rng rng(derive_seed(seed, i));
    const FiberConfig c = random_config(rng, 2);
    if (c.min_separation_deg() >= 45.0 && c.min_fraction() >= 0.2)
      out.push_back(compose_multifiber(c, 6));
  }
  return out;
}

std::vector<double> all_acc(const std::vector<EvalRecord>& recs)
{
  std::vector<double> v;
  for (const EvalRecord& r : recs)
    v.insert(v.end(), r.acc.begin(), r.acc.end());
  return v;
}

std::vector<double> all_angles(const std::vector<EvalRecord>& recs)
{
  std::vector<double> v;
  for (const EvalRecord& r : recs)
    v.insert(v.end(), r.angular_error_deg.begin(), r.angular_error_deg.end());
  return v;
}

void exact_recovery()
{
  const auto data = well_separated_pairs(2024, 100);
  const auto t0 = Clock::now();
  const RunResult r = run_separation(data, Separator(Method::fissile));
  const double secs = seconds_since(t0);
  const Summary acc = summarize(all_acc(r.records));
  long misses = 0;
  for (const EvalRecord& e : r.records)
    misses += e.n_missed;
  report(1, "exact-recovery", std::abs(acc.median - 1.0) <= 1e-3 && acc.iqr <= 1e-3 && misses == 0 && secs <= 1800.0,
         "FISSILE per-fiber ACC median " + num(acc.median, 10) + " IQR " + num(acc.iqr, 3) + ", " +
             std::to_string(misses) + " missed fibers, 100 samples in " + num(secs, 3) + " s");
  const Summary ang = summarize(all_angles(r.records));
  report(2, "fissile-angular-precision", ang.median <= 1e-3,
         "median angular error " + num(ang.median, 3) + " deg (IQR " + num(ang.iqr, 3) + ")");
}

void watershed_checks()
{
  SweepGrid g;
  g.separations_deg = {30.0, 60.0};
  g.minor_fractions = {0.5};
  g.samples_per_cell = 30;
  g.seed = 7;
  const auto cells = run_sweep(g, Separator(Method::watershed));
  const double m30 = cells[0].min_acc.median, m60 = cells[1].min_acc.median;
  report(3, "watershed-breakdown", m30 < 0.5 && m60 > 0.9,
         "median min-ACC " + num(m30, 4) + " at 30 deg, " + num(m60, 4) + " at 60 deg (30 samples each)");

  const RunResult r = run_separation(generate_dataset(DatasetSpec{}), Separator(Method::watershed));
  std::vector<double> vf;
  for (const EvalRecord& e : r.records)
    vf.push_back(e.vf_rmse);
  const Summary s = summarize(vf);
  report(4, "watershed-vf-error", s.median >= 0.0 && s.median <= 0.1,
         "median VF RMSE " + num(s.median, 4) + " (IQR " + num(s.iqr, 3) + ") on the 250/80 set");
}

std::shared_ptr<const MlpModel> network_training()
{
  TrainConfig cfg;
  cfg.seed = 1;
  const auto t0 = Clock::now();
  const TrainResult tr = train(cfg);
  const double secs = seconds_since(t0);
  info("training: " + std::to_string(cfg.train_samples) + " samples, " + std::to_string(tr.batches_run) +
       " batches, stop " + to_string(tr.stop) + ", validation loss " + num(tr.initial_validation_loss, 4) + " -> " +
       num(tr.best_validation_loss, 4) + " (" + num(tr.initial_validation_loss / tr.best_validation_loss, 3) +
       "x), " + num(secs, 3) + " s");
  auto model = std::make_shared<const MlpModel>(tr.model);

  const auto held_out = generate_dataset(DatasetSpec{991, 250, 0, 6, 1.0});
  const RunResult r = run_separation(held_out, Separator(Method::net, {}, model));
  const Summary acc = summarize(all_acc(r.records));
  const Summary ang = summarize(all_angles(r.records));
  report(5, "network-training", cfg.train_samples >= 51200 && acc.median >= 0.90 && ang.median <= 10.0,
         "two-fiber held-out median per-fiber ACC " + num(acc.median, 4) + " (IQR " + num(acc.iqr, 3) +
             "), median angular error " + num(ang.median, 3) + " deg");
  return model;
}

void gradient_oracle()
{
  using Net = Mlp<long double>;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Net net({8, 8, 8}, seed);
    Rng rng(derive_seed(77, seed));
    Net::Matrix x(8, 4), y(8, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x.data()[i] = rng.normal();
      y.data()[i] = 0.5 * rng.normal();
    }
    Net::Gradients g;
    net.loss_and_grad(x, y, g);
    const long double h = 1e-6L;
    auto check = [&](long double& p, long double analytic) {
      const long double saved = p;
      p = saved + h;
      const long double up = net.loss(x, y);
      p = saved - h;
      const long double down = net.loss(x, y);
      p = saved;
      const long double fd = (up - down) / (2.0L * h);
      const long double scale = std::max({std::abs(fd), std::abs(analytic), 1e-7L});
      worst = std::max(worst, static_cast<double>(std::abs(fd - analytic) / scale));
    };
    for (int k = 0; k < net.n_layers(); ++k) {
      for (Eigen::Index i = 0; i < net.weights()[k].size(); ++i)
        check(net.weights()[k].data()[i], g.weights[k].data()[i]);
      for (Eigen::Index i = 0; i < net.biases()[k].size(); ++i)
        check(net.biases()[k].data()[i], g.biases[k].data()[i]);
    }
  }
  report(6, "gradient-oracle", worst <= 1e-5,
         "worst relative gradient error " + num(worst, 3) + " over 20 seeds (2 layers, 8 pixels)");
}

void vmf_calibration()
{
  const double fwhm = vmf_fwhm_deg(100.0);
  const SphereQuadrature q = gauss_product_grid(300, 600);
  const Direction mean(0.3, -0.5, 0.8);
  double integral = 0.0;
  for (std::size_t i = 0; i < q.nodes.size(); ++i)
    integral += q.weights[i] * vmf_density(q.nodes[i], mean, 100.0);
  report(7, "vmf-calibration", fwhm >= 13.0 && fwhm <= 14.0 && std::abs(integral - 1.0) <= 1e-3,
         "FWHM " + num(fwhm, 5) + " deg, sphere integral " + num(integral, 10));
}

void algebraic_invariants()
{
  const auto t0 = Clock::now();
  Rng rng(5);
  double rot = 0.0, delta = 0.0, ortho = 0.0, simplex = 0.0, scale = 0.0;
  bool positive = true;
  for (int t = 0; t < 100; ++t) {
    ShVector s(8);
    for (Eigen::Index i = 0; i < s.size(); ++i)
      s[i] = rng.normal();
    const RotationFrame r =
        RotationFrame::from_angles(rng.uniform(0.0, kPi), rng.uniform(0.0, 2.0 * kPi), rng.uniform(0.0, 2.0 * kPi));
    const ShVector rs = rotate_sh(s, r);
    for (int l = 0; l <= 8; l += 2)
      rot = std::max(rot, std::abs(rs.block_norm(l) - s.block_norm(l)));

    ShVector w(8);
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w[i] = rng.normal();
    const double c = std::exp(rng.uniform(-10.0, 10.0));
    scale = std::max({scale, std::abs(acc(s, w * c) - acc(s, w)), std::abs(acc(s, s * c) - 1.0)});

    const auto v = sample_volume_fractions(rng, 1 + t % 3);
    double sum = 0.0;
    for (double x : v) {
      sum += x;
      positive = positive && x > 0.0;
    }
    simplex = std::max(simplex, std::abs(sum - 1.0));
  }
  // truncated delta projected from its Legendre series on an exact grid
  for (int lmax : {6, 8}) {
    const SphereQuadrature& q = exact_grid(lmax);
    for (int t = 0; t < 10; ++t) {
      const Direction d(rng.normal(), rng.normal(), rng.normal());
      Eigen::VectorXd proj = Eigen::VectorXd::Zero(sh_size(lmax));
      for (std::size_t i = 0; i < q.nodes.size(); ++i) {
        double f = 0.0;
        for (int l = 0; l <= lmax; l += 2)
          f += (2.0 * l + 1.0) / (4.0 * kPi) * std::legendre(static_cast<unsigned>(l), q.nodes[i].dot(d));
        proj += q.weights[i] * f * eval_basis(q.nodes[i], lmax);
      }
      delta = std::max(delta, (proj - delta_sh(d, lmax).coeffs()).cwiseAbs().maxCoeff());
    }
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(sh_size(lmax), sh_size(lmax));
    const SphereQuadrature fine = gauss_product_grid(40, 80);
    for (std::size_t i = 0; i < fine.nodes.size(); ++i) {
      const Eigen::VectorXd b = eval_basis(fine.nodes[i], lmax);
      gram += fine.weights[i] * b * b.transpose();
    }
    ortho = std::max(ortho, (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  report(8, "algebraic-invariants",
         rot <= 1e-10 && delta <= 1e-8 && scale <= 1e-15 && positive && simplex <= 4.0 * 2.220446e-16 && ortho <= 1e-6 &&
             secs < 300.0,
         "rotation norm drift " + num(rot, 3) + ", delta projection " + num(delta, 3) + ", ACC scale change " +
             num(scale, 3) + ", simplex error " + num(simplex, 3) + ", orthonormality " +
             num(ortho, 3) + ", " + num(secs, 3) + " s");
}

void throughput(const std::shared_ptr<const MlpModel>& model)
{
  const auto data = generate_dataset(DatasetSpec{});
  const double ws = run_separation(data, Separator(Method::watershed)).ms_per_voxel;
  const double net = run_separation(data, Separator(Method::net, {}, model)).ms_per_voxel;
  RunOptions few;
  few.max_voxels = 40;
  const double fis = run_separation(data, Separator(Method::fissile), few).ms_per_voxel;
  report(9, "throughput-ordering", ws < net && net < fis && fis >= 100.0 * net,
         "ms/voxel watershed " + num(ws, 3) + " < net " + num(net, 3) + " < FISSILE " + num(fis, 4) + " (" +
             num(fis / net, 4) + "x net)");
}

} // namespace

int main()
{
  std::printf("fodsplit %s acceptance\n", kVersion);
  exact_recovery();
  watershed_checks();
  const auto model = network_training();
  gradient_oracle();
  vmf_calibration();
  algebraic_invariants();
  throughput(model);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
