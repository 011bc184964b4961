// fodsplit command-line harness: simulate | train | separate | sweep | evaluate.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include "fodsplit/experiment.hpp"
#include "fodsplit/io.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace fodsplit;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

std::string hardware_string()
{
  std::ifstream in("/proc/cpuinfo");
  std::string line, model = "unknown cpu";
  while (std::getline(in, line))
    if (line.rfind("model name", 0) == 0) {
      model = line.substr(line.find(':') + 2);
      break;
    }
  return model + ", " + std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " hardware threads";
}

std::string file_hash(const fs::path& p)
{
  auto in = open_input(p);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(bytes));
}

// ---------------------------------------------------------------------------

struct SimulateArgs
{
  DatasetSpec spec;
  std::string out = "data";
};

void cmd_simulate(const SimulateArgs& a)
{
  const std::vector<OdfSample> data = generate_dataset(a.spec);
  const fs::path dir(a.out);
  write_dataset_jsonl(dir / "dataset.jsonl", data);
  write_json_file(dir / "manifest.json", dataset_manifest(a.spec, "dataset.jsonl", data.size()));
  std::cout << "wrote " << data.size() << " samples (" << a.spec.n_two << " two-fiber, " << a.spec.n_three
            << " three-fiber, lmax " << a.spec.lmax << ") to " << (dir / "dataset.jsonl").string() << '\n';
}

// ---------------------------------------------------------------------------

struct TrainArgs
{
  TrainConfig cfg;
  std::string out = "model";
};

void cmd_train(const TrainArgs& a)
{
  try {
    a.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path dir(a.out);
  const json cfg_json = train_config_to_json(a.cfg);
  const Provenance prov = Provenance::of(a.cfg.seed, cfg_json);
  std::vector<TrainLogRow> rows;
  TrainHooks hooks;
  hooks.on_row = [&](const TrainLogRow& r) {
    rows.push_back(r);
    std::cout << "batch " << r.batch << "  train " << fmt(r.train_loss) << "  validation " << fmt(r.validation_loss)
              << std::endl;
  };
  TrainResult r;
  try {
    r = train(a.cfg, hooks);
  } catch (const TrainingDiverged&) {
    write_train_log_csv(dir / "train_log.csv", prov, rows);
    throw;
  }
  write_train_log_csv(dir / "train_log.csv", prov, r.log);
  write_json_file(dir / "checkpoint.json", checkpoint_to_json(r.model, a.cfg));
  write_json_file(dir / "train_summary.json",
                  {{"stop_reason", to_string(r.stop)},
                   {"batches_run", r.batches_run},
                   {"best_batch", r.best_batch},
                   {"initial_validation_loss", r.initial_validation_loss},
                   {"best_validation_loss", r.best_validation_loss},
                   {"provenance", prov.to_json()}});
  std::cout << "stopped: " << to_string(r.stop) << " after " << r.batches_run << " batches; best validation loss "
            << fmt(r.best_validation_loss) << " at batch " << r.best_batch << " (initial "
            << fmt(r.initial_validation_loss) << ")\n";
}

// ---------------------------------------------------------------------------

struct MethodArgs
{
  std::string checkpoint;
  SeparatorOptions opt;
  RunOptions run;
};

json method_options_json(const MethodArgs& m)
{
  const FissileOptions& f = m.opt.fissile;
  return {{"fissile",
           {{"max_fibers", f.max_fibers},
            {"n_starts", f.n_starts},
            {"max_inner_solves", f.max_inner_solves},
            {"seed", f.seed},
            {"cost_threshold", f.cost_threshold}}},
          {"watershed", {{"min_peak_rel", m.opt.watershed.segment.min_peak_rel}}},
          {"net", {{"peak_rel", m.opt.net_peaks.rel_threshold}, {"peak_sep_deg", m.opt.net_peaks.min_sep_deg}}},
          {"checkpoint", m.checkpoint.empty() ? "" : file_hash(m.checkpoint)}};
}

Separator make_separator(Method method, const MethodArgs& m)
{
  std::shared_ptr<const MlpModel> model;
  if (method == Method::net) {
    if (m.checkpoint.empty())
      throw UsageError("method 'net' needs --checkpoint (run `fodsplit train` first)");
    if (!fs::exists(m.checkpoint))
      throw IoError("checkpoint " + m.checkpoint + " does not exist (run `fodsplit train` first)");
    model = std::make_shared<const MlpModel>(checkpoint_from_json(read_json_file(m.checkpoint)));
  }
  return Separator(method, m.opt, model);
}

void add_method_options(CLI::App* cmd, MethodArgs& m)
{
  cmd->add_option("--checkpoint", m.checkpoint, "Network checkpoint (net method)");
  cmd->add_option("--threads", m.run.threads, "Worker threads (output is independent of this)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--net-batch", m.run.net_batch, "Network inference batch size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--max-fibers", m.opt.fissile.max_fibers, "FISSILE fiber limit")
      ->check(CLI::Range(1, 3))
      ->capture_default_str();
  cmd->add_option("--starts", m.opt.fissile.n_starts, "FISSILE multistart count")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--max-solves", m.opt.fissile.max_inner_solves, "FISSILE least-squares budget per voxel")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--fissile-seed", m.opt.fissile.seed, "FISSILE start seed")->capture_default_str();
  cmd->add_option("--min-peak-rel", m.opt.watershed.segment.min_peak_rel,
                  "Watershed lobe threshold relative to the global maximum")
      ->check(CLI::Range(0.0, 0.99))
      ->capture_default_str();
  cmd->add_option("--peak-rel", m.opt.net_peaks.rel_threshold, "Network peak threshold relative to the maximum")
      ->check(CLI::Range(0.0, 0.99))
      ->capture_default_str();
  cmd->add_option("--peak-sep", m.opt.net_peaks.min_sep_deg, "Network minimum peak separation (degrees)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

// ---------------------------------------------------------------------------

struct SeparateArgs
{
  std::string dataset;
  std::string method = "fissile";
  std::string out = "results";
  MethodArgs m;
};

void cmd_separate(SeparateArgs a)
{
  const Method method = method_from_string(a.method);
  const Separator sep = make_separator(method, a.m);
  const std::vector<OdfSample> data = read_dataset_jsonl(a.dataset);

  std::uint64_t seed = 0;
  const fs::path manifest = fs::path(a.dataset).parent_path() / "manifest.json";
  if (fs::exists(manifest))
    seed = read_json_file(manifest).at("provenance").at("seed").get<std::uint64_t>();
  const json cfg = {{"method", a.method},
                    {"dataset", file_hash(a.dataset)},
                    {"max_voxels", a.m.run.max_voxels},
                    {"options", method_options_json(a.m)}};
  const Provenance prov = Provenance::of(seed, cfg);

  const RunResult r = run_separation(data, sep, a.m.run);
  const fs::path dir(a.out);
  write_eval_csv(dir / (a.method + "_records.csv"), prov, r.records);

  auto odfs = open_output(dir / (a.method + "_odfs.jsonl"));
  std::vector<std::vector<Fixel>> fixels;
  for (std::size_t i = 0; i < r.separations.size(); ++i) {
    const Separation& s = r.separations[i];
    json row = {{"index", i}, {"fractions", s.fractions}, {"axes", json::array()}, {"sh", json::array()}};
    for (std::size_t k = 0; k < s.odfs.size(); ++k) {
      row["axes"].push_back(direction_json(s.axes[k]));
      const Eigen::VectorXd& c = s.odfs[k].coeffs();
      row["sh"].push_back(std::vector<double>(c.data(), c.data() + c.size()));
    }
    odfs << row.dump() << '\n';
    fixels.push_back(s.fixels);
  }
  if (method != Method::fissile)
    write_fixel_csv(dir / (a.method + "_fixels.csv"), prov, fixels);
  write_json_file(dir / (a.method + "_timing.json"), {{"method", a.method},
                                                       {"voxels", r.records.size()},
                                                       {"wall_seconds", r.wall_seconds},
                                                       {"ms_per_voxel", r.ms_per_voxel},
                                                       {"threads", a.m.run.threads},
                                                       {"hardware", hardware_string()},
                                                       {"provenance", prov.to_json()}});
  const MethodSummary s = summarize_records(r.records);
  std::cout << a.method << ": " << r.records.size() << " voxels, " << fmt(r.ms_per_voxel) << " ms/voxel; ACC "
            << med_iqr(s.acc, 4) << ", angular error " << med_iqr(s.angular_error_deg, 3) << " deg, VF error "
            << med_iqr(s.vf_rmse, 3) << '\n';
}

// ---------------------------------------------------------------------------

struct SweepArgs
{
  SweepGrid grid;
  std::vector<std::string> methods{"watershed"};
  std::string out = "sweep";
  MethodArgs m;
};

void cmd_sweep(const SweepArgs& a)
{
  try {
    a.grid.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::vector<Method> methods;
  for (const std::string& s : a.methods) {
    try {
      methods.push_back(method_from_string(s));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const json cfg = {{"separations", a.grid.separations_deg}, {"fractions", a.grid.minor_fractions},
                    {"samples", a.grid.samples_per_cell},    {"lmax", a.grid.lmax},
                    {"methods", a.methods},                  {"options", method_options_json(a.m)}};
  const Provenance prov = Provenance::of(a.grid.seed, cfg);
  CsvWriter w(fs::path(a.out) / "sweep.csv", prov,
              {"method", "separation_deg", "minor_fraction", "samples", "min_acc_median", "min_acc_q1", "min_acc_q3",
               "min_acc_iqr", "ms_per_voxel"});
  for (Method method : methods) {
    const Separator sep = make_separator(method, a.m);
    for (const SweepCell& c : run_sweep(a.grid, sep, a.m.run)) {
      w.row({c.method, fmt(c.separation_deg), fmt(c.minor_fraction), std::to_string(c.min_acc.count),
             fmt(c.min_acc.median), fmt(c.min_acc.q1), fmt(c.min_acc.q3), fmt(c.min_acc.iqr), fmt(c.ms_per_voxel)});
      std::cout << c.method << " sep " << c.separation_deg << " minor " << c.minor_fraction << ": min-ACC "
                << med_iqr(c.min_acc, 3) << std::endl;
    }
  }
}

// ---------------------------------------------------------------------------

struct EvaluateArgs
{
  std::vector<std::string> inputs;
  std::string out = ".";
};

void cmd_evaluate(const EvaluateArgs& a)
{
  std::vector<MethodSummary> rows;
  json cfg = json::array();
  for (const std::string& path : a.inputs) {
    const std::vector<EvalRecord> recs = read_eval_csv(path);
    if (recs.empty())
      throw IoError(path + " holds no records");
    // records of several methods in one file are summarized per method
    std::vector<std::string> order;
    for (const EvalRecord& r : recs)
      if (std::find(order.begin(), order.end(), r.method) == order.end())
        order.push_back(r.method);
    for (const std::string& m : order) {
      std::vector<EvalRecord> sub;
      std::copy_if(recs.begin(), recs.end(), std::back_inserter(sub), [&](const EvalRecord& r) { return r.method == m; });
      rows.push_back(summarize_records(sub));
    }
    cfg.push_back(file_hash(path));
  }
  if (rows.empty())
    throw IoError("no records to evaluate");
  const Provenance prov = Provenance::of(0, cfg);
  const fs::path dir(a.out);
  write_summary_csv(dir / "summary.csv", prov, rows);
  const std::string md = summary_markdown(rows, prov);
  auto out = open_output(dir / "summary.md");
  out << md;
  std::cout << md;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Separate crossing-fiber ODFs into single-fiber ODFs and benchmark the methods."};
  app.set_config("--config", "", "TOML file with options (one [section] per subcommand)");
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Write a seeded JSON-lines dataset and its manifest");
  simulate->add_option("--seed", sim.spec.seed, "Dataset seed")->capture_default_str();
  simulate->add_option("--n-two", sim.spec.n_two, "Two-fiber samples")->check(CLI::NonNegativeNumber)->capture_default_str();
  simulate->add_option("--n-three", sim.spec.n_three, "Three-fiber samples")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  simulate->add_option("--lmax", sim.spec.lmax, "SH order")->check(CLI::IsMember({2, 4, 6, 8}))->capture_default_str();
  simulate->add_option("--alpha", sim.spec.alpha, "Dirichlet concentration")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--out", sim.out, "Output directory")->capture_default_str();

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Train the mesh-to-mesh network; writes checkpoint and loss CSV");
  trainc->add_option("--seed", tr.cfg.seed, "Training seed")->capture_default_str();
  trainc->add_option("--train-samples", tr.cfg.train_samples, "Training ODF budget")->check(CLI::PositiveNumber)->capture_default_str();
  trainc->add_option("--validation-samples", tr.cfg.validation_samples, "Validation set size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  trainc->add_option("--batch-size", tr.cfg.batch_size, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  trainc->add_option("--lr", tr.cfg.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  trainc->add_option("--validate-every", tr.cfg.validate_every, "Batches between validations")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  trainc->add_option("--patience", tr.cfg.patience, "Early-stopping patience in batches")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  trainc->add_option("--hidden", tr.cfg.hidden_width, "Hidden width")->check(CLI::PositiveNumber)->capture_default_str();
  trainc->add_option("--layers", tr.cfg.n_layers, "Weight layers")->check(CLI::PositiveNumber)->capture_default_str();
  trainc->add_option("--kappa", tr.cfg.kappa, "vMF concentration of the targets")->check(CLI::PositiveNumber)->capture_default_str();
  trainc->add_option("--mesh", tr.cfg.mesh_pixels, "Mesh pixel count")->capture_default_str();
  trainc->add_option("--lmax", tr.cfg.lmax, "SH order")->check(CLI::IsMember({2, 4, 6, 8}))->capture_default_str();
  trainc->add_flag("--include-single", tr.cfg.include_single, "Also train on single-fiber ODFs");
  trainc->add_option("--out", tr.out, "Output directory")->capture_default_str();

  SeparateArgs sp;
  auto* separate = app.add_subcommand("separate", "Separate every ODF of a dataset and score it");
  separate->add_option("--dataset", sp.dataset, "dataset.jsonl from `simulate`")->required()->check(CLI::ExistingFile);
  separate->add_option("--method", sp.method, "fissile, watershed or net")
      ->check(CLI::IsMember({"fissile", "watershed", "net"}))
      ->capture_default_str();
  separate->add_option("--max-voxels", sp.m.run.max_voxels, "Process only the first N samples (0 = all)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  separate->add_option("--out", sp.out, "Output directory")->capture_default_str();
  add_method_options(separate, sp.m);

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Median min-ACC over separation x minor-fraction cells");
  sweep->add_option("--methods", sw.methods, "Methods to sweep")->capture_default_str();
  sweep->add_option("--separations", sw.grid.separations_deg, "Separations (degrees)")->capture_default_str();
  sweep->add_option("--fractions", sw.grid.minor_fractions, "Minor volume fractions")->capture_default_str();
  sweep->add_option("--samples", sw.grid.samples_per_cell, "Samples per cell")->capture_default_str();
  sweep->add_option("--seed", sw.grid.seed, "Sweep seed")->capture_default_str();
  sweep->add_option("--lmax", sw.grid.lmax, "SH order")->check(CLI::IsMember({2, 4, 6, 8}))->capture_default_str();
  sweep->add_option("--out", sw.out, "Output directory")->capture_default_str();
  add_method_options(sweep, sw.m);

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Summarize *_records.csv files into median (IQR) tables");
  evaluate->add_option("inputs", ev.inputs, "Record CSVs from `separate`")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", ev.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*simulate)
      cmd_simulate(sim);
    else if (*trainc)
      cmd_train(tr);
    else if (*separate)
      cmd_separate(sp);
    else if (*sweep)
      cmd_sweep(sw);
    else if (*evaluate)
      cmd_evaluate(ev);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
