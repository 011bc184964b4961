#pragma once

// Artifact formats: JSON-lines datasets with a manifest, CSV tables with a
// provenance comment line, and Markdown summaries.

#include "fodsplit/lobes.hpp"
#include "fodsplit/metrics.hpp"
#include "fodsplit/simulate.hpp"
#include "fodsplit/vmfnet.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fodsplit {

#ifndef FODSPLIT_VERSION
#define FODSPLIT_VERSION "0.1.0"
#endif

inline constexpr const char* kVersion = FODSPLIT_VERSION;

class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Seed, configuration hash and code version stamped on every artifact.
struct Provenance
{
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string version = kVersion;

  static Provenance of(std::uint64_t seed, const nlohmann::json& config)
  {
    return {seed, hex64(fnv1a(config.dump())), kVersion};
  }

  nlohmann::json to_json() const { return {{"seed", seed}, {"config_hash", config_hash}, {"version", version}}; }

  std::string csv_comment() const
  {
    return "# fodsplit " + version + " seed=" + std::to_string(seed) + " config_hash=" + config_hash;
  }
};

inline std::ofstream open_output(const std::filesystem::path& path)
{
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec)
      throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + path.string());
  return out;
}

inline std::ifstream open_input(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot read " + path.string());
  return in;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j)
{
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  if (!out)
    throw IoError("failed writing " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path)
{
  auto in = open_input(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

/// Shortest round-trip decimal form of a double.
inline std::string fmt(double v)
{
  if (std::isnan(v))
    return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Datasets

inline nlohmann::json direction_json(const Direction& d) { return {d.x(), d.y(), d.z()}; }

inline Direction direction_from_json(const nlohmann::json& j)
{
  if (!j.is_array() || j.size() != 3)
    throw IoError("a direction must be a 3-element array");
  return Direction(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json sample_to_json(long index, const OdfSample& s)
{
  nlohmann::json fibers = nlohmann::json::array();
  for (const Fiber& f : s.config.fibers())
    fibers.push_back({{"direction", direction_json(f.direction)}, {"fraction", f.fraction}});
  const Eigen::VectorXd& c = s.total.coeffs();
  return {{"index", index},
          {"lmax", s.total.lmax()},
          {"fibers", fibers},
          {"sh", std::vector<double>(c.data(), c.data() + c.size())}};
}

/// Rebuilds a sample; components are recomputed from the fibers.
inline OdfSample sample_from_json(const nlohmann::json& j)
{
  std::vector<Fiber> fibers;
  for (const auto& f : j.at("fibers"))
    fibers.push_back({direction_from_json(f.at("direction")), f.at("fraction").get<double>()});
  const int lmax = j.at("lmax").get<int>();
  OdfSample s = compose_multifiber(FiberConfig(fibers), lmax);
  const auto sh = j.at("sh").get<std::vector<double>>();
  s.total = ShVector(lmax, Eigen::Map<const Eigen::VectorXd>(sh.data(), static_cast<Eigen::Index>(sh.size())));
  return s;
}

inline void write_dataset_jsonl(const std::filesystem::path& path, const std::vector<OdfSample>& samples)
{
  auto out = open_output(path);
  for (std::size_t i = 0; i < samples.size(); ++i)
    out << sample_to_json(static_cast<long>(i), samples[i]).dump() << '\n';
  if (!out)
    throw IoError("failed writing " + path.string());
}

inline std::vector<OdfSample> read_dataset_jsonl(const std::filesystem::path& path)
{
  auto in = open_input(path);
  std::vector<OdfSample> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("index").get<long>() != static_cast<long>(out.size()))
        throw IoError("sample index out of order");
      out.push_back(sample_from_json(j));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty())
    throw IoError(path.string() + " holds no samples");
  return out;
}

inline nlohmann::json dataset_spec_json(const DatasetSpec& s)
{
  return {{"seed", s.seed}, {"n_two", s.n_two}, {"n_three", s.n_three}, {"lmax", s.lmax}, {"alpha", s.alpha}};
}

inline nlohmann::json dataset_manifest(const DatasetSpec& spec, const std::string& file, std::size_t count)
{
  const nlohmann::json cfg = dataset_spec_json(spec);
  return {{"format", "fodsplit-dataset"}, {"file", file},       {"count", count},
          {"config", cfg},                {"lmax", spec.lmax}, {"provenance", Provenance::of(spec.seed, cfg).to_json()}};
}

// ---------------------------------------------------------------------------
// CSV tables

/// Minimal CSV writer: comment line, header, rows. Fields never contain
/// commas.
class CsvWriter
{
public:
  CsvWriter(const std::filesystem::path& path, const Provenance& prov, const std::vector<std::string>& columns)
      : out_(open_output(path)), path_(path), columns_(columns.size())
  {
    out_ << prov.csv_comment() << '\n';
    row(columns);
  }

  void row(const std::vector<std::string>& fields)
  {
    if (fields.size() != columns_)
      throw std::logic_error("CSV row width does not match the header");
    for (std::size_t i = 0; i < fields.size(); ++i)
      out_ << (i ? "," : "") << fields[i];
    out_ << '\n';
    if (!out_)
      throw IoError("failed writing " + path_.string());
  }

private:
  std::ofstream out_;
  std::filesystem::path path_;
  std::size_t columns_;
};

inline std::string join(const std::vector<double>& v, char sep = ';')
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? std::string(1, sep) : "") + fmt(v[i]);
  return s;
}

inline std::vector<double> split_doubles(const std::string& s, char sep = ';')
{
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep))
    if (!item.empty())
      out.push_back(item == "nan" ? std::nan("") : std::stod(item));
  return out;
}

struct CsvTable
{
  std::string comment;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const
  {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name)
        return i;
    throw IoError("missing CSV column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path)
{
  auto in = open_input(path);
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream s(l);
    std::string item;
    while (std::getline(s, item, ','))
      f.push_back(item);
    if (!l.empty() && l.back() == ',')
      f.emplace_back();
    return f;
  };
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    if (line[0] == '#') {
      t.comment = line;
      continue;
    }
    if (t.header.empty())
      t.header = split(line);
    else
      t.rows.push_back(split(line));
  }
  if (t.header.empty())
    throw IoError(path.string() + " has no header");
  return t;
}

inline const std::vector<std::string> kEvalColumns{
    "method", "sample", "n_fibers", "min_separation_deg", "min_fraction", "n_estimated", "n_missed",
    "acc", "angular_error_deg", "min_acc", "vf_rmse", "ms_per_voxel"};

inline std::vector<std::string> eval_row(const EvalRecord& r)
{
  return {r.method,
          std::to_string(r.sample),
          std::to_string(r.n_fibers),
          fmt(r.min_separation_deg),
          fmt(r.min_fraction),
          std::to_string(r.n_estimated),
          std::to_string(r.n_missed),
          join(r.acc),
          join(r.angular_error_deg),
          fmt(r.min_acc()),
          fmt(r.vf_rmse),
          fmt(r.ms_per_voxel)};
}

inline void write_eval_csv(const std::filesystem::path& path, const Provenance& prov,
                           const std::vector<EvalRecord>& records)
{
  CsvWriter w(path, prov, kEvalColumns);
  for (const EvalRecord& r : records)
    w.row(eval_row(r));
}

inline std::vector<EvalRecord> read_eval_csv(const std::filesystem::path& path)
{
  const CsvTable t = read_csv(path);
  std::vector<std::size_t> idx;
  for (const std::string& c : kEvalColumns)
    idx.push_back(t.column(c));
  std::vector<EvalRecord> out;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size())
      throw IoError(path.string() + ": ragged row");
    auto f = [&](int k) -> const std::string& { return row[idx[static_cast<std::size_t>(k)]]; };
    EvalRecord r;
    try {
      r.method = f(0);
      r.sample = std::stol(f(1));
      r.n_fibers = std::stoi(f(2));
      r.min_separation_deg = std::stod(f(3));
      r.min_fraction = std::stod(f(4));
      r.n_estimated = std::stoi(f(5));
      r.n_missed = std::stoi(f(6));
      r.acc = split_doubles(f(7));
      r.angular_error_deg = split_doubles(f(8));
      r.vf_rmse = std::stod(f(10));
      r.ms_per_voxel = std::stod(f(11));
    } catch (const std::logic_error& e) {
      throw IoError(path.string() + ": bad field: " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// One row per fixel: sample, rank, direction and weight.
inline void write_fixel_csv(const std::filesystem::path& path, const Provenance& prov,
                            const std::vector<std::vector<Fixel>>& per_sample)
{
  CsvWriter w(path, prov, {"sample", "fixel", "x", "y", "z", "weight"});
  for (std::size_t s = 0; s < per_sample.size(); ++s)
    for (std::size_t k = 0; k < per_sample[s].size(); ++k) {
      const Fixel& f = per_sample[s][k];
      w.row({std::to_string(s), std::to_string(k), fmt(f.direction.x()), fmt(f.direction.y()), fmt(f.direction.z()),
             fmt(f.weight)});
    }
}

inline void write_train_log_csv(const std::filesystem::path& path, const Provenance& prov,
                                const std::vector<TrainLogRow>& log)
{
  CsvWriter w(path, prov, {"batch", "train_loss", "validation_loss"});
  for (const TrainLogRow& r : log)
    w.row({std::to_string(r.batch), fmt(r.train_loss), fmt(r.validation_loss)});
}

// ---------------------------------------------------------------------------
// Summaries

inline std::string med_iqr(const Summary& s, int precision)
{
  if (s.count == 0)
    return "n/a";
  std::ostringstream o;
  o << std::setprecision(precision) << s.median << " (" << s.iqr << ")";
  return o.str();
}

inline const std::vector<std::string> kSummaryColumns{
    "method", "samples", "angular_error_median", "angular_error_iqr", "vf_error_median", "vf_error_iqr",
    "acc_median", "acc_iqr", "ms_per_voxel"};

inline void write_summary_csv(const std::filesystem::path& path, const Provenance& prov,
                              const std::vector<MethodSummary>& rows)
{
  CsvWriter w(path, prov, kSummaryColumns);
  for (const MethodSummary& m : rows)
    w.row({m.method, std::to_string(m.samples), fmt(m.angular_error_deg.median), fmt(m.angular_error_deg.iqr),
           fmt(m.vf_rmse.median), fmt(m.vf_rmse.iqr), fmt(m.acc.median), fmt(m.acc.iqr), fmt(m.ms_per_voxel)});
}

/// Median (IQR) table per method.
inline std::string summary_markdown(const std::vector<MethodSummary>& rows, const Provenance& prov)
{
  std::ostringstream o;
  o << "<!-- fodsplit " << prov.version << " seed=" << prov.seed << " config_hash=" << prov.config_hash << " -->\n";
  o << "| Method | Angular error (deg) | VF error | ACC | ms/voxel |\n";
  o << "|---|---|---|---|---|\n";
  for (const MethodSummary& m : rows) {
    std::ostringstream ms;
    ms << std::setprecision(4) << m.ms_per_voxel;
    o << "| " << m.method << " | " << med_iqr(m.angular_error_deg, 3) << " | " << med_iqr(m.vf_rmse, 3) << " | "
      << med_iqr(m.acc, 4) << " | " << ms.str() << " |\n";
  }
  return o.str();
}

} // namespace fodsplit
