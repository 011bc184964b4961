#include "fodsplit/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace fodsplit;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
  const fs::path p = fs::temp_directory_path() / ("fodsplit_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

} // namespace

TEST(Fnv1a, ReferenceVectors)
{
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Fmt, RoundTrips)
{
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    EXPECT_EQ(std::stod(fmt(v)), v);
  }
  EXPECT_EQ(fmt(0.5), "0.5");
  EXPECT_EQ(fmt(std::nan("")), "nan");
}

TEST(Dataset, JsonlRoundTripIsExact)
{
  const fs::path dir = scratch_dir("dataset");
  const auto data = generate_dataset(DatasetSpec{3, 5, 4, 6, 1.0});
  write_dataset_jsonl(dir / "d.jsonl", data);
  const auto back = read_dataset_jsonl(dir / "d.jsonl");
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].total, data[i].total);
    ASSERT_EQ(back[i].components.size(), data[i].components.size());
    for (std::size_t k = 0; k < data[i].components.size(); ++k) {
      EXPECT_EQ(back[i].config.fibers()[k].fraction, data[i].config.fibers()[k].fraction);
      EXPECT_EQ(back[i].components[k], data[i].components[k]);
    }
  }
  write_dataset_jsonl(dir / "e.jsonl", back);
  auto a = open_input(dir / "d.jsonl"), b = open_input(dir / "e.jsonl");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Dataset, ReadErrors)
{
  const fs::path dir = scratch_dir("errors");
  EXPECT_THROW(read_dataset_jsonl(dir / "missing.jsonl"), IoError);
  open_output(dir / "empty.jsonl");
  EXPECT_THROW(read_dataset_jsonl(dir / "empty.jsonl"), IoError);
  {
    auto out = open_output(dir / "bad.jsonl");
    out << "{\"index\": 0, \"lmax\": 6}\n";
  }
  EXPECT_THROW(read_dataset_jsonl(dir / "bad.jsonl"), IoError);
}

TEST(Manifest, RecordsSeedSizesAndLmax)
{
  const DatasetSpec spec{11, 250, 80, 6, 1.0};
  const nlohmann::json m = dataset_manifest(spec, "dataset.jsonl", 330);
  EXPECT_EQ(m["lmax"], 6);
  EXPECT_EQ(m["count"], 330);
  EXPECT_EQ(m["provenance"]["seed"], 11);
  EXPECT_EQ(m["provenance"]["version"], kVersion);
  EXPECT_EQ(m["provenance"]["config_hash"], dataset_manifest(spec, "dataset.jsonl", 330)["provenance"]["config_hash"]);
  EXPECT_NE(m["provenance"]["config_hash"],
            dataset_manifest(DatasetSpec{12, 250, 80, 6, 1.0}, "dataset.jsonl", 330)["provenance"]["config_hash"]);
}

TEST(EvalCsv, RoundTrip)
{
  const fs::path dir = scratch_dir("eval");
  EvalRecord r;
  r.method = "watershed";
  r.sample = 4;
  r.n_fibers = 2;
  r.min_separation_deg = 51.25;
  r.min_fraction = 0.3;
  r.n_estimated = 1;
  r.n_missed = 1;
  r.acc = {0.987654321};
  r.angular_error_deg = {1.5, 90.0};
  r.vf_rmse = 0.123;
  r.ms_per_voxel = 0.05;
  EvalRecord none = r;
  none.sample = 5;
  none.acc = {};
  none.n_estimated = 0;
  none.n_missed = 2;
  const Provenance prov = Provenance::of(9, {{"k", 1}});
  write_eval_csv(dir / "r.csv", prov, {r, none});
  const CsvTable t = read_csv(dir / "r.csv");
  EXPECT_EQ(t.comment, prov.csv_comment());
  EXPECT_EQ(t.header, kEvalColumns);
  const auto back = read_eval_csv(dir / "r.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].acc, r.acc);
  EXPECT_EQ(back[0].angular_error_deg, r.angular_error_deg);
  EXPECT_EQ(back[0].min_separation_deg, 51.25);
  EXPECT_EQ(back[0].min_acc(), 0.0);
  EXPECT_TRUE(back[1].acc.empty());
  EXPECT_EQ(back[1].n_missed, 2);
}

TEST(Summary, MarkdownHasTableColumns)
{
  MethodSummary m;
  m.method = "fissile";
  m.acc = summarize({1.0, 1.0, 1.0});
  m.angular_error_deg = summarize({0.0, 1e-7});
  m.vf_rmse = summarize({0.0});
  m.ms_per_voxel = 40.0;
  const std::string md = summary_markdown({m}, Provenance::of(0, {}));
  EXPECT_NE(md.find("| Method | Angular error (deg) | VF error | ACC | ms/voxel |"), std::string::npos);
  EXPECT_NE(md.find("| fissile | "), std::string::npos);
  EXPECT_NE(md.find("1 (0)"), std::string::npos);
}
