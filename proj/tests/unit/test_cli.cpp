#include <doctest.h>

#include <fstream>
#include <sstream>

#include "harnet/cli.hpp"
#include "harnet/error.hpp"
#include "support.hpp"

using namespace harnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    if (!line.empty() && line.back() == '\t') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

const char* kDeskConfig =
    "[model]\nlow_level_channels=16\nblock_count=2\nlayers_per_block=3\nblock_channels=8\n[synth]\nsize_px=48\n";

}  // namespace

TEST_CASE("help and usage errors") {
  const auto help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("falseflow") != std::string::npos);
  CHECK(help.out.find("lr") != std::string::npos);
  CHECK(cli({"--no-such-flag"}).code == 1);
  CHECK(cli({"synth"}).code == 1);
  CHECK(cli({}).code == 1);
}

TEST_CASE("synth is deterministic and persists its config") {
  const auto dir = harnet::testing::scratch_dir("cli_synth");
  write_file_atomic(dir / "c.txt", "[synth]\nsize_px=32\n");
  for (const char* name : {"a", "b"}) {
    const auto r = cli({"--config", (dir / "c.txt").string(), "--seed", "7", "--out", (dir / name).string(), "synth",
                        "--n", "4"});
    REQUIRE(r.code == 0);
  }
  CHECK(load_manifest(dir / "a").entries.size() == 4);
  for (const auto& e : load_manifest(dir / "a").entries) {
    CHECK(slurp(dir / "a" / e.degraded_file) == slurp(dir / "b" / e.degraded_file));
  }
  CHECK(slurp(dir / "a" / "config.txt") == slurp(dir / "b" / "config.txt"));
  RunConfig back;
  back.apply(KeyValueDoc::load(dir / "a" / "config.txt"));
  CHECK(back.seed == 7);
  CHECK(back.corpus.size_px == 32);
  CHECK(back.train.lr == 0.01);
}

TEST_CASE("output directory needs an existing parent") {
  const auto dir = harnet::testing::scratch_dir("cli_parent");
  const auto target = dir / "missing" / "out";
  const auto r = cli({"--out", target.string(), "synth", "--n", "1"});
  CHECK(r.code == 2);
  CHECK(r.err.find(target.string()) != std::string::npos);
}

TEST_CASE("config errors are usage errors") {
  const auto dir = harnet::testing::scratch_dir("cli_config");
  write_file_atomic(dir / "bad.txt", "[train]\nlearning_rate=0.1\n");
  CHECK(cli({"--config", (dir / "bad.txt").string(), "--out", (dir / "o").string(), "synth", "--n", "1"}).code == 1);
  write_file_atomic(dir / "bad2.txt", "[nosuch]\nx=1\n");
  CHECK(cli({"--config", (dir / "bad2.txt").string(), "--out", (dir / "o").string(), "synth", "--n", "1"}).code == 1);
  CHECK(cli({"--config", (dir / "absent.txt").string(), "--out", (dir / "o").string(), "synth", "--n", "1"}).code != 0);
  RunConfig c;
  c.apply(KeyValueDoc::parse("[frangi]\nscales_px=1,2.5\n[metrics]\nfaz_row=10\nfaz_col=12\n"));
  CHECK(c.frangi.scales_px == std::vector<double>{1.0, 2.5});
  REQUIRE(c.metrics.center.has_value());
  CHECK(c.metrics.center->col == 12);
  CHECK(config_reference().find("[train]") != std::string::npos);
}

TEST_CASE("summary statistics") {
  const auto one = summarize({4.0});
  CHECK(one.n == 1);
  CHECK(one.stddev == 0.0);
  const auto s = summarize({1.0, 2.0, 3.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK(s.n == 3);
  CHECK(s.mean == 2.0);
  CHECK(s.stddev == 1.0);
  CHECK(summarize({}).n == 0);
}

TEST_CASE("train, reconstruct, evaluate, compare and falseflow") {
  const auto dir = harnet::testing::scratch_dir("cli_pipeline");
  write_file_atomic(dir / "desk.txt", kDeskConfig);
  const std::string cfg = (dir / "desk.txt").string();
  REQUIRE(cli({"--config", cfg, "--seed", "3", "--out", (dir / "corpus").string(), "synth", "--n", "2"}).code == 0);

  const auto train = cli({"--config", cfg, "--out", (dir / "train").string(), "train", "--corpus",
                          (dir / "corpus").string(), "--max-steps", "3"});
  REQUIRE(train.code == 0);
  const auto log = read_tsv(dir / "train" / "loss_log.tsv");
  CHECK(log.size() >= 2);
  CHECK(log[0][0] == "epoch");
  const Model trained = load_checkpoint(dir / "train" / "checkpoint.harn");
  CHECK(trained.spec() == ModelSpec::desk());
  CHECK(fs::exists(dir / "train" / "config.txt"));

  // An all-zero network reproduces the normalised input.
  save_checkpoint(Model::zeros(ModelSpec::desk()), dir / "zero.harn");
  const auto rec = cli({"--out", (dir / "rec").string(), "reconstruct", "--checkpoint", (dir / "zero.harn").string(),
                        "--corpus", (dir / "corpus").string()});
  REQUIRE(rec.code == 0);
  const auto manifest = load_manifest(dir / "corpus");
  const auto input = load_image(dir / "corpus" / manifest.entries[0].degraded_file);
  const auto output = load_image(dir / "rec" / (fs::path(manifest.entries[0].degraded_file).stem().string() + "_recon.png"));
  const auto expected = normalize_unit(input);
  // Inference runs in float, so a value on a rounding boundary may land one level off.
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(std::abs(output.pixels()[i] - expected.pixels()[i]) <= 0.5 / 255.0 + 1e-6);
  CHECK(read_tsv(dir / "rec" / "reconstructions.tsv").size() == 3);

  // A model spec in the config must match the checkpoint.
  write_file_atomic(dir / "other.txt", "[model]\nlow_level_channels=8\n");
  CHECK(cli({"--config", (dir / "other.txt").string(), "--out", (dir / "rec2").string(), "reconstruct",
             "--checkpoint", (dir / "zero.harn").string(), "--corpus", (dir / "corpus").string()})
            .code == 2);
  CHECK(cli({"--out", (dir / "rec3").string(), "reconstruct", "--checkpoint", (dir / "nothing.harn").string(),
             "--corpus", (dir / "corpus").string()})
            .code == 2);

  // Per-image failures become error rows.
  save_image(harnet::testing::filled(48, 48, 60.0).with_id("flat"), dir / "flat.png");
  REQUIRE(cli({"--out", (dir / "eval").string(), "evaluate", "--corpus", (dir / "corpus").string(),
               (dir / "flat.png").string()})
              .code == 0);
  const auto eval = read_tsv(dir / "eval" / "metrics.tsv");
  REQUIRE(eval.size() == 4);
  CHECK(eval[0][1] == "status");
  CHECK(eval[1][0] == "flat");
  CHECK(eval[1][1] == "error");
  CHECK(eval[1][8].find("connectivity") != std::string::npos);
  CHECK(eval[2][1] == "ok");

  const auto cmp = cli({"--out", (dir / "cmp").string(), "compare", "--checkpoint", (dir / "zero.harn").string(),
                        (dir / "corpus" / manifest.entries[0].degraded_file).string()});
  REQUIRE(cmp.code == 0);
  const auto table = read_tsv(dir / "cmp" / "compare_table.tsv");
  REQUIRE(table.size() == 5);
  CHECK(table[1][0] == "Original");
  CHECK(table[4][0] == "HARNet");
  for (std::size_t r = 1; r < 5; ++r) {
    CHECK(table[r][1] == "1");
    CHECK(table[r][3] == "0");
  }
  CHECK(read_tsv(dir / "cmp" / "compare_records.tsv").size() == 5);

  write_file_atomic(dir / "ff.txt", std::string(kDeskConfig) + "[falseflow]\nimages=2\n");
  const auto ff = cli({"--config", (dir / "ff.txt").string(), "--out", (dir / "ff").string(), "falseflow",
                       "--checkpoint", (dir / "zero.harn").string(), "--corpus", (dir / "corpus").string()});
  REQUIRE(ff.code == 0);
  const auto rows = read_tsv(dir / "ff" / "falseflow.tsv");
  std::size_t sweeps = 0, baselines = 0;
  for (const auto& row : rows) {
    if (row[0] == "sweep") ++sweeps;
    if (row[0] == "baseline") ++baselines;
  }
  CHECK(sweeps == 400);
  CHECK(baselines == 2);
  const auto summary = KeyValueDoc::load(dir / "ff" / "falseflow_summary.txt");
  CHECK(summary.sections().front().require("sweep_entries") == "400");
  CHECK_FALSE(summary.sections().front().require("max_noise_with_no_false_flow").empty());

  write_file_atomic(dir / "ff3.txt", "[falseflow]\nimages=3\n");
  CHECK(cli({"--config", (dir / "ff3.txt").string(), "--out", (dir / "ff3").string(), "falseflow", "--checkpoint",
             (dir / "zero.harn").string(), "--corpus", (dir / "corpus").string()})
            .code == 2);
}
