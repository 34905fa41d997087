#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>

#include "mammo/checkpoint.hpp"
#include "mammo/config.hpp"
#include "mammo/image_io.hpp"
#include "mammo/pipeline.hpp"
#include "synthetic.hpp"

using namespace mammo;
using namespace mammo::testing;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MAMMO_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("usage errors exit 2", "[cli]") {
  CHECK(run_cli("") == 2);
  CHECK(run_cli("bogus") == 2);
  CHECK(run_cli("train --task mlmc") == 2);
  CHECK(run_cli("run --config /nonexistent/run.toml") == 2);
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("init-config writes a parseable default", "[cli]") {
  TempDir dir("cli");
  REQUIRE(run_cli("init-config --out " + q(dir / "run.toml")) == 0);
  const auto cfg = load_run_config(dir / "run.toml");
  CHECK(cfg.folds == 5);
}

TEST_CASE("stage subcommands with explicit paths", "[cli]") {
  TempDir dir("cli");
  auto patients = smoke_patients();
  const auto ds = write_synthetic_dataset(dir / "data", patients, 64, 32);
  REQUIRE(run_cli("ingest --clinical " + q(ds.clinical) + " --images " + q(ds.images) + " --out " +
                  q(dir / "ingest") + " --quiet") == 0);
  REQUIRE(run_cli("preprocess --manifest " + q(dir / "ingest" / "manifest.csv") + " --out " + q(dir / "prep") +
                  " --rows 32 --cols 16 --quiet") == 0);
  REQUIRE(run_cli("split --manifest " + q(dir / "prep" / "manifest.csv") + " --task subtype --folds 2 --test-frac 0.2 "
                  "--out " + q(dir / "subtype.csv") + " --quiet") == 0);
  CHECK(read_splits(dir / "subtype.csv").folds == 2);
  CHECK(run_cli("split --manifest " + q(dir / "missing.csv") + " --task subtype --out " + q(dir / "x.csv")) == 1);

  BackboneConfig bb;
  bb.base_width = 4;
  bb.blocks = {1, 1};
  CheckpointMeta meta;
  meta.task = TaskKind::MLMC;
  meta.fold = 0;
  meta.backbone = bb;
  save_checkpoint(make_checkpoint(attach_head(build_backbone(bb, std::nullopt, 1), TaskSpec::make(TaskKind::MLMC), 2),
                                  meta),
                  dir / "m.mck");
  const auto m = read_manifest(dir / "prep" / "manifest.csv");
  REQUIRE(run_cli("gradcam --ckpt " + q(dir / "m.mck") + " --image " + q(m.records[0].image_path) +
                  " --class mass --out " + q(dir / "cam.png")) == 0);
  const auto rgb = read_png_rgb(dir / "cam.png");
  CHECK(rgb.rows == 32);
  CHECK(rgb.cols == 16);
  CHECK(run_cli("gradcam --ckpt " + q(dir / "m.mck") + " --image " + q(m.records[0].image_path) +
                " --class luminal --out " + q(dir / "cam2.png")) == 1);
}

TEST_CASE("run with parallel fold processes", "[cli]") {
  TempDir dir("cli");
  write_synthetic_dataset(dir / "data", smoke_patients(), 64, 32);
  SmokeOverrides o;
  o.max_epochs = 2;
  o.rows = 32;
  o.cols = 16;
  o.base_width = 4;
  o.blocks = "[1, 1]";
  write_text(dir / "run.toml", smoke_config_text(dir / "data", dir / "out", o));
  REQUIRE(run_cli("run --config " + q(dir / "run.toml") + " --jobs 2 --stages ingest,preprocess,split,train --quiet") ==
          0);
  const auto cfg = load_run_config(dir / "run.toml");
  const RunLayout L = layout_for(cfg);
  for (TaskKind t : cfg.tasks)
    for (int f = 0; f < 2; ++f) CHECK(fs::exists(L.fold_dir(t, f) / "best.mck"));
  CHECK(run_cli("evaluate --config " + q(dir / "run.toml") + " --quiet") == 0);
  CHECK(fs::exists(L.eval_report(TaskKind::MLMC)));
  CHECK(run_cli("run --config " + q(dir / "run.toml") + " --stages deploy") == 2);
}
