#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include "mammo/config.hpp"
#include "mammo/error.hpp"
#include "synthetic.hpp"

using namespace mammo;
using namespace mammo::testing;

namespace {

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::IoFailure;
}

const char* kBase = R"(seed = 3
[paths]
data_root = "data"
clinical = "clinical.csv"
images = "dicom"
output = "runs/x"
[train]
lr_abnormality = 1e-4
tasks = ["mlmc", "baseline"]
)";

const char* kReordered = R"(# same settings, different layout
[train]
tasks = [ "mlmc" , "baseline" ]   # trailing comment
lr_abnormality = 0.0001

[paths]
output = "runs/x"
images = "dicom"
clinical = "clinical.csv"
data_root = "data"
)";

}  // namespace

TEST_CASE("toml subset parsing", "[config]") {
  const auto t = toml::parse("a = 1\nb = \"x # y\"\n[s]\nc = [1.5, 2]\nd = true\ne = -3e-2\n");
  CHECK(std::get<std::int64_t>(std::get<toml::Scalar>(t.at("a"))) == 1);
  CHECK(std::get<std::string>(std::get<toml::Scalar>(t.at("b"))) == "x # y");
  CHECK(std::get<toml::Array>(t.at("s.c")).size() == 2);
  CHECK(std::get<bool>(std::get<toml::Scalar>(t.at("s.d"))));
  CHECK(toml::canonical(t.at("s.e")) == toml::canonical(toml::Value(toml::Scalar(-0.03))));
  CHECK(error_of([] { toml::parse("a = 1\na = 2\n"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_of([] { toml::parse("a = \n"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_of([] { toml::parse("[broken\n"); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("config hash is stable under reordering and formatting", "[config]") {
  unsetenv(std::string(kDataRootEnv).c_str());
  const auto a = parse_run_config(kBase, "/cfg");
  auto reordered = std::string(kReordered);
  reordered.insert(0, "seed = 3\n");
  const auto b = parse_run_config(reordered, "/cfg");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 64);
  const auto c = parse_run_config(std::string(kBase) + "max_epochs = 7\n", "/cfg");
  CHECK(c.hash() != a.hash());
  CHECK(c.section_hash({"paths"}) == a.section_hash({"paths"}));
  CHECK(c.section_hash({"train"}) != a.section_hash({"train"}));
  // explicit defaults hash like omitted keys
  const auto d = parse_run_config(std::string(kBase) + "max_epochs = 100\n", "/cfg");
  CHECK(d.hash() == a.hash());
}

TEST_CASE("paths resolve against the data root and config dir", "[config]") {
  unsetenv(std::string(kDataRootEnv).c_str());
  const auto a = parse_run_config(kBase, "/cfg");
  CHECK(a.data_root == std::filesystem::path("/cfg/data"));
  CHECK(a.clinical == std::filesystem::path("/cfg/data/clinical.csv"));
  CHECK(a.images == std::filesystem::path("/cfg/data/dicom"));
  CHECK(a.output == std::filesystem::path("/cfg/runs/x"));
  CHECK(a.tasks == std::vector<TaskKind>{TaskKind::MLMC, TaskKind::BaselineLuminal});
  CHECK(a.lr_abnormality == 1e-4);
  CHECK(a.seed == 3);

  setenv(std::string(kDataRootEnv).c_str(), "/mnt/cmmd", 1);
  const auto b = parse_run_config(kBase, "/cfg");
  unsetenv(std::string(kDataRootEnv).c_str());
  CHECK(b.clinical == std::filesystem::path("/mnt/cmmd/clinical.csv"));
}

TEST_CASE("invalid configs", "[config]") {
  const std::string base = kBase;
  CHECK(error_of([&] { parse_run_config(base + "unknown_key = 1\n", "/"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_of([&] { parse_run_config(base + "[split]\nfolds = 1\n", "/"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_of([&] { parse_run_config(base + "batch_size = \"x\"\n", "/"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_of([&] { parse_run_config("[paths]\noutput = \"o\"\n[train]\ntasks = [\"nope\"]\n", "/"); }) ==
        ErrorCode::ConfigInvalid);
  CHECK(error_of([&] { parse_run_config("[paths]\noutput = \"\"\n", "/"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_of([&] { load_run_config("/nonexistent/run.toml"); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("default config text parses and per-fold seeds differ", "[config]") {
  unsetenv(std::string(kDataRootEnv).c_str());
  const auto c = parse_run_config(default_config_text(), "/work");
  CHECK(c.folds == 5);
  CHECK(c.test_fraction == 0.10);
  CHECK(c.tasks.size() == 3);
  const auto t0 = c.train_config(TaskKind::BaselineLuminal, 0);
  const auto t1 = c.train_config(TaskKind::BaselineLuminal, 1);
  const auto m0 = c.train_config(TaskKind::MLMC, 0);
  CHECK(t0.seed != t1.seed);
  CHECK(t0.seed != m0.seed);
  CHECK(t0.lr == 1e-5);
  CHECK(m0.lr == 1e-4);
  CHECK(t0.use_weighted_sampler);
  CHECK_FALSE(m0.use_weighted_sampler);
  CHECK(t0.augment.rng_seed != t1.augment.rng_seed);
}
