#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "realant/cli/commands.hpp"

using namespace realant;
using namespace realant::cli;
namespace fs = std::filesystem;

namespace {

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("realant_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directory(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig tiny_run(const fs::path& out, int episodes = 3) {
  RunConfig c;
  c.episodes = episodes;
  c.episode_length = 20;
  c.algo.hidden = 8;
  c.algo.hidden_layers = 2;
  c.algo.batch_size = 16;
  c.algo.updates_per_episode = 5;
  c.algo.warmup_episodes = 1;
  c.out = out;
  return c;
}

Context quiet() { return Context{{}, nullptr}; }

std::vector<double> returns_of(const std::vector<rl::EpisodeLog>& curve) {
  std::vector<double> r;
  for (const auto& l : curve) r.push_back(l.episode_return);
  return r;
}

std::string first_columns(const fs::path& curve) {
  std::ifstream in(curve);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(REALANT_CLI) + " -q " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void write_curve(const fs::path& dir, const std::vector<double>& returns) {
  std::ofstream out(dir / "curve.csv");
  out << "episode,steps,return,updates,wallclock_s\n";
  for (std::size_t i = 0; i < returns.size(); ++i)
    out << i << ",200," << physics::detail::format_double(returns[i]) << ",0," << i + 1 << ".000\n";
}

}  // namespace

TEST(RunConfig, ManifestRoundTrip) {
  RunConfig c = tiny_run("x");
  c.task = tasks::TaskId::walk;
  c.algo = rl::AlgoConfig::defaults(rl::Algorithm::redq);
  c.realism.latency_steps = 6;
  c.realism.sigma_rpy = 0.02;
  apply_friction(c, 0.4);
  c.mode = Mode::mesh;
  c.accel = 4.0;
  c.seed = 0xFFFFFFFFFFFFFFFFULL;
  const Json j = manifest_json(c);
  const RunConfig back = run_config_from_manifest(j);
  EXPECT_EQ(manifest_json(back).dump(), j.dump());
  EXPECT_EQ(back.model.contact.friction_coeff, 0.4);
  EXPECT_EQ(back.seed, c.seed);
}

TEST(RunConfig, MalformedManifestIsUsageError) {
  Json j = manifest_json(tiny_run("x"));
  j.erase("algo");
  EXPECT_THROW(run_config_from_manifest(j), UsageError);
  j = manifest_json(tiny_run("x"));
  j["version"] = 99;
  EXPECT_THROW(run_config_from_manifest(j), UsageError);
}

TEST(RunConfig, InvalidCombinationsRejected) {
  RunConfig c = tiny_run("x");
  c.episodes = 0;
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_run("x");
  c.mode = Mode::mesh_distributed;
  EXPECT_THROW(c.validate(), UsageError);
  c.rollout_server = "tcp://127.0.0.1:1";
  EXPECT_NO_THROW(c.validate());
  c.mode = Mode::in_process;
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_run("x");
  c.accel = 10.0;
  EXPECT_THROW(c.validate(), UsageError);
  c.mode = Mode::mesh;
  EXPECT_NO_THROW(c.validate());
  c = tiny_run("");
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_run("x");
  c.realism.diff_window = 4;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(Train, WritesManifestCurveAndCheckpoint) {
  TempDir tmp;
  const RunConfig c = tiny_run(tmp.path / "run", 4);
  const auto out = run_train(c, quiet());
  ASSERT_EQ(out.curve.size(), 4u);
  EXPECT_TRUE(fs::exists(c.out / "run.manifest"));
  EXPECT_TRUE(fs::exists(c.out / "checkpoints" / "final.rant"));
  std::ifstream in(c.out / "curve.csv");
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
  const Json m = Json::parse(read_text(c.out / "run.manifest"));
  EXPECT_EQ(m["episodes"], 4);
  EXPECT_EQ(m["algo"]["algorithm"], "td3");
}

TEST(Train, SameConfigTwiceGivesIdenticalCurves) {
  TempDir tmp;
  run_train(tiny_run(tmp.path / "a"), quiet());
  run_train(tiny_run(tmp.path / "b"), quiet());
  EXPECT_EQ(first_columns(tmp.path / "a" / "curve.csv"), first_columns(tmp.path / "b" / "curve.csv"));
}

TEST(Train, ManifestReproducesCurve) {
  TempDir tmp;
  RunConfig c = tiny_run(tmp.path / "a");
  c.realism = sensors::RealismConfig{};
  c.task = tasks::TaskId::turn;
  run_train(c, quiet());
  RunConfig again = run_config_from_manifest(Json::parse(read_text(tmp.path / "a" / "run.manifest")));
  again.out = tmp.path / "b";
  run_train(again, quiet());
  EXPECT_EQ(first_columns(tmp.path / "a" / "curve.csv"), first_columns(tmp.path / "b" / "curve.csv"));
}

TEST(Train, RefusesNonEmptyOutputDirectory) {
  TempDir tmp;
  std::ofstream(tmp.path / "keep") << "x";
  EXPECT_THROW(run_train(tiny_run(tmp.path), quiet()), RuntimeFailure);
  EXPECT_TRUE(fs::exists(tmp.path / "keep"));
  EXPECT_FALSE(fs::exists(tmp.path / "run.manifest"));
}

TEST(Export, FinalTenMeanAndBest) {
  TempDir tmp;
  run_train(tiny_run(tmp.path / "r", 1), quiet());
  std::vector<double> returns;
  for (int i = 0; i < 12; ++i) returns.push_back(-12.0 + i);  // -12 .. -1
  write_curve(tmp.path / "r", returns);
  const Json s = Json::parse(export_summary(tmp.path / "r"));
  EXPECT_EQ(s["episodes"], 12);
  EXPECT_DOUBLE_EQ(s["final10_mean_return"].get<double>(), -5.5);  // mean of -10 .. -1
  EXPECT_DOUBLE_EQ(s["best_return"].get<double>(), -1.0);
  EXPECT_EQ(s["best_episode"], 11);
  EXPECT_DOUBLE_EQ(s["wallclock_s"].get<double>(), 12.0);
}

TEST(Export, ShortRunAveragesAllEpisodes) {
  TempDir tmp;
  run_train(tiny_run(tmp.path / "r", 1), quiet());
  write_curve(tmp.path / "r", {-3.0, -1.0});
  EXPECT_DOUBLE_EQ(Json::parse(export_summary(tmp.path / "r"))["final10_mean_return"].get<double>(), -2.0);
}

TEST(Export, IdenticalBytesAndErrors) {
  TempDir tmp;
  run_train(tiny_run(tmp.path / "r"), quiet());
  EXPECT_EQ(export_summary(tmp.path / "r"), export_summary(tmp.path / "r"));
  fs::create_directory(tmp.path / "empty");
  EXPECT_THROW(export_summary(tmp.path / "empty"), RuntimeFailure);
  EXPECT_THROW(export_summary(tmp.path / "missing"), RuntimeFailure);
  fs::remove(tmp.path / "r" / "curve.csv");
  EXPECT_THROW(export_summary(tmp.path / "r"), std::exception);
}

TEST(Eval, UntrainedWalkPolicyBarelyMoves) {
  TempDir tmp;
  RunConfig c = tiny_run(tmp.path / "r", 1);
  c.task = tasks::TaskId::walk;
  run_train(c, quiet());
  EvalConfig e;
  e.checkpoint = tmp.path / "r" / "checkpoints" / "final.rant";
  e.episodes = 2;
  e.episode_length = 40;
  const auto rows = run_eval(e);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].friction, e.model.contact.friction_coeff);
  EXPECT_LT(std::abs(rows[0].mean_speed_cm_s), 1.0);
}

TEST(Eval, FrictionSweepGivesOneFiniteRowPerValue) {
  TempDir tmp;
  RunConfig c = tiny_run(tmp.path / "r", 1);
  c.task = tasks::TaskId::walk;
  run_train(c, quiet());
  EvalConfig e;
  e.checkpoint = tmp.path / "r" / "checkpoints" / "final.rant";
  e.episodes = 1;
  e.episode_length = 20;
  e.frictions = {0.4, 0.6, 0.8, 1.0, 1.2};
  const auto rows = run_eval(e);
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].friction, e.frictions[i]);
    EXPECT_TRUE(std::isfinite(rows[i].mean_speed_cm_s));
    EXPECT_TRUE(std::isfinite(rows[i].mean_return));
  }
  std::ostringstream os;
  write_eval_table(os, rows);
  const std::string table = os.str();
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);
}

TEST(Eval, ArchitectureMismatchListsBothDescriptors) {
  TempDir tmp;
  run_train(tiny_run(tmp.path / "r", 1), quiet());
  EvalConfig e;
  e.checkpoint = tmp.path / "r" / "checkpoints" / "final.rant";
  e.realism.stack_k = 3;
  try {
    run_eval(e);
    FAIL() << "expected a mismatch";
  } catch (const rl::ArchitectureMismatch& ex) {
    const std::string what = ex.what();
    EXPECT_NE(what.find("expected {"), std::string::npos);
    EXPECT_NE(what.find("input_dim=87"), std::string::npos);
    EXPECT_NE(what.find("input_dim=116"), std::string::npos);
  }
  e.realism.stack_k = 4;
  e.episodes = 0;
  EXPECT_THROW(run_eval(e), UsageError);
}

TEST(Ablate, ZeroNoiseArmEqualsPlainRun) {
  TempDir tmp;
  AblationConfig a;
  a.kind = AblationKind::noise;
  a.grid = {0.0, 0.05};
  a.base = tiny_run(tmp.path / "abl");
  a.base.realism = sensors::RealismConfig{};
  const auto arms = run_ablation(a, quiet());
  ASSERT_EQ(arms.size(), 2u);
  EXPECT_TRUE(arms[0].ok && arms[1].ok);
  EXPECT_EQ(arms[0].name, "noise_0");
  EXPECT_EQ(arms[1].name, "noise_0.05");

  RunConfig plain = a.base;
  plain.realism.sigma_xyz = plain.realism.sigma_rpy = 0.0;
  plain.out = tmp.path / "plain";
  EXPECT_EQ(returns_of(run_train(plain, quiet()).curve), returns_of(arms[0].curve));
  EXPECT_NE(returns_of(arms[0].curve), returns_of(arms[1].curve));

  std::ifstream merged(tmp.path / "abl" / "ablation.csv");
  std::string header, first;
  std::getline(merged, header);
  std::getline(merged, first);
  EXPECT_EQ(header, "arm,value,episode,steps,return,updates,wallclock_s");
  EXPECT_EQ(first.rfind("noise_0,0,0,", 0), 0u);
  EXPECT_EQ(std::count(std::istreambuf_iterator<char>(merged), {}, '\n'), 5);

  std::istringstream lines(export_summary(tmp.path / "abl"));
  std::string l1, l2;
  std::getline(lines, l1);
  std::getline(lines, l2);
  EXPECT_EQ(Json::parse(l1)["arm"], "noise_0");
  EXPECT_EQ(Json::parse(l2)["arm"], "noise_0.05");
}

TEST(Ablate, DenseArmsShareSeeds) {
  TempDir tmp;
  AblationConfig a;
  a.kind = AblationKind::dense;
  a.grid = default_grid(a.kind);
  a.base = tiny_run(tmp.path / "abl", 2);
  a.base.algo.warmup_episodes = 2;
  const auto arms = run_ablation(a, quiet());
  ASSERT_EQ(arms.size(), 2u);
  // Random warmup episodes do not depend on the network.
  EXPECT_EQ(returns_of(arms[0].curve), returns_of(arms[1].curve));
  const Json m0 = Json::parse(read_text(tmp.path / "abl" / "dense_1" / "run.manifest"));
  const Json m1 = Json::parse(read_text(tmp.path / "abl" / "dense_0" / "run.manifest"));
  EXPECT_EQ(m0["algo"]["dense"], true);
  EXPECT_EQ(m1["algo"]["dense"], false);
  EXPECT_EQ(m0["seed"], m1["seed"]);
}

TEST(Ablate, FailedArmsRecordedAndOthersStillRun) {
  TempDir tmp;
  AblationConfig a;
  a.kind = AblationKind::latency;
  a.grid = {0, 2};
  a.base = tiny_run(tmp.path / "abl", 1);
  a.base.mode = Mode::mesh_distributed;
  a.base.rollout_server = "tcp://127.0.0.1:1";  // nothing listens here
  const auto arms = run_ablation(a, quiet());
  ASSERT_EQ(arms.size(), 2u);
  for (const auto& arm : arms) {
    EXPECT_FALSE(arm.ok);
    EXPECT_NE(arm.error.find("failed"), std::string::npos) << arm.error;
  }
  const Json m = Json::parse(read_text(tmp.path / "abl" / "ablation.manifest"));
  ASSERT_EQ(m["arms"].size(), 2u);
  EXPECT_EQ(m["arms"][1]["status"], "failed");
}

TEST(Ablate, GridValidation) {
  TempDir tmp;
  AblationConfig a;
  a.base = tiny_run(tmp.path / "abl", 1);
  a.kind = AblationKind::latency;
  a.grid = {};
  EXPECT_THROW(run_ablation(a, quiet()), UsageError);
  a.grid = {1.5};
  EXPECT_THROW(run_ablation(a, quiet()), UsageError);
  a.kind = AblationKind::dense;
  a.grid = {2};
  EXPECT_THROW(run_ablation(a, quiet()), UsageError);
  a.kind = AblationKind::noise;
  a.grid = {0.01, 0.01};
  EXPECT_THROW(run_ablation(a, quiet()), UsageError);
  EXPECT_EQ(default_grid(AblationKind::latency), (std::vector<double>{0, 2, 6, 10}));
  EXPECT_EQ(default_grid(AblationKind::noise).size(), 5u);
  EXPECT_FALSE(fs::exists(tmp.path / "abl"));
}

TEST(Binary, ExitCodes) {
  TempDir tmp;
  const std::string out = (tmp.path / "o").string();
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("train --episodes 0 --out " + out), 1);
  EXPECT_EQ(run_cli("train --bogus --out " + out), 1);
  EXPECT_EQ(run_cli("train --task fly --out " + out), 1);
  EXPECT_EQ(run_cli("train --mode mesh-distributed --out " + out), 1);
  EXPECT_EQ(run_cli("eval --checkpoint x.rant --episodes 0"), 1);
  EXPECT_EQ(run_cli("eval --checkpoint " + (tmp.path / "missing.rant").string()), 2);
  EXPECT_EQ(run_cli("export " + (tmp.path / "missing").string()), 2);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Binary, TrainEvalExportSmoke) {
  TempDir tmp;
  const std::string run = (tmp.path / "run").string();
  ASSERT_EQ(run_cli("train --task walk --episodes 2 --episode-length 20 --hidden 8 --layers 2 --batch 16 "
                    "--warmup 1 --updates 3 --out " + run),
            0);
  EXPECT_EQ(run_cli("eval --checkpoint " + run + "/checkpoints/final.rant --episodes 1 --episode-length 20 "
                    "--friction 0.4,1.2 --out " + (tmp.path / "ev").string()),
            0);
  std::ifstream ev(tmp.path / "ev" / "eval.csv");
  EXPECT_EQ(std::count(std::istreambuf_iterator<char>(ev), {}, '\n'), 3);
  EXPECT_EQ(run_cli("export " + run), 0);
  // Same flags again reproduce the curve.
  const std::string again = (tmp.path / "again").string();
  ASSERT_EQ(run_cli("train --manifest " + run + "/run.manifest --out " + again), 0);
  EXPECT_EQ(first_columns(run + "/curve.csv"), first_columns(again + "/curve.csv"));
}

TEST(Binary, LocalMeshMatchesInProcess) {
  TempDir tmp;
  const std::string flags = "train --task walk --episodes 2 --episode-length 30 --hidden 8 --layers 2 --batch 16 "
                            "--warmup 1 --updates 3 --out ";
  ASSERT_EQ(run_cli(flags + (tmp.path / "ip").string()), 0);
  ASSERT_EQ(run_cli(flags + (tmp.path / "mesh").string() + " --mode mesh"), 0);
  EXPECT_EQ(first_columns(tmp.path / "ip" / "curve.csv"), first_columns(tmp.path / "mesh" / "curve.csv"));
  EXPECT_TRUE(fs::exists(tmp.path / "mesh" / "logs" / "rollout-server.log"));
}
