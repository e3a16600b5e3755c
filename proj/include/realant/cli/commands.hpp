#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "realant/cli/process.hpp"
#include "realant/cli/run_config.hpp"
#include "realant/mesh/nodes.hpp"
#include "realant/rl/checkpoint.hpp"
#include "realant/rl/train.hpp"

namespace realant::cli {

namespace fs = std::filesystem;

struct Context {
  fs::path node_exe;  // binary providing the node subcommands; empty: this process
  std::ostream* log = &std::cerr;
};

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  rl::write_file_atomic(path, util::Bytes(text.begin(), text.end()));
}

inline std::string read_text(const fs::path& path) {
  const auto b = rl::read_file(path);
  return std::string(b.begin(), b.end());
}

/// Creates `dir` with a single mkdir, or accepts an existing empty one.
inline void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir)) throw RuntimeFailure("output path " + dir.string() + " is not a directory");
    if (!fs::is_empty(dir)) throw RuntimeFailure("output directory " + dir.string() + " is not empty");
    return;
  }
  if (dir.has_parent_path() && !fs::exists(dir.parent_path()))
    throw RuntimeFailure("parent of output directory " + dir.string() + " does not exist");
  if (!fs::create_directory(dir, ec) || ec)
    throw RuntimeFailure("cannot create output directory " + dir.string() + ": " + ec.message());
}

// ------------------------------------------------------------------ mesh

inline std::string loopback(std::uint16_t port) { return mesh::Endpoint{"127.0.0.1", port}.str(); }

inline std::vector<std::string> realism_args(const sensors::RealismConfig& r) {
  using physics::detail::format_double;
  return {"--latency",  std::to_string(r.latency_steps), "--sigma-xyz",   format_double(r.sigma_xyz),
          "--sigma-rpy", format_double(r.sigma_rpy),      "--lowpass",     format_double(r.lowpass_alpha),
          "--diff-window", std::to_string(r.diff_window),  "--stack",       std::to_string(r.stack_k)};
}

/// Control, pose and rollout-server processes on loopback ports, logging
/// into `<out>/logs`.
class LocalMeshProcesses {
 public:
  LocalMeshProcesses(const RunConfig& cfg, const fs::path& exe) {
    using physics::detail::format_double;
    const auto ports = free_ports(5);
    const std::string telemetry = loopback(ports[0]), camera = loopback(ports[1]), pose = loopback(ports[2]),
                      reply = loopback(ports[3]), actions = loopback(ports[4]);
    reply_ = {"127.0.0.1", ports[3]};
    const fs::path logs = cfg.out / "logs";
    fs::create_directory(logs);
    const fs::path physics_cfg = cfg.out / "physics.cfg";
    write_text_atomic(physics_cfg, physics::model_summary(cfg.model));
    const std::string clock(mesh::clock_mode_name(cfg.clock));
    const std::string accel = format_double(cfg.accel);

    std::vector<std::string> control{exe.string(), "control",  "--exit-with-parent", "--telemetry-bind", telemetry, "--camera-bind",
                                     camera,       "--actions", actions,            "--clock",   clock,
                                     "--accel",    accel,       "--physics-config", physics_cfg.string()};
    std::vector<std::string> pose_args{exe.string(), "pose", "--exit-with-parent", "--camera", camera, "--pose-bind", pose,
                                       "--jitter", std::to_string(cfg.jitter_steps)};
    std::vector<std::string> rollout{exe.string(), "rollout-server", "--exit-with-parent", "--reply-bind", reply, "--actions-bind", actions,
                                     "--telemetry", telemetry, "--pose", pose, "--clock", clock, "--accel", accel,
                                     "--staleness", format_double(cfg.staleness_s)};
    for (const auto& a : realism_args(cfg.realism)) {
      pose_args.push_back(a);
      rollout.push_back(a);
    }
    children_.push_back({"control", std::make_unique<ChildProcess>(control, logs / "control.log")});
    children_.push_back({"pose", std::make_unique<ChildProcess>(pose_args, logs / "pose.log")});
    children_.push_back({"rollout-server", std::make_unique<ChildProcess>(rollout, logs / "rollout-server.log")});
  }

  const mesh::Endpoint& reply() const { return reply_; }

  /// Names and exit codes of children that have stopped.
  std::string exited() {
    std::string s;
    for (auto& c : children_)
      if (auto st = c.process->poll()) s += (s.empty() ? "" : ", ") + c.name + " exited with " + std::to_string(*st);
    return s;
  }

 private:
  struct Child {
    std::string name;
    std::unique_ptr<ChildProcess> process;
  };
  mesh::Endpoint reply_;
  std::vector<Child> children_;
};

// ----------------------------------------------------------------- train

struct TrainOutcome {
  std::vector<rl::EpisodeLog> curve;
  int diverged = 0;

  bool divergence_dominated() const { return 2 * static_cast<std::size_t>(diverged) > curve.size(); }
};

/// Runs one training session and writes run.manifest, curve.csv and
/// checkpoints/ into cfg.out. Rows reach curve.csv as episodes finish, so an
/// aborted run keeps its partial curve.
inline TrainOutcome run_train(const RunConfig& cfg, const Context& ctx) {
  cfg.validate();
  prepare_output_dir(cfg.out);
  write_text_atomic(cfg.out / "run.manifest", manifest_json(cfg).dump(2) + "\n");
  rl::TrainConfig tc = cfg.train_config();
  tc.checkpoint_dir = cfg.out / "checkpoints";
  fs::create_directory(tc.checkpoint_dir);

  std::ofstream curve(cfg.out / "curve.csv");
  rl::write_curve_header(curve);
  curve.flush();
  TrainOutcome outcome;
  auto on_episode = [&](const rl::EpisodeLog& log) {
    rl::write_curve_row(curve, log);
    curve.flush();
    outcome.curve.push_back(log);
    if (log.diverged) ++outcome.diverged;
    if (ctx.log)
      *ctx.log << "episode " << log.episode << " return " << physics::detail::format_double(log.episode_return)
               << " updates " << log.updates << (log.diverged ? " diverged" : "") << "\n";
  };

  std::unique_ptr<LocalMeshProcesses> local;
  rl::EpisodeSource source;
  mesh::RemoteConfig remote;
  if (ctx.log) remote.log = [&ctx](const std::string& m) { *ctx.log << m << "\n"; };
  switch (cfg.mode) {
    case Mode::in_process: source = rl::in_process_source(tc.env); break;
    case Mode::mesh:
      local = std::make_unique<LocalMeshProcesses>(cfg, ctx.node_exe.empty() ? self_executable() : ctx.node_exe);
      remote.server = local->reply();
      source = mesh::remote_source(remote);
      break;
    case Mode::mesh_distributed:
      try {
        remote.server = mesh::Endpoint::parse(cfg.rollout_server);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      source = mesh::remote_source(remote);
      break;
  }
  try {
    rl::train(tc, source, on_episode);
  } catch (const std::exception& e) {
    std::string msg = std::string("training aborted after ") + std::to_string(outcome.curve.size()) +
                      " episodes: " + e.what();
    if (local) {
      const std::string ex = local->exited();
      if (!ex.empty()) msg += " (" + ex + "; see " + (cfg.out / "logs").string() + ")";
    }
    throw RuntimeFailure(msg);
  }
  return outcome;
}

// ------------------------------------------------------------------ eval

struct EvalConfig {
  fs::path checkpoint;
  tasks::TaskId task = tasks::TaskId::walk;
  int episodes = 5;
  int episode_length = tasks::kEpisodeLength;
  std::uint64_t seed = 1;
  sensors::RealismConfig realism;
  physics::BodyModel model;
  std::vector<double> frictions;  // empty: the model's own coefficient

  void validate() const {
    if (checkpoint.empty()) throw UsageError("--checkpoint is required");
    if (episodes < 1) throw UsageError("--episodes must be >= 1");
    if (episode_length < 1) throw UsageError("--episode-length must be >= 1");
    for (double f : frictions)
      if (!(f >= 0.0) || !std::isfinite(f)) throw UsageError("friction values must be finite and >= 0");
    try {
      realism.validate();
      model.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
};

struct EvalRow {
  double friction = 0.0;
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;  // population
  double mean_speed_cm_s = 0.0;
  int diverged = 0;
};

/// Loads a checkpoint and checks its input width against the stack size.
inline rl::Policy load_policy(const fs::path& path, const sensors::RealismConfig& realism) {
  rl::Checkpoint ck;
  try {
    ck = rl::load_checkpoint(path);
  } catch (const std::exception& e) {
    throw RuntimeFailure("cannot load checkpoint " + path.string() + ": " + e.what());
  }
  rl::CheckpointDescriptor expected = ck.descriptor;
  expected.input_dim = realism.stack_k * tasks::Observation::kDim;
  if (!expected.same_architecture(ck.descriptor)) throw rl::ArchitectureMismatch(expected, ck.descriptor);
  return rl::policy_from_checkpoint(ck);
}

/// Deterministic-policy returns and forward torso speed, per friction value.
inline std::vector<EvalRow> run_eval(const EvalConfig& cfg) {
  cfg.validate();
  const rl::Policy policy = load_policy(cfg.checkpoint, cfg.realism);
  std::vector<double> frictions = cfg.frictions;
  if (frictions.empty()) frictions.push_back(cfg.model.contact.friction_coeff);
  std::vector<EvalRow> rows;
  for (double mu : frictions) {
    tasks::EnvConfig env_cfg;
    env_cfg.task = tasks::task_spec(cfg.task);
    env_cfg.model = cfg.model;
    env_cfg.model.contact.friction_coeff = mu;
    env_cfg.realism = cfg.realism;
    env_cfg.episode_length = cfg.episode_length;
    tasks::Environment env(env_cfg);
    EvalRow row;
    row.friction = mu;
    row.episodes = cfg.episodes;
    std::vector<double> returns;
    double speed_sum = 0.0;
    for (int ep = 0; ep < cfg.episodes; ++ep) {
      const std::uint64_t seed = rl::episode_seed(cfg.seed, ep);
      std::mt19937_64 rng(rl::action_seed_of(seed));
      rl::EpisodeRecorder rec(cfg.realism.stack_k);
      const sensors::StackedState* state = &rec.begin(env.reset(rl::env_seed_of(seed)));
      const double x0 = env.state().torso_position.x();
      double ret = 0.0;
      bool diverged = false;
      while (!env.done()) {
        const tasks::Action a = policy.act(*state, rl::ActMode::exploit, 0.0, rng);
        const auto r = env.step(a);
        ret += r.reward;
        diverged = diverged || r.info.diverged;
        state = &rec.record(a, r.observation, r.reward, r.done, r.info.diverged);
      }
      const double duration = env.steps() * tasks::kControlPeriod;
      speed_sum += 100.0 * (env.state().torso_position.x() - x0) / duration;
      returns.push_back(ret);
      if (diverged) ++row.diverged;
    }
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= static_cast<double>(returns.size());
    double var = 0.0;
    for (double r : returns) var += (r - mean) * (r - mean);
    row.mean_return = mean;
    row.std_return = std::sqrt(var / static_cast<double>(returns.size()));
    row.mean_speed_cm_s = speed_sum / cfg.episodes;
    rows.push_back(row);
  }
  return rows;
}

inline void write_eval_table(std::ostream& os, const std::vector<EvalRow>& rows) {
  using physics::detail::format_double;
  os << "friction,episodes,mean_return,std_return,mean_speed_cm_s,diverged\n";
  for (const auto& r : rows)
    os << format_double(r.friction) << ',' << r.episodes << ',' << format_double(r.mean_return) << ','
       << format_double(r.std_return) << ',' << format_double(r.mean_speed_cm_s) << ',' << r.diverged << '\n';
}

// ---------------------------------------------------------------- ablate

enum class AblationKind { latency, noise, dense, updates };

inline std::string_view ablation_kind_name(AblationKind k) {
  switch (k) {
    case AblationKind::latency: return "latency";
    case AblationKind::noise: return "noise";
    case AblationKind::dense: return "dense";
    case AblationKind::updates: return "updates";
  }
  return "?";
}

inline AblationKind parse_ablation_kind(std::string_view s) {
  for (AblationKind k : {AblationKind::latency, AblationKind::noise, AblationKind::dense, AblationKind::updates})
    if (ablation_kind_name(k) == s) return k;
  throw UsageError("unknown ablation kind '" + std::string(s) + "' (expected latency, noise, dense or updates)");
}

inline std::vector<double> default_grid(AblationKind k) {
  switch (k) {
    case AblationKind::latency: return {0, 2, 6, 10};
    case AblationKind::noise: return {0, 0.005, 0.01, 0.02, 0.05};
    case AblationKind::dense: return {1, 0};
    case AblationKind::updates: return {20, 200, 2000};
  }
  return {};
}

struct AblationConfig {
  AblationKind kind = AblationKind::latency;
  std::vector<double> grid;
  RunConfig base;  // base.out is the ablation directory
};

struct ArmResult {
  std::string name;
  double value = 0.0;
  bool ok = false;
  std::string error;
  std::vector<rl::EpisodeLog> curve;
};

inline std::string arm_name(AblationKind k, double v) {
  return std::string(ablation_kind_name(k)) + "_" + physics::detail::format_double(v);
}

/// The base run with one grid value applied; the output goes to a
/// subdirectory named after the arm.
inline RunConfig arm_config(const AblationConfig& a, double v) {
  RunConfig c = a.base;
  const bool integral = v == std::floor(v) && std::isfinite(v);
  switch (a.kind) {
    case AblationKind::latency:
      if (!integral || v < 0) throw UsageError("latency grid values must be integers >= 0");
      c.realism.latency_steps = static_cast<int>(v);
      break;
    case AblationKind::noise:
      if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError("noise grid values must be finite and >= 0");
      c.realism.sigma_xyz = c.realism.sigma_rpy = v;
      break;
    case AblationKind::dense:
      if (v != 0.0 && v != 1.0) throw UsageError("dense grid values must be 0 or 1");
      c.algo.dense = v == 1.0;
      break;
    case AblationKind::updates:
      if (!integral || v < 0) throw UsageError("updates grid values must be integers >= 0");
      c.algo.updates_per_episode = static_cast<int>(v);
      break;
  }
  c.out = a.base.out / arm_name(a.kind, v);
  return c;
}

/// One training run per grid value with shared seeds. Writes
/// ablation.manifest and the merged ablation.csv ordered by grid position.
/// A failing arm is recorded and the remaining arms still run.
inline std::vector<ArmResult> run_ablation(const AblationConfig& a, const Context& ctx) {
  if (a.grid.empty()) throw UsageError("ablation grid is empty");
  std::vector<RunConfig> arms;
  for (double v : a.grid) {
    arms.push_back(arm_config(a, v));
    arms.back().validate();
    for (std::size_t i = 0; i + 1 < arms.size(); ++i)
      if (arms[i].out == arms.back().out) throw UsageError("duplicate grid value " + physics::detail::format_double(v));
  }
  prepare_output_dir(a.base.out);

  Json manifest{{"format", "realant-ablation"},
                {"version", kManifestVersion},
                {"kind", ablation_kind_name(a.kind)},
                {"grid", a.grid},
                {"base", manifest_json(a.base)},
                {"arms", Json::array()}};
  write_text_atomic(a.base.out / "ablation.manifest", manifest.dump(2) + "\n");

  std::vector<ArmResult> results;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    ArmResult r;
    r.name = arm_name(a.kind, a.grid[i]);
    r.value = a.grid[i];
    if (ctx.log) *ctx.log << "arm " << r.name << "\n";
    try {
      const TrainOutcome out = run_train(arms[i], ctx);
      r.curve = out.curve;
      r.ok = !out.divergence_dominated();
      if (!r.ok) r.error = std::to_string(out.diverged) + " of " + std::to_string(out.curve.size()) + " episodes diverged";
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    if (ctx.log && !r.ok) *ctx.log << "arm " << r.name << " failed: " << r.error << "\n";
    manifest["arms"].push_back(Json{{"name", r.name},
                                    {"value", r.value},
                                    {"status", r.ok ? "ok" : "failed"},
                                    {"error", r.error}});
    write_text_atomic(a.base.out / "ablation.manifest", manifest.dump(2) + "\n");
    results.push_back(std::move(r));
  }

  std::ostringstream merged;
  merged << "arm,value,episode,steps,return,updates,wallclock_s\n";
  for (const auto& r : results)
    for (const auto& log : r.curve) {
      merged << r.name << ',' << physics::detail::format_double(r.value) << ',';
      rl::write_curve_row(merged, log);
    }
  write_text_atomic(a.base.out / "ablation.csv", merged.str());
  return results;
}

// ---------------------------------------------------------------- export

struct CurveRow {
  int episode = 0;
  int steps = 0;
  double episode_return = 0.0;
  long long updates = 0;
  double wallclock_s = 0.0;
};

inline std::vector<CurveRow> read_curve(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "episode,steps,return,updates,wallclock_s")
    throw RuntimeFailure(path.string() + ": missing curve header");
  std::vector<CurveRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw RuntimeFailure(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    try {
      rows.push_back({std::stoi(f[0]), std::stoi(f[1]), physics::detail::parse_double(f[2], "return"),
                      std::stoll(f[3]), physics::detail::parse_double(f[4], "wallclock_s")});
    } catch (const std::exception& e) {
      throw RuntimeFailure(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

/// Summary of one run directory. The final mean covers the last 10
/// episodes, or all of them in shorter runs.
inline Json run_summary(const fs::path& dir) {
  if (!fs::exists(dir / "run.manifest")) throw RuntimeFailure("no run.manifest in " + dir.string());
  Json manifest;
  try {
    manifest = Json::parse(read_text(dir / "run.manifest"));
  } catch (const Json::exception& e) {
    throw RuntimeFailure(std::string("unreadable run.manifest: ") + e.what());
  }
  const auto rows = read_curve(dir / "curve.csv");
  Json s{{"run", dir.filename().string()},
         {"task", manifest.value("task", "")},
         {"algo", manifest.contains("algo") ? manifest["algo"].value("algorithm", "") : ""},
         {"seed", manifest.value("seed", 0ULL)},
         {"episodes", rows.size()}};
  if (rows.empty()) {
    s["final10_mean_return"] = nullptr;
    s["best_return"] = nullptr;
    s["best_episode"] = nullptr;
    s["wallclock_s"] = 0.0;
    return s;
  }
  const std::size_t n = std::min<std::size_t>(10, rows.size());
  double tail = 0.0;
  for (std::size_t i = rows.size() - n; i < rows.size(); ++i) tail += rows[i].episode_return;
  const auto best = std::max_element(rows.begin(), rows.end(), [](const CurveRow& a, const CurveRow& b) {
    return a.episode_return < b.episode_return;
  });
  s["final10_mean_return"] = tail / static_cast<double>(n);
  s["best_return"] = best->episode_return;
  s["best_episode"] = best->episode;
  s["wallclock_s"] = rows.back().wallclock_s;
  return s;
}

/// JSON lines: one for a run directory, one per arm for an ablation
/// directory. Pure function of the directory contents.
inline std::string export_summary(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw RuntimeFailure(dir.string() + " is not a directory");
  if (fs::exists(dir / "run.manifest")) return run_summary(dir).dump() + "\n";
  if (!fs::exists(dir / "ablation.manifest")) throw RuntimeFailure("no run.manifest or ablation.manifest in " + dir.string());
  Json manifest;
  try {
    manifest = Json::parse(read_text(dir / "ablation.manifest"));
  } catch (const Json::exception& e) {
    throw RuntimeFailure(std::string("unreadable ablation.manifest: ") + e.what());
  }
  std::string out;
  for (const auto& arm : manifest.at("arms")) {
    Json line{{"arm", arm.at("name")}, {"value", arm.at("value")}, {"status", arm.at("status")}};
    const fs::path arm_dir = dir / arm.at("name").get<std::string>();
    if (fs::exists(arm_dir / "run.manifest")) {
      const Json summary = run_summary(arm_dir);
      for (const auto& [k, v] : summary.items()) line[k] = v;
    }
    if (arm.at("status") != "ok") line["error"] = arm.at("error");
    out += line.dump() + "\n";
  }
  return out;
}

}  // namespace realant::cli
