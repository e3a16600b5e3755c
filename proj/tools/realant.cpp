// Command-line entry point.

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <thread>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "realant/cli/commands.hpp"
#include "realant/mesh/nodes.hpp"

namespace {

using namespace realant;
using cli::UsageError;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void install_signal_handlers() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGPIPE, SIG_IGN);
}

/// Stops the node once the spawning process is gone.
void watch_parent() {
  const pid_t parent = ::getppid();
  std::thread([parent] {
    while (!g_stop) {
      if (::getppid() != parent) g_stop = true;
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
    }
  }).detach();
}

template <typename T>
struct Flag {
  T value{};
  CLI::Option* opt = nullptr;
  bool set() const { return opt && opt->count() > 0; }
};

template <typename T>
void add(CLI::App* app, Flag<T>& f, const std::string& name, const std::string& help) {
  f.opt = app->add_option(name, f.value, help);
}

struct RealismFlags {
  Flag<std::string> preset;
  Flag<int> latency, diff_window, stack;
  Flag<double> sigma, sigma_xyz, sigma_rpy, lowpass;

  void attach(CLI::App* app) {
    add(app, preset, "--realism", "Sensor realism preset: default or clean");
    add(app, latency, "--latency", "Pose latency in control steps");
    add(app, sigma, "--sigma", "Pose noise std for both position (m) and angles (rad)");
    add(app, sigma_xyz, "--sigma-xyz", "Pose position noise std (m)");
    add(app, sigma_rpy, "--sigma-rpy", "Pose angle noise std (rad)");
    add(app, lowpass, "--lowpass", "Torso height low-pass coefficient in (0, 1]");
    add(app, diff_window, "--diff-window", "Differentiator window (odd, >= 3)");
    add(app, stack, "--stack", "Observations stacked into the policy input");
  }

  /// Preset (or `base` without one), then individual overrides.
  sensors::RealismConfig resolve(sensors::RealismConfig base) const {
    if (sigma.set() && (sigma_xyz.set() || sigma_rpy.set()))
      throw UsageError("--sigma cannot be combined with --sigma-xyz or --sigma-rpy");
    if (preset.set()) base = cli::realism_preset(preset.value);
    if (latency.set()) base.latency_steps = latency.value;
    if (sigma.set()) base.sigma_xyz = base.sigma_rpy = sigma.value;
    if (sigma_xyz.set()) base.sigma_xyz = sigma_xyz.value;
    if (sigma_rpy.set()) base.sigma_rpy = sigma_rpy.value;
    if (lowpass.set()) base.lowpass_alpha = lowpass.value;
    if (diff_window.set()) base.diff_window = diff_window.value;
    if (stack.set()) base.stack_k = stack.value;
    try {
      base.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    return base;
  }
};

physics::BodyModel load_physics(const std::string& path) {
  try {
    return physics::load_model_file(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

struct RunFlags {
  Flag<std::string> manifest, task, algo, physics, mode, clock, rollout_server;
  Flag<int> episodes, episode_length, updates, hidden, layers, warmup, batch, checkpoint_every, jitter;
  Flag<std::uint64_t> seed;
  Flag<double> friction, accel, lr, staleness, explore_noise, preact_penalty, preact_margin;
  CLI::Option* dense = nullptr;
  CLI::Option* no_dense = nullptr;
  RealismFlags realism;
  std::string out;

  void attach(CLI::App* app) {
    add(app, manifest, "--manifest", "Start from the config recorded in a run.manifest");
    add(app, task, "--task", "Task: sleep, stand, turn or walk");
    add(app, algo, "--algo", "Algorithm: td3, sac or redq");
    add(app, episodes, "--episodes", "Training episodes (>= 1)");
    add(app, seed, "--seed", "Run seed");
    add(app, episode_length, "--episode-length", "Control steps per episode");
    add(app, updates, "--updates", "Gradient updates per episode");
    add(app, hidden, "--hidden", "Hidden layer width");
    add(app, layers, "--layers", "Hidden layer count");
    dense = app->add_flag("--dense", "Concatenate the network input to every hidden layer");
    no_dense = app->add_flag("--no-dense", "Plain multilayer perceptron");
    add(app, warmup, "--warmup", "Uniform random episodes before learning");
    add(app, batch, "--batch", "Minibatch size");
    add(app, lr, "--lr", "Adam learning rate");
    add(app, explore_noise, "--explore-noise", "Exploration noise std for deterministic policies");
    add(app, preact_penalty, "--preact-penalty", "Deterministic actor penalty on pre-tanh outputs beyond the margin");
    add(app, preact_margin, "--preact-margin", "Pre-tanh magnitude the penalty starts at");
    add(app, checkpoint_every, "--checkpoint-every", "Checkpoint period in episodes (0: final only)");
    realism.attach(app);
    add(app, physics, "--physics-config", "Physics config file");
    add(app, friction, "--friction", "Ground friction coefficient override");
    add(app, mode, "--mode", "in-process, mesh or mesh-distributed");
    add(app, clock, "--clock", "Mesh clock: lockstep or realtime");
    add(app, accel, "--accel", "Mesh time acceleration factor");
    add(app, jitter, "--jitter", "Pose delivery jitter in control steps (mesh)");
    add(app, staleness, "--staleness", "Observation staleness bound in seconds (mesh)");
    add(app, rollout_server, "--rollout-server", "Rollout server endpoint (env REALANT_ROLLOUT_SERVER)");
    app->add_option("--out", out, "Output directory (created; must not exist or be empty)")->required();
  }

  cli::RunConfig resolve() const {
    cli::RunConfig c;
    if (manifest.set()) {
      cli::Json j;
      try {
        j = cli::Json::parse(cli::read_text(manifest.value));
      } catch (const std::exception& e) {
        throw UsageError("cannot read manifest " + manifest.value + ": " + e.what());
      }
      c = cli::run_config_from_manifest(j);
    }
    try {
      if (task.set()) c.task = tasks::parse_task(task.value);
      if (algo.set()) {
        const auto a = rl::parse_algorithm(algo.value);
        if (!manifest.set() || a != c.algo.algorithm) c.algo = rl::AlgoConfig::defaults(a);
      }
      if (mode.set()) c.mode = cli::parse_mode(mode.value);
      if (clock.set()) c.clock = mesh::parse_clock_mode(clock.value);
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    if (episodes.set()) c.episodes = episodes.value;
    if (seed.set()) c.seed = seed.value;
    if (episode_length.set()) c.episode_length = episode_length.value;
    if (updates.set()) c.algo.updates_per_episode = updates.value;
    if (hidden.set()) c.algo.hidden = hidden.value;
    if (layers.set()) c.algo.hidden_layers = layers.value;
    if (dense->count() && no_dense->count()) throw UsageError("--dense and --no-dense are mutually exclusive");
    if (dense->count()) c.algo.dense = true;
    if (no_dense->count()) c.algo.dense = false;
    if (warmup.set()) c.algo.warmup_episodes = warmup.value;
    if (batch.set()) c.algo.batch_size = batch.value;
    if (lr.set()) c.algo.lr = lr.value;
    if (explore_noise.set()) c.algo.explore_noise = explore_noise.value;
    if (preact_penalty.set()) c.algo.preact_penalty = preact_penalty.value;
    if (preact_margin.set()) c.algo.preact_margin = preact_margin.value;
    if (checkpoint_every.set()) c.checkpoint_every = checkpoint_every.value;
    c.realism = realism.resolve(c.realism);
    if (physics.set()) {
      c.model = load_physics(physics.value);
      c.physics_source = physics.value;
      c.friction.reset();
    }
    if (friction.set()) cli::apply_friction(c, friction.value);
    if (accel.set()) c.accel = accel.value;
    if (jitter.set()) c.jitter_steps = jitter.value;
    if (staleness.set()) c.staleness_s = staleness.value;
    if (rollout_server.set()) {
      c.rollout_server = rollout_server.value;
    } else if (c.mode == cli::Mode::mesh_distributed) {
      if (const char* env = std::getenv("REALANT_ROLLOUT_SERVER")) c.rollout_server = env;
    } else {
      c.rollout_server.clear();
    }
    c.out = out;
    c.validate();
    return c;
  }
};

mesh::Endpoint endpoint(const std::string& url) {
  try {
    return mesh::Endpoint::parse(url);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

mesh::ClockMode clock_mode(const std::string& s) {
  try {
    return mesh::parse_clock_mode(s);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void print_summary(const std::string& label, const std::vector<rl::EpisodeLog>& curve) {
  const std::size_t n = std::min<std::size_t>(10, curve.size());
  std::cout << label << ": " << curve.size() << " episodes, final-" << n << " mean return "
            << physics::detail::format_double(rl::mean_return(curve, curve.size() - n, n)) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quadruped reinforcement-learning stack."};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress per-episode progress on stderr");

  // train
  auto* train = app.add_subcommand("train", "Train a policy in-process or over the mesh");
  RunFlags train_flags;
  train_flags.attach(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; optional friction sweep");
  std::string eval_checkpoint, eval_task = "walk", eval_out, eval_physics;
  int eval_episodes = 5, eval_length = tasks::kEpisodeLength;
  std::uint64_t eval_seed = 1;
  std::vector<double> eval_friction;
  RealismFlags eval_realism;
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file (.rant)")->required();
  eval->add_option("--task", eval_task, "Task: sleep, stand, turn or walk")->capture_default_str();
  eval->add_option("--episodes", eval_episodes, "Episodes per friction value")->capture_default_str();
  eval->add_option("--seed", eval_seed, "Evaluation seed")->capture_default_str();
  eval->add_option("--episode-length", eval_length, "Control steps per episode")->capture_default_str();
  eval->add_option("--friction", eval_friction, "Friction values, comma separated")->delimiter(',');
  eval->add_option("--physics-config", eval_physics, "Physics config file");
  eval->add_option("--out", eval_out, "Directory for eval.csv (stdout only when absent)");
  eval_realism.attach(eval);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "One training run per grid value with shared seeds");
  std::string ablate_kind;
  std::vector<double> ablate_grid;
  ablate->add_option("--kind", ablate_kind, "latency, noise, dense or updates")->required();
  auto* grid_opt = ablate->add_option("--grid", ablate_grid, "Grid values, comma separated")->delimiter(',');
  RunFlags ablate_flags;
  ablate_flags.attach(ablate);

  // export
  auto* exp = app.add_subcommand("export", "Print a JSON-lines summary of a run or ablation directory");
  std::string export_dir;
  exp->add_option("dir", export_dir, "Run or ablation directory")->required();

  // control
  auto* control = app.add_subcommand("control", "Device-emulator control process");
  std::string c_tel = "tcp://0.0.0.0:5601", c_cam = "tcp://0.0.0.0:5602", c_act = "tcp://127.0.0.1:5605";
  std::string c_clock = "lockstep", c_physics;
  double c_accel = 1.0, c_timeout = 0.25;
  Flag<double> c_friction;
  control->add_option("--telemetry-bind", c_tel, "Telemetry publisher")->envname("REALANT_TELEMETRY_BIND")->capture_default_str();
  control->add_option("--camera-bind", c_cam, "Ground-truth camera feed publisher")->envname("REALANT_CAMERA_BIND")->capture_default_str();
  control->add_option("--actions", c_act, "Rollout server action publisher")->envname("REALANT_ACTIONS")->capture_default_str();
  control->add_option("--clock", c_clock, "lockstep or realtime")->capture_default_str();
  control->add_option("--accel", c_accel, "Realtime acceleration factor")->capture_default_str();
  control->add_option("--action-timeout", c_timeout, "Seconds before held set-points are flagged stale")->capture_default_str();
  control->add_option("--physics-config", c_physics, "Physics config file");
  add(control, c_friction, "--friction", "Ground friction coefficient override");

  // pose
  auto* pose = app.add_subcommand("pose", "Pose estimation process");
  std::string p_cam = "tcp://127.0.0.1:5602", p_bind = "tcp://0.0.0.0:5603";
  int p_jitter = 0;
  RealismFlags p_realism;
  pose->add_option("--camera", p_cam, "Control process camera feed")->envname("REALANT_CAMERA")->capture_default_str();
  pose->add_option("--pose-bind", p_bind, "Pose publisher")->envname("REALANT_POSE_BIND")->capture_default_str();
  pose->add_option("--jitter", p_jitter, "Delivery jitter in control steps")->capture_default_str();
  p_realism.attach(pose);

  // rollout-server
  auto* rollout = app.add_subcommand("rollout-server", "Rollout server");
  std::string r_reply = "tcp://0.0.0.0:5604", r_act = "tcp://0.0.0.0:5605", r_tel = "tcp://127.0.0.1:5601",
              r_pose = "tcp://127.0.0.1:5603", r_clock = "lockstep";
  double r_accel = 1.0, r_stale = 0.25, r_wait = 10.0;
  RealismFlags r_realism;
  rollout->add_option("--reply-bind", r_reply, "Request/reply endpoint for the train client")->envname("REALANT_ROLLOUT_BIND")->capture_default_str();
  rollout->add_option("--actions-bind", r_act, "Action publisher")->envname("REALANT_ACTIONS_BIND")->capture_default_str();
  rollout->add_option("--telemetry", r_tel, "Control process telemetry")->envname("REALANT_TELEMETRY")->capture_default_str();
  rollout->add_option("--pose", r_pose, "Pose process output")->envname("REALANT_POSE")->capture_default_str();
  rollout->add_option("--clock", r_clock, "lockstep or realtime")->capture_default_str();
  rollout->add_option("--accel", r_accel, "Realtime acceleration factor")->capture_default_str();
  rollout->add_option("--staleness", r_stale, "Staleness bound in seconds")->capture_default_str();
  rollout->add_option("--wait-timeout", r_wait, "Lockstep input wait in wall seconds")->capture_default_str();
  r_realism.attach(rollout);

  bool exit_with_parent = false;
  for (auto* node : {control, pose, rollout})
    node->add_flag("--exit-with-parent", exit_with_parent, "Stop when the parent process exits");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  CLI::App* active = app.get_subcommands().front();
  cli::Context ctx;
  ctx.log = quiet ? nullptr : &std::cerr;
  try {
    if (active == train) {
      const cli::RunConfig cfg = train_flags.resolve();
      const auto outcome = cli::run_train(cfg, ctx);
      print_summary(cfg.out.string(), outcome.curve);
      if (outcome.divergence_dominated()) {
        std::cerr << "error: " << outcome.diverged << " of " << outcome.curve.size()
                  << " episodes ended in simulator divergence\n";
        return 2;
      }
      return 0;
    }
    if (active == eval) {
      cli::EvalConfig cfg;
      cfg.checkpoint = eval_checkpoint;
      try {
        cfg.task = tasks::parse_task(eval_task);
      } catch (const std::exception& e) {
        throw UsageError(e.what());
      }
      cfg.episodes = eval_episodes;
      cfg.episode_length = eval_length;
      cfg.seed = eval_seed;
      cfg.realism = eval_realism.resolve({});
      if (!eval_physics.empty()) cfg.model = load_physics(eval_physics);
      cfg.frictions = eval_friction;
      cfg.validate();
      if (!eval_out.empty()) cli::prepare_output_dir(eval_out);
      const auto rows = cli::run_eval(cfg);
      std::ostringstream table;
      cli::write_eval_table(table, rows);
      std::cout << table.str();
      if (!eval_out.empty()) cli::write_text_atomic(std::filesystem::path(eval_out) / "eval.csv", table.str());
      return 0;
    }
    if (active == ablate) {
      cli::AblationConfig cfg;
      cfg.kind = cli::parse_ablation_kind(ablate_kind);
      cfg.grid = grid_opt->count() ? ablate_grid : cli::default_grid(cfg.kind);
      cfg.base = ablate_flags.resolve();
      const auto arms = cli::run_ablation(cfg, ctx);
      int failed = 0;
      for (const auto& a : arms) {
        if (a.ok) {
          print_summary(a.name, a.curve);
        } else {
          std::cout << a.name << ": failed: " << a.error << "\n";
          ++failed;
        }
      }
      return failed ? 2 : 0;
    }
    if (active == exp) {
      std::cout << cli::export_summary(export_dir);
      return 0;
    }

    install_signal_handlers();
  if (exit_with_parent) watch_parent();
    if (active == control) {
      mesh::ControlConfig cfg;
      if (!c_physics.empty()) cfg.model = load_physics(c_physics);
      if (c_friction.set()) {
        if (!(c_friction.value >= 0.0)) throw UsageError("--friction must be >= 0");
        cfg.model.contact.friction_coeff = c_friction.value;
      }
      cfg.clock = clock_mode(c_clock);
      cfg.accel = c_accel;
      cfg.action_timeout_s = c_timeout;
      cfg.telemetry = endpoint(c_tel);
      cfg.camera = endpoint(c_cam);
      cfg.actions = endpoint(c_act);
      if (!(c_accel > 0.0)) throw UsageError("--accel must be > 0");
      mesh::ControlNode node(cfg);
      std::cout << "control ready: telemetry port " << node.telemetry_port() << ", camera port "
                << node.camera_port() << ", actions from " << cfg.actions.str() << std::endl;
      node.run(g_stop);
      return 0;
    }
    if (active == pose) {
      mesh::PoseConfig cfg;
      cfg.realism = p_realism.resolve({});
      if (p_jitter < 0) throw UsageError("--jitter must be >= 0");
      cfg.jitter_steps = p_jitter;
      cfg.camera = endpoint(p_cam);
      cfg.pose = endpoint(p_bind);
      mesh::PoseNode node(cfg);
      std::cout << "pose ready: pose port " << node.pose_port() << ", camera from " << cfg.camera.str() << std::endl;
      node.run(g_stop);
      return 0;
    }
    if (active == rollout) {
      mesh::RolloutConfig cfg;
      cfg.realism = r_realism.resolve({});
      cfg.clock = clock_mode(r_clock);
      cfg.accel = r_accel;
      cfg.staleness_s = r_stale;
      cfg.wait_timeout_s = r_wait;
      if (!(r_accel > 0.0) || !(r_stale > 0.0) || !(r_wait > 0.0))
        throw UsageError("--accel, --staleness and --wait-timeout must be > 0");
      cfg.reply = endpoint(r_reply);
      cfg.actions = endpoint(r_act);
      cfg.telemetry = endpoint(r_tel);
      cfg.pose = endpoint(r_pose);
      mesh::RolloutNode node(cfg);
      std::cout << "rollout-server ready: reply port " << node.reply_port() << ", actions port "
                << node.actions_port() << std::endl;
      node.run(g_stop);
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << active->help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
