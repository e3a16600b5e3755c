#pragma once

#include <atomic>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>

#include "realant/mesh/transport.hpp"
#include "realant/physics/simulator.hpp"
#include "realant/rl/train.hpp"
#include "realant/sensors/pipeline.hpp"

namespace realant::mesh {

/// lockstep: every process advances only when its input for the next tick
/// has arrived, so runs are bit-reproducible. realtime: wall-clock ticks,
/// optionally accelerated, with latest-value caches.
enum class ClockMode { lockstep, realtime };

inline std::string_view clock_mode_name(ClockMode m) { return m == ClockMode::lockstep ? "lockstep" : "realtime"; }
inline ClockMode parse_clock_mode(std::string_view s) {
  if (s == "lockstep") return ClockMode::lockstep;
  if (s == "realtime") return ClockMode::realtime;
  throw std::invalid_argument("unknown clock mode '" + std::string(s) + "'");
}

inline constexpr std::uint64_t kTickUs = 50000;

inline Clock::duration tick_period(double accel) {
  return std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(tasks::kControlPeriod / accel));
}

inline PoseEstimate to_message(const sensors::PoseSample& p) {
  return {p.x, p.y, p.z, p.roll, p.pitch, p.yaw, p.timestamp_us};
}
inline sensors::PoseSample from_message(const PoseEstimate& m) {
  return {m.x, m.y, m.z, m.roll, m.pitch, m.yaw, m.timestamp_us};
}

// ---------------------------------------------------------------- control

struct ControlConfig {
  physics::BodyModel model;
  ClockMode clock = ClockMode::lockstep;
  double accel = 1.0;
  double action_timeout_s = 0.25;  // logical
  Endpoint telemetry{"127.0.0.1", 0};
  Endpoint camera{"127.0.0.1", 0};
  Endpoint actions{"127.0.0.1", 0};
};

/// Device emulator: owns the simulator, applies the newest ACTION each tick
/// and publishes SERVO_TELEMETRY. Ground-truth torso poses go out on the
/// camera feed, preceded by the reset marker of each episode, for the pose
/// process to degrade.
class ControlNode {
 public:
  explicit ControlNode(ControlConfig cfg)
      : cfg_(std::move(cfg)), telemetry_(cfg_.telemetry), camera_(cfg_.camera) {
    if (!(cfg_.accel > 0.0)) throw std::invalid_argument("acceleration factor must be > 0");
  }

  std::uint16_t telemetry_port() const { return telemetry_.port(); }
  std::uint16_t camera_port() const { return camera_.port(); }
  std::uint64_t ticks() const { return ticks_; }
  void set_actions_endpoint(Endpoint e) { cfg_.actions = std::move(e); }

  void run(const std::atomic<bool>& stop) {
    Subscriber actions(cfg_.actions);
    if (cfg_.clock == ClockMode::lockstep) {
      while (!stop) {
        auto m = actions.next(Millis(50));
        if (m) handle(*m, true);
      }
      return;
    }
    const auto period = tick_period(cfg_.accel);
    auto next = Clock::now();
    while (!stop) {
      for (auto& m : actions.drain()) handle(m, false);
      if (active_) {
        std::uint8_t flags = 0;
        if (now_us_ - last_action_us_ > static_cast<std::uint64_t>(cfg_.action_timeout_s * 1e6))
          flags |= telemetry_flags::stale_action;
        advance(flags);
      }
      next += period;
      std::this_thread::sleep_until(next);
      if (Clock::now() > next + 10 * period) next = Clock::now();
    }
  }

 private:
  void handle(const Message& m, bool lockstep) {
    if (const auto* req = std::get_if<RolloutRequest>(&m)) {
      state_ = physics::reset(cfg_.model, tasks::task_spec(req->task).initial_pose);
      command_ = physics::ServoCommand::hold(state_);
      last_seq_ = 0;
      active_ = true;
      diverged_ = false;
      now_us_ += kTickUs;
      last_action_us_ = now_us_;
      camera_.publish(*req);
      publish(telemetry_flags::reset);
    } else if (const auto* a = std::get_if<ActionMsg>(&m)) {
      if (!active_ || a->seq <= last_seq_) return;  // latest wins
      last_seq_ = a->seq;
      tasks::Action act;
      for (int j = 0; j < tasks::kActionDim; ++j) act[j] = a->setpoints[j];
      command_ = tasks::action_to_targets(act, cfg_.model);
      last_action_us_ = now_us_;
      if (lockstep) advance(0);
    }
  }

  void advance(std::uint8_t flags) {
    if (!diverged_) {
      try {
        state_ = physics::step(cfg_.model, state_, command_, tasks::kControlPeriod);
      } catch (const physics::SimulationDiverged& e) {
        state_ = e.last_valid();
        diverged_ = true;
      }
    }
    if (diverged_) flags |= telemetry_flags::diverged;
    now_us_ += kTickUs;
    ++ticks_;
    publish(flags);
  }

  void publish(std::uint8_t flags) {
    ServoTelemetry t;
    for (int j = 0; j < tasks::kActionDim; ++j) {
      t.angles[j] = state_.joint_angles[j];
      t.velocities[j] = state_.joint_velocities[j];
    }
    t.timestamp_us = now_us_;
    t.flags = flags;
    telemetry_.publish(t);
    camera_.publish(to_message(sensors::PoseSample::from_state(state_, now_us_)));
  }

  ControlConfig cfg_;
  Publisher telemetry_;
  Publisher camera_;
  physics::RobotState state_;
  physics::ServoCommand command_;
  std::uint64_t now_us_ = 0;
  std::uint64_t last_action_us_ = 0;
  std::uint64_t last_seq_ = 0;
  std::atomic<std::uint64_t> ticks_{0};
  bool active_ = false;
  bool diverged_ = false;
};

// ------------------------------------------------------------------- pose

struct PoseConfig {
  sensors::RealismConfig realism;
  int jitter_steps = 0;
  Endpoint camera{"127.0.0.1", 0};
  Endpoint pose{"127.0.0.1", 0};
};

/// Latency plus delivery jitter: frame i becomes visible at frame
/// i + latency + U{-J..J} and the newest visible frame is emitted, so the
/// stream never goes back in time.
class JitteredChannel {
 public:
  JitteredChannel(const sensors::RealismConfig& cfg, int jitter)
      : latency_(cfg.latency_steps), jitter_(jitter), noise_(cfg.sigma_xyz, cfg.sigma_rpy) {}

  void reset(std::uint64_t seed) {
    noise_.reseed(seed);
    rng_.seed(util::splitmix64(seed ^ 0x6A6974ULL));
    pending_.clear();
    frame_ = 0;
    has_latest_ = false;
  }

  sensors::PoseSample process(const sensors::PoseSample& truth) {
    std::uniform_int_distribution<int> j(-jitter_, jitter_);
    pending_.push_back({frame_ + std::max<std::int64_t>(0, latency_ + j(rng_)), truth});
    for (auto it = pending_.begin(); it != pending_.end();) {
      if (it->visible_at <= frame_ && (!has_latest_ || it->sample.timestamp_us >= latest_.timestamp_us)) {
        latest_ = it->sample;
        has_latest_ = true;
      }
      it = it->visible_at <= frame_ ? pending_.erase(it) : std::next(it);
    }
    ++frame_;
    if (!has_latest_) {  // hold-first
      latest_ = pending_.front().sample;
      for (const auto& p : pending_)
        if (p.sample.timestamp_us < latest_.timestamp_us) latest_ = p.sample;
    }
    sensors::PoseSample p = latest_;
    double v[6] = {p.x, p.y, p.z, p.roll, p.pitch, p.yaw};
    noise_.apply(v);
    return {v[0], v[1], v[2], sensors::wrap_angle(v[3]), sensors::wrap_angle(v[4]), sensors::wrap_angle(v[5]),
            p.timestamp_us};
  }

 private:
  struct Pending {
    std::int64_t visible_at;
    sensors::PoseSample sample;
  };
  std::int64_t latency_;
  int jitter_;
  sensors::NoiseModel noise_;
  std::mt19937_64 rng_;
  std::deque<Pending> pending_;
  std::int64_t frame_ = 0;
  sensors::PoseSample latest_;
  bool has_latest_ = false;
};

/// Pose estimation emulator: one POSE_ESTIMATE per camera frame, delayed and
/// noisy, stamped with the capture time of the frame it describes.
class PoseNode {
 public:
  explicit PoseNode(PoseConfig cfg)
      : cfg_(std::move(cfg)), out_(cfg_.pose), channel_(cfg_.realism, 0), jittered_(cfg_.realism, cfg_.jitter_steps) {
    cfg_.realism.validate();
    if (cfg_.jitter_steps < 0) throw std::invalid_argument("jitter_steps must be >= 0");
  }

  std::uint16_t pose_port() const { return out_.port(); }

  void run(const std::atomic<bool>& stop) {
    Subscriber camera(cfg_.camera);
    while (!stop) {
      auto m = camera.next(Millis(50));
      if (!m) continue;
      if (const auto* req = std::get_if<RolloutRequest>(&*m)) {
        const auto seed = rl::env_seed_of(req->seed);
        channel_.reset(seed);
        jittered_.reset(seed);
      } else if (const auto* frame = std::get_if<PoseEstimate>(&*m)) {
        const auto truth = from_message(*frame);
        out_.publish(to_message(cfg_.jitter_steps > 0 ? jittered_.process(truth) : channel_.process(truth)));
      }
    }
  }

 private:
  PoseConfig cfg_;
  Publisher out_;
  sensors::PoseChannel channel_;
  JitteredChannel jittered_;
};

// --------------------------------------------------------- rollout server

struct RolloutConfig {
  sensors::RealismConfig realism;
  ClockMode clock = ClockMode::lockstep;
  double accel = 1.0;
  double staleness_s = 0.25;     // logical
  double wait_timeout_s = 10.0;  // wall clock, lockstep input wait
  Endpoint reply{"127.0.0.1", 0};
  Endpoint actions{"127.0.0.1", 0};
  Endpoint telemetry{"127.0.0.1", 0};
  Endpoint pose{"127.0.0.1", 0};
};

enum class RolloutState { idle, weights_loaded, running, reporting };

inline std::string_view rollout_state_name(RolloutState s) {
  switch (s) {
    case RolloutState::idle: return "IDLE";
    case RolloutState::weights_loaded: return "WEIGHTS_LOADED";
    case RolloutState::running: return "RUNNING";
    case RolloutState::reporting: return "REPORTING";
  }
  return "?";
}

/// Runs episodes on request: policy from WEIGHTS, observations assembled
/// from the telemetry and pose streams through the state estimator, one
/// ACTION per control tick, then EPISODE_DATA.
class RolloutNode {
 public:
  explicit RolloutNode(RolloutConfig cfg)
      : cfg_(std::move(cfg)),
        server_(cfg_.reply),
        actions_(cfg_.actions),
        telemetry_(std::make_unique<Subscriber>(cfg_.telemetry)),
        pose_(std::make_unique<Subscriber>(cfg_.pose)) {
    cfg_.realism.validate();
  }

  std::uint16_t reply_port() const { return server_.port(); }
  std::uint16_t actions_port() const { return actions_.port(); }
  RolloutState state() const { return state_; }
  std::uint64_t actions_sent() const { return actions_sent_; }

  void run(const std::atomic<bool>& stop) {
    stop_ = &stop;
    server_.serve([this](const Message& m) { return handle(m); }, stop);
  }

  std::vector<Message> handle(const Message& m) {
    if (const auto* w = std::get_if<Weights>(&m)) return load(*w);
    if (const auto* r = std::get_if<RolloutRequest>(&m)) {
      if (!policy_) return {Error{error_codes::no_policy, "no policy loaded"}};
      if (r->length < 1 || r->length > 1000000) return {Error{error_codes::bad_request, "episode length out of range"}};
      state_ = RolloutState::running;
      auto replies = rollout(*r);
      state_ = RolloutState::weights_loaded;
      return replies;
    }
    return {Error{error_codes::bad_request, "unexpected " + std::string(msg_type_name(type_of(m)))}};
  }

 private:
  struct Aborted {
    std::string why;
  };

  std::vector<Message> load(const Weights& w) {
    try {
      rl::Policy p = rl::policy_from_checkpoint(rl::decode_checkpoint(w.checkpoint));
      const int dim = cfg_.realism.stack_k * tasks::Observation::kDim;
      if (p.actor.shape().input_dim != dim) {
        return {Error{error_codes::bad_request, "policy input width " + std::to_string(p.actor.shape().input_dim) +
                                                    " does not match stacked observation width " +
                                                    std::to_string(dim)}};
      }
      policy_ = std::move(p);
    } catch (const std::exception& e) {
      return {Error{error_codes::bad_request, std::string("bad checkpoint: ") + e.what()}};
    }
    state_ = RolloutState::weights_loaded;
    return {Ack{0, "weights loaded"}};
  }

  Clock::time_point wait_deadline() const {
    return Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(cfg_.wait_timeout_s));
  }

  template <typename T>
  T next_of(Subscriber& sub, Clock::time_point deadline, const char* what) {
    while (Clock::now() < deadline && !(stop_ && *stop_)) {
      auto m = sub.next(Millis(20));
      if (!m) continue;
      if (auto* v = std::get_if<T>(&*m)) return *v;
    }
    throw Aborted{std::string("no ") + what + " within the wait timeout"};
  }

  std::uint64_t staleness_us() const { return static_cast<std::uint64_t>(cfg_.staleness_s * 1e6); }

  std::vector<Message> rollout(const RolloutRequest& req) {
    const auto spec = tasks::task_spec(req.task);
    sensors::StateEstimator estimator(cfg_.realism, tasks::kControlPeriod);
    rl::EpisodeRecorder rec(cfg_.realism.stack_k);
    std::mt19937_64 rng(rl::action_seed_of(req.seed));
    try {
      telemetry_->drain();
      pose_->drain();
      if (!actions_.wait_for_subscribers(1, Millis(static_cast<long>(cfg_.wait_timeout_s * 1000)), stop_))
        throw Aborted{"control process is not subscribed to actions"};
      actions_.publish(req);

      ServoTelemetry tel;
      do tel = next_of<ServoTelemetry>(*telemetry_, wait_deadline(), "reset telemetry");
      while (!(tel.flags & telemetry_flags::reset));
      const std::uint64_t t0 = tel.timestamp_us;
      PoseEstimate pose = next_pose(t0, wait_deadline());

      tasks::Observation obs = estimate(estimator, tel, pose).observation;
      const sensors::StackedState* state = &rec.begin(obs);
      const auto period = tick_period(cfg_.accel);
      auto next_tick = Clock::now();

      for (std::uint32_t k = 0; k < req.length; ++k) {
        const tasks::Action a = policy_->act(*state, req.mode, req.explore_noise, rng);
        ActionMsg am;
        for (int j = 0; j < tasks::kActionDim; ++j) am.setpoints[j] = a[j];
        am.seq = k + 1;
        actions_.publish(am);
        ++actions_sent_;

        if (cfg_.clock == ClockMode::lockstep) {
          tel = next_of<ServoTelemetry>(*telemetry_, wait_deadline(), "telemetry");
          if (tel.timestamp_us != t0 + (k + 1) * kTickUs) throw Aborted{"telemetry out of lockstep"};
          pose = next_pose(t0, wait_deadline());
        } else {
          next_tick += period;
          std::this_thread::sleep_until(next_tick);
          latest(t0, tel, pose);
        }
        if (tel.timestamp_us > pose.timestamp_us + staleness_us())
          throw Aborted{"pose is " + std::to_string((tel.timestamp_us - pose.timestamp_us) / 1000) +
                        " ms older than telemetry"};

        const bool last = k + 1 == req.length;
        if (tel.flags & telemetry_flags::diverged) {
          rec.record(a, obs, 0.0, true, true);
          state_ = RolloutState::reporting;
          return {Error{error_codes::diverged, "simulation diverged at step " + std::to_string(k + 1)},
                  EpisodeDataMsg{rec.take()}};
        }
        const auto est = estimate(estimator, tel, pose);
        obs = est.observation;
        state = &rec.record(a, obs, tasks::task_reward(spec, est), last, false);
      }
    } catch (const Aborted& a) {
      return {Error{error_codes::stale, "episode aborted: " + a.why}};
    }
    state_ = RolloutState::reporting;
    return {EpisodeDataMsg{rec.take()}};
  }

  PoseEstimate next_pose(std::uint64_t t0, Clock::time_point deadline) {
    while (true) {
      const auto p = next_of<PoseEstimate>(*pose_, deadline, "pose estimate");
      if (p.timestamp_us >= t0) return p;
    }
  }

  /// Latest-value read for realtime mode: newest telemetry and pose that
  /// belong to this episode, waiting up to the staleness bound for the first.
  void latest(std::uint64_t t0, ServoTelemetry& tel, PoseEstimate& pose) {
    const std::uint64_t before = tel.timestamp_us;
    const auto deadline =
        Clock::now() + std::chrono::duration_cast<Clock::duration>(
                           std::chrono::duration<double>(cfg_.staleness_s / cfg_.accel));
    std::uint8_t sticky = 0;
    while (true) {
      for (auto& m : telemetry_->drain()) {
        if (auto* t = std::get_if<ServoTelemetry>(&m); t && t->timestamp_us > tel.timestamp_us) {
          sticky |= t->flags & telemetry_flags::diverged;
          tel = *t;
        }
      }
      for (auto& m : pose_->drain()) {
        if (auto* p = std::get_if<PoseEstimate>(&m); p && p->timestamp_us >= t0 && p->timestamp_us >= pose.timestamp_us)
          pose = *p;
      }
      if (tel.timestamp_us > before) break;
      if (Clock::now() >= deadline) throw Aborted{"telemetry stalled beyond the staleness bound"};
      std::this_thread::sleep_for(Millis(1));
    }
    tel.flags |= sticky;
  }

  static sensors::Estimate estimate(sensors::StateEstimator& est, const ServoTelemetry& tel, const PoseEstimate& pose) {
    sensors::JointSample j;
    for (int i = 0; i < tasks::kActionDim; ++i) {
      j.angles[i] = tel.angles[i];
      j.velocities[i] = tel.velocities[i];
    }
    return est.update(from_message(pose), j);
  }

  RolloutConfig cfg_;
  ReplyServer server_;
  Publisher actions_;
  std::unique_ptr<Subscriber> telemetry_;
  std::unique_ptr<Subscriber> pose_;
  std::optional<rl::Policy> policy_;
  std::atomic<RolloutState> state_{RolloutState::idle};
  std::atomic<std::uint64_t> actions_sent_{0};
  const std::atomic<bool>* stop_ = nullptr;
};

// ----------------------------------------------------------- train client

struct RemoteConfig {
  Endpoint server;
  int retries = 5;
  Millis reply_timeout{120000};
  Millis backoff{500};
  std::function<void(const std::string&)> log;
};

class RemoteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Episode source backed by a rollout server: pushes the current policy,
/// requests one rollout and returns its transitions. Transport failures and
/// aborted episodes are retried with linear backoff.
inline rl::EpisodeSource remote_source(RemoteConfig cfg) {
  auto client = std::make_shared<RequestClient>(cfg.server);
  return [client, cfg](const rl::Policy& policy, const rl::EpisodeRequest& req) {
    const Weights weights{rl::encode_checkpoint(rl::checkpoint_of(policy))};
    RolloutRequest rr{req.task, static_cast<std::uint32_t>(req.length), req.mode, req.seed, req.explore_noise};
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
      if (attempt > 0) {
        if (cfg.log) cfg.log("rollout attempt " + std::to_string(attempt) + " failed: " + last_error + "; retrying");
        std::this_thread::sleep_for(cfg.backoff * attempt);
      }
      try {
        Message reply = client->request(weights, cfg.reply_timeout);
        if (const auto* e = std::get_if<Error>(&reply)) throw RemoteError("weights rejected: " + e->text);
        if (!std::holds_alternative<Ack>(reply)) throw RemoteError("unexpected reply to WEIGHTS");

        reply = client->request(rr, cfg.reply_timeout);
        bool diverged = false;
        if (const auto* e = std::get_if<Error>(&reply)) {
          if (e->code == error_codes::stale) {
            last_error = e->text;
            continue;
          }
          if (e->code != error_codes::diverged) throw RemoteError("rollout failed: " + e->text);
          diverged = true;
          reply = client->receive(cfg.reply_timeout);
        }
        auto* data = std::get_if<EpisodeDataMsg>(&reply);
        if (!data) throw RemoteError("unexpected reply to ROLLOUT_REQUEST");
        const auto n = data->data.transitions.size();
        if (diverged ? (n == 0 || !data->data.diverged()) : n != static_cast<std::size_t>(req.length))
          throw RemoteError("EPISODE_DATA carries " + std::to_string(n) + " transitions for a length " +
                            std::to_string(req.length) + " request");
        return std::move(data->data);
      } catch (const TransportError& e) {
        last_error = e.what();
        client->disconnect();
      } catch (const util::DecodeError& e) {
        last_error = e.what();
        client->disconnect();
      }
    }
    throw TransportError("rollout server " + cfg.server.str() + " failed " + std::to_string(cfg.retries + 1) +
                         " attempts; last error: " + last_error);
  };
}

}  // namespace realant::mesh
