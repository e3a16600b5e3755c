#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "realant/rl/train.hpp"
#include "realant/util/bytes.hpp"

namespace realant::mesh {

/// Frame layout (little-endian):
///
///   length        u32   payload bytes that follow the header
///   version       u8    kProtocolVersion
///   msg_type      u8    MsgType
///   crc32         u32   CRC-32 of version, msg_type and payload
///   payload       length bytes
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MsgType : std::uint8_t {
  weights = 1,
  rollout_request = 2,
  servo_telemetry = 3,
  pose_estimate = 4,
  action = 5,
  episode_data = 6,
  ack = 7,
  error = 8,
};

inline std::string_view msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::weights: return "WEIGHTS";
    case MsgType::rollout_request: return "ROLLOUT_REQUEST";
    case MsgType::servo_telemetry: return "SERVO_TELEMETRY";
    case MsgType::pose_estimate: return "POSE_ESTIMATE";
    case MsgType::action: return "ACTION";
    case MsgType::episode_data: return "EPISODE_DATA";
    case MsgType::ack: return "ACK";
    case MsgType::error: return "ERROR";
  }
  return "?";
}

/// Policy checkpoint bytes in the checkpoint file format.
struct Weights {
  util::Bytes checkpoint;
};

/// Also sent from the rollout server to the control and pose side as the
/// episode reset marker.
struct RolloutRequest {
  tasks::TaskId task = tasks::TaskId::sleep;
  std::uint32_t length = tasks::kEpisodeLength;
  rl::ActMode mode = rl::ActMode::explore;
  std::uint64_t seed = 0;
  double explore_noise = 0.1;
};

namespace telemetry_flags {
inline constexpr std::uint8_t stale_action = 1;  // set-points held past the action timeout
inline constexpr std::uint8_t diverged = 2;      // simulator rejected the last control period
inline constexpr std::uint8_t reset = 4;         // first frame after a reset
inline constexpr std::uint8_t all = 7;
}  // namespace telemetry_flags

struct ServoTelemetry {
  std::array<double, 8> angles{};
  std::array<double, 8> velocities{};
  std::uint64_t timestamp_us = 0;
  std::uint8_t flags = 0;
};

struct PoseEstimate {
  double x = 0.0, y = 0.0, z = 0.0;
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  std::uint64_t timestamp_us = 0;  // capture time
};

struct ActionMsg {
  std::array<double, 8> setpoints{};
  std::uint64_t seq = 0;
};

struct EpisodeDataMsg {
  rl::EpisodeData data;
};

struct Ack {
  std::uint32_t code = 0;
  std::string text;
};

struct Error {
  std::uint32_t code = 0;
  std::string text;
};

namespace error_codes {
inline constexpr std::uint32_t no_policy = 1;
inline constexpr std::uint32_t bad_request = 2;
inline constexpr std::uint32_t diverged = 3;  // EPISODE_DATA follows
inline constexpr std::uint32_t stale = 4;
inline constexpr std::uint32_t busy = 5;
}  // namespace error_codes

using Message = std::variant<Weights, RolloutRequest, ServoTelemetry, PoseEstimate, ActionMsg, EpisodeDataMsg, Ack, Error>;

inline MsgType type_of(const Message& m) {
  static constexpr MsgType kTypes[] = {MsgType::weights,     MsgType::rollout_request, MsgType::servo_telemetry,
                                       MsgType::pose_estimate, MsgType::action,        MsgType::episode_data,
                                       MsgType::ack,          MsgType::error};
  return kTypes[m.index()];
}

inline std::uint32_t frame_crc(std::uint8_t version, std::uint8_t type, const std::uint8_t* payload, std::size_t n) {
  const std::uint8_t head[2] = {version, type};
  uLong c = ::crc32(0L, Z_NULL, 0);
  c = ::crc32(c, head, 2);
  return static_cast<std::uint32_t>(::crc32(c, payload, static_cast<uInt>(n)));
}

namespace detail {

inline void put_doubles(util::ByteWriter& w, const double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) w.f64(v[i]);
}
inline void get_doubles(util::ByteReader& r, double* v, std::size_t n, const char* what) {
  r.need(n * 8, what);
  for (std::size_t i = 0; i < n; ++i) v[i] = r.f64(what);
}

struct PayloadWriter {
  util::ByteWriter& w;

  void operator()(const Weights& m) const { w.raw(m.checkpoint.data(), m.checkpoint.size()); }
  void operator()(const RolloutRequest& m) const {
    w.u8(static_cast<std::uint8_t>(m.task));
    w.u32(m.length);
    w.u8(static_cast<std::uint8_t>(m.mode));
    w.u64(m.seed);
    w.f64(m.explore_noise);
  }
  void operator()(const ServoTelemetry& m) const {
    put_doubles(w, m.angles.data(), 8);
    put_doubles(w, m.velocities.data(), 8);
    w.u64(m.timestamp_us);
    w.u8(m.flags);
  }
  void operator()(const PoseEstimate& m) const {
    const double v[6] = {m.x, m.y, m.z, m.roll, m.pitch, m.yaw};
    put_doubles(w, v, 6);
    w.u64(m.timestamp_us);
  }
  void operator()(const ActionMsg& m) const {
    put_doubles(w, m.setpoints.data(), 8);
    w.u64(m.seq);
  }
  void operator()(const EpisodeDataMsg& m) const {
    const auto& d = m.data;
    w.u32(static_cast<std::uint32_t>(d.state_dim));
    w.u32(static_cast<std::uint32_t>(d.transitions.size()));
    for (const auto& t : d.transitions) {
      if (t.state.size() != static_cast<std::size_t>(d.state_dim) || t.next_state.size() != t.state.size())
        throw std::invalid_argument("transition width does not match state_dim");
      put_doubles(w, t.state.data(), t.state.size());
      put_doubles(w, t.action.data(), tasks::kActionDim);
      w.f64(t.reward);
      put_doubles(w, t.next_state.data(), t.next_state.size());
      w.u8(static_cast<std::uint8_t>((t.done ? 1 : 0) | (t.diverged ? 2 : 0)));
    }
  }
  void operator()(const Ack& m) const {
    w.u32(m.code);
    w.string(m.text);
  }
  void operator()(const Error& m) const {
    w.u32(m.code);
    w.string(m.text);
  }
};

inline Message decode_payload(MsgType type, util::ByteReader& r) {
  switch (type) {
    case MsgType::weights: return Weights{r.rest()};
    case MsgType::rollout_request: {
      RolloutRequest m;
      const std::uint8_t task = r.u8("task id");
      if (task > 3) throw util::DecodeError("unknown task id " + std::to_string(task), r.offset() - 1);
      m.task = static_cast<tasks::TaskId>(task);
      m.length = r.u32("episode length");
      const std::uint8_t mode = r.u8("exploration mode");
      if (mode > 2) throw util::DecodeError("unknown exploration mode " + std::to_string(mode), r.offset() - 1);
      m.mode = static_cast<rl::ActMode>(mode);
      m.seed = r.u64("seed");
      m.explore_noise = r.f64("exploration noise");
      return m;
    }
    case MsgType::servo_telemetry: {
      ServoTelemetry m;
      get_doubles(r, m.angles.data(), 8, "servo angles");
      get_doubles(r, m.velocities.data(), 8, "servo velocities");
      m.timestamp_us = r.u64("timestamp");
      m.flags = r.u8("flags");
      if (m.flags & ~telemetry_flags::all) throw util::DecodeError("unknown telemetry flags", r.offset() - 1);
      return m;
    }
    case MsgType::pose_estimate: {
      PoseEstimate m;
      double v[6];
      get_doubles(r, v, 6, "pose");
      m.x = v[0], m.y = v[1], m.z = v[2], m.roll = v[3], m.pitch = v[4], m.yaw = v[5];
      m.timestamp_us = r.u64("timestamp");
      return m;
    }
    case MsgType::action: {
      ActionMsg m;
      get_doubles(r, m.setpoints.data(), 8, "set-points");
      m.seq = r.u64("sequence number");
      return m;
    }
    case MsgType::episode_data: {
      EpisodeDataMsg m;
      auto& d = m.data;
      const std::uint32_t dim = r.u32("state_dim");
      const std::uint32_t count = r.u32("transition count");
      const std::size_t per = (2 * static_cast<std::size_t>(dim) + tasks::kActionDim + 1) * 8 + 1;
      if (count > 0 && r.remaining() / per < count)
        throw util::DecodeError("transition count exceeds payload", r.offset() - 4);
      d.state_dim = static_cast<int>(dim);
      d.transitions.resize(count);
      for (auto& t : d.transitions) {
        t.state.resize(dim);
        t.next_state.resize(dim);
        get_doubles(r, t.state.data(), dim, "state");
        get_doubles(r, t.action.data(), tasks::kActionDim, "action");
        t.reward = r.f64("reward");
        get_doubles(r, t.next_state.data(), dim, "next state");
        const std::uint8_t f = r.u8("transition flags");
        if (f > 3) throw util::DecodeError("unknown transition flags", r.offset() - 1);
        t.done = f & 1;
        t.diverged = f & 2;
      }
      return m;
    }
    case MsgType::ack: {
      Ack m;
      m.code = r.u32("code");
      m.text = r.string("text");
      return m;
    }
    case MsgType::error: {
      Error m;
      m.code = r.u32("code");
      m.text = r.string("text");
      return m;
    }
  }
  throw util::DecodeError("unknown message type", 5);
}

}  // namespace detail

inline util::Bytes encode(const Message& m) {
  util::ByteWriter w;
  w.u32(0);
  w.u8(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(type_of(m)));
  w.u32(0);
  std::visit(detail::PayloadWriter{w}, m);
  auto& b = w.bytes();
  const std::size_t payload = b.size() - kHeaderSize;
  if (payload > kMaxPayload) throw std::length_error("message payload exceeds the frame limit");
  w.patch_u32(0, static_cast<std::uint32_t>(payload));
  w.patch_u32(6, frame_crc(b[4], b[5], b.data() + kHeaderSize, payload));
  return w.take();
}

struct FrameHeader {
  std::uint32_t length = 0;
  std::uint8_t version = 0;
  MsgType type = MsgType::ack;
  std::uint32_t crc = 0;
};

/// Validates the fixed header; `data` must hold at least kHeaderSize bytes.
inline FrameHeader decode_header(const std::uint8_t* data) {
  util::ByteReader r(data, kHeaderSize);
  FrameHeader h;
  h.length = r.u32("length");
  if (h.length > kMaxPayload) throw util::DecodeError("frame length " + std::to_string(h.length) + " exceeds limit", 0);
  h.version = r.u8("version");
  if (h.version != kProtocolVersion)
    throw util::DecodeError("unsupported protocol version " + std::to_string(h.version), 4);
  const std::uint8_t type = r.u8("msg_type");
  if (type < 1 || type > 8) throw util::DecodeError("unknown msg_type " + std::to_string(type), 5);
  h.type = static_cast<MsgType>(type);
  h.crc = r.u32("crc");
  return h;
}

inline Message decode_payload(const FrameHeader& h, const std::uint8_t* payload) {
  if (frame_crc(h.version, static_cast<std::uint8_t>(h.type), payload, h.length) != h.crc)
    throw util::DecodeError("frame checksum mismatch", 6);
  util::ByteReader r(payload, h.length, kHeaderSize);
  Message m = detail::decode_payload(h.type, r);
  if (!r.done()) throw util::DecodeError("length mismatch: trailing payload bytes", r.offset());
  return m;
}

/// Decodes exactly one frame occupying all of `data`.
inline Message decode(const std::uint8_t* data, std::size_t size) {
  if (size < kHeaderSize) throw util::DecodeError("truncated frame header", size);
  const FrameHeader h = decode_header(data);
  if (h.length != size - kHeaderSize) {
    throw util::DecodeError("length mismatch: header says " + std::to_string(h.length) + ", frame carries " +
                                std::to_string(size - kHeaderSize),
                            0);
  }
  return decode_payload(h, data + kHeaderSize);
}

inline Message decode(const util::Bytes& b) { return decode(b.data(), b.size()); }

}  // namespace realant::mesh
