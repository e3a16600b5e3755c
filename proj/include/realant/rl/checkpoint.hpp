#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "realant/rl/agent.hpp"
#include "realant/util/bytes.hpp"

namespace realant::rl {

/// Checkpoint layout (all integers and floats little-endian):
///
///   "RANT"                      4 bytes
///   format version              u32 (1)
///   algorithm id                u8  (0 td3, 1 sac, 2 redq)
///   dense flag                  u8
///   input_dim                   u32 (stacked state width)
///   action_dim                  u32
///   hidden width                u32
///   hidden layer count          u32
///   critic count                u32 (0 for a policy-only checkpoint)
///   actor parameters            f32[...]
///   critic parameters           f32[...] per critic
///   log temperature             f32, present iff critic count > 0
///
/// Each network's parameters are its layers in order, each layer as the
/// column-major weight block followed by the bias.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointDescriptor {
  Algorithm algorithm = Algorithm::td3;
  bool dense = true;
  int input_dim = 0;
  int action_dim = tasks::kActionDim;
  int hidden = 256;
  int hidden_layers = 3;
  int n_critics = 0;

  bool same_architecture(const CheckpointDescriptor& o) const {
    return algorithm == o.algorithm && dense == o.dense && input_dim == o.input_dim && action_dim == o.action_dim &&
           hidden == o.hidden && hidden_layers == o.hidden_layers;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "algo=" << algorithm_name(algorithm) << " dense=" << (dense ? 1 : 0) << " input_dim=" << input_dim
       << " action_dim=" << action_dim << " hidden=" << hidden << " layers=" << hidden_layers;
    return os.str();
  }

  static CheckpointDescriptor of(const AlgoConfig& cfg, int state_dim, int n_critics) {
    return {cfg.algorithm, cfg.dense, state_dim, tasks::kActionDim, cfg.hidden, cfg.hidden_layers, n_critics};
  }

  AlgoConfig algo_config() const {
    AlgoConfig c = AlgoConfig::defaults(algorithm);
    c.dense = dense;
    c.hidden = hidden;
    c.hidden_layers = hidden_layers;
    return c;
  }
};

class ArchitectureMismatch : public std::runtime_error {
 public:
  ArchitectureMismatch(const CheckpointDescriptor& expected, const CheckpointDescriptor& found)
      : std::runtime_error("checkpoint architecture mismatch: expected {" + expected.describe() + "}, found {" +
                           found.describe() + "}") {}
};

struct Checkpoint {
  CheckpointDescriptor descriptor;
  Vec<float> actor;
  std::vector<Vec<float>> critics;
  float log_alpha = 0.0f;
};

namespace detail {
inline void write_tensor(util::ByteWriter& w, const Vec<float>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f32(v[i]);
}
inline Vec<float> read_tensor(util::ByteReader& r, std::size_t n) {
  r.need(n * 4, "tensor");
  Vec<float> v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = r.f32();
  return v;
}
}  // namespace detail

inline util::Bytes encode_checkpoint(const Checkpoint& ck) {
  const auto& d = ck.descriptor;
  util::ByteWriter w;
  w.raw("RANT", 4);
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(d.algorithm));
  w.u8(d.dense ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(d.input_dim));
  w.u32(static_cast<std::uint32_t>(d.action_dim));
  w.u32(static_cast<std::uint32_t>(d.hidden));
  w.u32(static_cast<std::uint32_t>(d.hidden_layers));
  w.u32(static_cast<std::uint32_t>(d.n_critics));
  detail::write_tensor(w, ck.actor);
  for (const auto& c : ck.critics) detail::write_tensor(w, c);
  if (d.n_critics > 0) w.f32(ck.log_alpha);
  return w.take();
}

inline Checkpoint decode_checkpoint(const util::Bytes& bytes) {
  util::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::string(magic, 4) != "RANT") throw util::DecodeError("bad checkpoint magic", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw util::DecodeError("unsupported checkpoint version " + std::to_string(version), 4);
  Checkpoint ck;
  auto& d = ck.descriptor;
  const std::uint8_t algo = r.u8("algorithm");
  if (algo > 2) throw util::DecodeError("unknown algorithm id " + std::to_string(algo), r.offset() - 1);
  d.algorithm = static_cast<Algorithm>(algo);
  d.dense = r.u8("dense flag") != 0;
  const auto dim = [&](const char* what, std::uint32_t max) {
    const std::uint32_t v = r.u32(what);
    if (v > max) throw util::DecodeError(std::string("implausible ") + what, r.offset() - 4);
    return static_cast<int>(v);
  };
  d.input_dim = dim("input_dim", 1u << 20);
  d.action_dim = dim("action_dim", 1u << 10);
  d.hidden = dim("hidden width", 1u << 16);
  d.hidden_layers = dim("layer count", 64);
  d.n_critics = dim("critic count", 1024);
  if (d.action_dim != tasks::kActionDim) throw util::DecodeError("action_dim must be 8", 14);
  if (d.input_dim < 1 || d.hidden < 1 || d.hidden_layers < 1) throw util::DecodeError("zero network dimension", 14);
  AlgoConfig cfg = d.algo_config();
  ck.actor = detail::read_tensor(r, cfg.actor_shape(d.input_dim).num_params());
  for (int i = 0; i < d.n_critics; ++i) ck.critics.push_back(detail::read_tensor(r, cfg.critic_shape(d.input_dim).num_params()));
  if (d.n_critics > 0) ck.log_alpha = r.f32("log temperature");
  if (!r.done()) throw util::DecodeError("trailing bytes after checkpoint", r.offset());
  return ck;
}

inline Checkpoint checkpoint_of(const Policy& p) {
  Checkpoint ck;
  const auto& s = p.actor.shape();
  ck.descriptor = {p.algorithm, s.dense, s.input_dim, tasks::kActionDim, s.hidden, s.hidden_layers, 0};
  ck.actor = p.actor.params();
  return ck;
}

inline Checkpoint checkpoint_of(const Agent& agent) {
  Checkpoint ck;
  const auto& n = agent.networks();
  ck.descriptor = CheckpointDescriptor::of(agent.config(), agent.state_dim(), static_cast<int>(n.critics.size()));
  ck.actor = n.actor.params();
  for (const auto& c : n.critics) ck.critics.push_back(c.params());
  ck.log_alpha = n.log_alpha;
  return ck;
}

inline Policy policy_from_checkpoint(const Checkpoint& ck) {
  Policy p;
  p.algorithm = ck.descriptor.algorithm;
  p.actor = Mlp<float>(ck.descriptor.algo_config().actor_shape(ck.descriptor.input_dim));
  p.actor.params() = ck.actor;
  p.actor.set_input_scale(state_input_scale(ck.descriptor.input_dim));
  return p;
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const util::Bytes& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline util::Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return util::Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace realant::rl
