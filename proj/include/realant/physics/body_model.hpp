#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace realant::physics {

inline constexpr int kNumLegs = 4;
inline constexpr int kNumJoints = 8;

/// Error raised for malformed or inconsistent physics configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct JointLimits {
  double lower;
  double upper;

  bool contains(double angle) const { return angle >= lower && angle <= upper; }
  double clamp(double angle) const { return std::fmin(std::fmax(angle, lower), upper); }
  double mid() const { return 0.5 * (lower + upper); }
};

/// Position-servo parameters shared by all eight joints.
struct ServoParams {
  double kp = 8.0;               // N m / rad
  double kd = 0.1;               // N m s / rad
  double torque_limit = 0.75;    // N m, half the AX-12A stall torque
  double velocity_limit = 6.0;   // rad / s
  double armature = 2e-4;        // kg m^2, reflected rotor inertia
};

struct ContactParams {
  double stiffness = 3000.0;            // N / m
  double damping = 10.0;                // N s / m
  double friction_coeff = 0.8;
  double tangential_stiffness = 3000.0;  // N / m, stick-anchor spring
  double tangential_damping = 5.0;       // N s / m
};

/// Geometry, inertia, actuation and contact parameters of the quadruped.
///
/// The torso is a rigid box. Each leg is a hip joint with a vertical axis
/// mounted at a bottom corner of the torso, an upper link swinging in the
/// horizontal plane, and a knee joint with a horizontal axis carrying the
/// lower link. Link masses are point masses at the link midpoints.
///
/// Geometry and mass defaults are placeholders for the real robot's drawings
/// (torso 160 x 160 x 40 mm, upper link 60 mm, lower link 100 mm, 710 g
/// total); every value can be overridden from a config file.
struct BodyModel {
  std::array<double, 3> torso_half_extents{0.08, 0.08, 0.02};
  double upper_link_length = 0.06;
  double lower_link_length = 0.10;
  double torso_mass = 0.47;
  double upper_link_mass = 0.03;
  double lower_link_mass = 0.03;
  ServoParams servo;
  JointLimits hip_limits{-std::numbers::pi / 4, std::numbers::pi / 4};
  JointLimits knee_limits{10.0 * std::numbers::pi / 180.0, 100.0 * std::numbers::pi / 180.0};
  ContactParams contact;
  double gravity = 9.81;
  double substep = 0.001;

  double total_mass() const {
    return torso_mass + kNumLegs * (upper_link_mass + lower_link_mass);
  }

  /// Limits of joint `j` in the hip/knee interleaved joint order.
  const JointLimits& limits(int j) const { return (j % 2 == 0) ? hip_limits : knee_limits; }

  /// Throws ConfigError naming the first violated invariant.
  void validate() const {
    auto positive = [](double v, const char* key) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(key) + " must be positive");
    };
    positive(torso_half_extents[0], "torso_half_x");
    positive(torso_half_extents[1], "torso_half_y");
    positive(torso_half_extents[2], "torso_half_z");
    positive(upper_link_length, "upper_link_length");
    positive(lower_link_length, "lower_link_length");
    positive(torso_mass, "torso_mass");
    positive(upper_link_mass, "upper_link_mass");
    positive(lower_link_mass, "lower_link_mass");
    positive(servo.kp, "servo_kp");
    if (servo.kd < 0.0) throw ConfigError("servo_kd must be non-negative");
    positive(servo.torque_limit, "servo_torque_limit");
    positive(servo.velocity_limit, "servo_velocity_limit");
    if (servo.armature < 0.0) throw ConfigError("armature must be non-negative");
    if (!(hip_limits.lower < hip_limits.upper)) throw ConfigError("hip_limit_lower must be below hip_limit_upper");
    if (!(knee_limits.lower < knee_limits.upper)) throw ConfigError("knee_limit_lower must be below knee_limit_upper");
    positive(contact.stiffness, "contact_stiffness");
    if (contact.damping < 0.0) throw ConfigError("contact_damping must be non-negative");
    if (contact.friction_coeff < 0.0) throw ConfigError("friction_coeff must be non-negative");
    positive(contact.tangential_stiffness, "tangential_stiffness");
    if (contact.tangential_damping < 0.0) throw ConfigError("tangential_damping must be non-negative");
    if (gravity < 0.0) throw ConfigError("gravity must be non-negative");
    positive(substep, "substep");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& text, const std::string& key) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("invalid number for " + key + ": '" + text + "'");
  return v;
}

using FieldTable = std::map<std::string, std::function<double&(BodyModel&)>, std::less<>>;

inline const FieldTable& field_table() {
  static const FieldTable table = {
      {"torso_half_x", [](BodyModel& m) -> double& { return m.torso_half_extents[0]; }},
      {"torso_half_y", [](BodyModel& m) -> double& { return m.torso_half_extents[1]; }},
      {"torso_half_z", [](BodyModel& m) -> double& { return m.torso_half_extents[2]; }},
      {"upper_link_length", [](BodyModel& m) -> double& { return m.upper_link_length; }},
      {"lower_link_length", [](BodyModel& m) -> double& { return m.lower_link_length; }},
      {"torso_mass", [](BodyModel& m) -> double& { return m.torso_mass; }},
      {"upper_link_mass", [](BodyModel& m) -> double& { return m.upper_link_mass; }},
      {"lower_link_mass", [](BodyModel& m) -> double& { return m.lower_link_mass; }},
      {"servo_kp", [](BodyModel& m) -> double& { return m.servo.kp; }},
      {"servo_kd", [](BodyModel& m) -> double& { return m.servo.kd; }},
      {"servo_torque_limit", [](BodyModel& m) -> double& { return m.servo.torque_limit; }},
      {"servo_velocity_limit", [](BodyModel& m) -> double& { return m.servo.velocity_limit; }},
      {"armature", [](BodyModel& m) -> double& { return m.servo.armature; }},
      {"hip_limit_lower", [](BodyModel& m) -> double& { return m.hip_limits.lower; }},
      {"hip_limit_upper", [](BodyModel& m) -> double& { return m.hip_limits.upper; }},
      {"knee_limit_lower", [](BodyModel& m) -> double& { return m.knee_limits.lower; }},
      {"knee_limit_upper", [](BodyModel& m) -> double& { return m.knee_limits.upper; }},
      {"contact_stiffness", [](BodyModel& m) -> double& { return m.contact.stiffness; }},
      {"contact_damping", [](BodyModel& m) -> double& { return m.contact.damping; }},
      {"friction_coeff", [](BodyModel& m) -> double& { return m.contact.friction_coeff; }},
      {"tangential_stiffness", [](BodyModel& m) -> double& { return m.contact.tangential_stiffness; }},
      {"tangential_damping", [](BodyModel& m) -> double& { return m.contact.tangential_damping; }},
      {"gravity", [](BodyModel& m) -> double& { return m.gravity; }},
      {"substep", [](BodyModel& m) -> double& { return m.substep; }},
  };
  return table;
}

}  // namespace detail

inline constexpr int kConfigFormatVersion = 1;

/// Parses a physics config: one `key = value` per line, `#` starts a comment.
///
/// `format_version` is mandatory; all other keys are optional and default to
/// the BodyModel member initializers. `total_mass`, when present, must match
/// the sum of the body masses within 1e-9 kg. Unknown keys are rejected.
inline BodyModel load_model(std::istream& in) {
  BodyModel model;
  bool have_version = false;
  double total_mass = std::nan("");
  std::map<std::string, int> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string body = detail::trim(line);
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(std::string_view(body).substr(0, eq));
    std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (seen[key]++) throw ConfigError("duplicate key " + key);
    if (key == "format_version") {
      if (detail::parse_double(value, key) != kConfigFormatVersion)
        throw ConfigError("unsupported format_version " + value);
      have_version = true;
      continue;
    }
    if (key == "total_mass") {
      total_mass = detail::parse_double(value, key);
      continue;
    }
    const auto& table = detail::field_table();
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown key " + key);
    it->second(model) = detail::parse_double(value, key);
  }
  if (!have_version) throw ConfigError("missing mandatory key format_version");
  model.validate();
  if (!std::isnan(total_mass) && std::fabs(total_mass - model.total_mass()) > 1e-9)
    throw ConfigError("total_mass " + detail::format_double(total_mass) + " does not match sum of body masses " +
                      detail::format_double(model.total_mass()));
  return model;
}

inline BodyModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open physics config " + path);
  return load_model(in);
}

inline BodyModel load_model_string(const std::string& text) {
  std::istringstream in(text);
  return load_model(in);
}

/// Stable text dump of every model parameter. The output is itself a valid
/// config that reloads to an identical model.
inline std::string model_summary(const BodyModel& model) {
  std::ostringstream out;
  out << "format_version = " << kConfigFormatVersion << "\n";
  BodyModel copy = model;
  for (const auto& [key, field] : detail::field_table()) {
    out << key << " = " << detail::format_double(field(copy)) << "\n";
  }
  out << "total_mass = " << detail::format_double(model.total_mass()) << "\n";
  return out.str();
}

}  // namespace realant::physics
