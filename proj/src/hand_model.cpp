// Hand presets, model validation and hand/simulation archive I/O.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "vibtx/archive.hpp"
#include "vibtx/errors.hpp"
#include "vibtx/transmission_sim.hpp"

namespace vibtx::sim {
namespace {

using namespace layout;

// Joint stiffness is given in the finger frame: x along the finger,
// y lateral (abduction), z flexion (sagittal).
struct JointSpec {
  Vec3 k;
  double zeta;  // damping ratio used to derive per-axis damping
};

struct FingerSpec {
  double tip_mass;
  double proximal_mass;
  JointSpec distal;
  JointSpec metacarpal;
  double yaw;    // splay about z
  double pitch;  // resting curl about y
  double roll;   // about the finger axis; the thumb is opposed
};

struct PresetSpec {
  std::array<FingerSpec, kNumFingers> fingers;
  JointSpec wrist;
  std::array<double, kNumFingers> pad{};  // glove pad stiffness, N/m
};

// Geometry and masses shared by all presets (same reference socket).
constexpr std::array<double, kNumFingers> kTipMass = {0.036, 0.030, 0.032, 0.027, 0.022};
constexpr std::array<double, kNumFingers> kProximalMass = {0.050, 0.042, 0.044, 0.040, 0.034};
constexpr std::array<double, kNumFingers> kYaw = {0.90, 0.15, 0.0, -0.12, -0.25};
constexpr std::array<double, kNumFingers> kPitch = {0.10, 0.10, 0.20, 0.30, 0.40};
constexpr std::array<double, kNumFingers> kRoll = {0.70, 0.0, 0.0, 0.0, 0.0};
constexpr std::array<double, kNumFingers> kFingerY = {0.045, 0.028, 0.008, -0.012, -0.030};
constexpr std::array<double, kNumFingers> kFingerLength = {0.060, 0.085, 0.090, 0.082, 0.068};

constexpr double kPalmMass = 0.12;
constexpr double kWristMass = 0.10;
constexpr std::array<double, kNumSensors> kShellMass = {0.030, 0.035, 0.028, 0.032, 0.030};
constexpr double kSocketBaseMass = 0.15;
constexpr double kSocketRadius = 0.04;

// Socket links, frame (axial, radial, tangential).
constexpr Vec3 kWristShellK = {2.0e4, 4.0e4, 6.0e3};
constexpr std::array<double, kNumSensors> kWristShellScale = {1.0, 0.8, 1.2, 0.9, 1.1};
constexpr Vec3 kShellBaseK = {1.5e4, 2.0e4, 5.0e3};
constexpr double kShellRingK = 3.0e3;
constexpr double kSocketZeta = 0.04;
// Velcro suspension: about 1.5 Hz swing for the whole assembly.
constexpr Vec3 kSuspensionK = {25.0, 25.0, 25.0};
constexpr Vec3 kSuspensionC = {0.4, 0.4, 0.4};

FingerSpec finger(std::size_t f, JointSpec distal, JointSpec metacarpal) {
  return {kTipMass[f], kProximalMass[f], distal, metacarpal, kYaw[f], kPitch[f], kRoll[f]};
}

PresetSpec preset_spec(HandArchetype a) {
  PresetSpec p{};
  switch (a) {
    case HandArchetype::CH: {
      // Passive plastic hand: continuous joints, uniformly stiff.
      const JointSpec d{{3.0e4, 2.0e4, 2.0e4}, 0.05};
      const JointSpec m{{4.0e4, 3.0e4, 3.0e4}, 0.05};
      for (std::size_t f = 0; f < kNumFingers; ++f) p.fingers[f] = finger(f, d, m);
      p.wrist = {{6.0e4, 6.0e4, 6.0e4}, 0.05};
      p.pad.fill(2.0e4);
      break;
    }
    case HandArchetype::VP: {
      // Metallic thumb/index/middle; ring and little follow passively.
      const JointSpec rigid_d{{4.0e4, 4.0e4, 4.0e4}, 0.02};
      const JointSpec rigid_m{{5.0e4, 5.0e4, 5.0e4}, 0.02};
      const JointSpec passive_d{{8.0e3, 5.0e3, 4.0e3}, 0.10};
      const JointSpec passive_m{{1.0e4, 6.0e3, 5.0e3}, 0.10};
      for (std::size_t f = 0; f < 3; ++f) p.fingers[f] = finger(f, rigid_d, rigid_m);
      for (std::size_t f = 3; f < kNumFingers; ++f) p.fingers[f] = finger(f, passive_d, passive_m);
      p.wrist = {{7.0e4, 7.0e4, 7.0e4}, 0.03};
      // Thin glove over metal on the active digits.
      p.pad = {4.0e4, 4.0e4, 4.0e4, 1.5e4, 1.5e4};
      break;
    }
    case HandArchetype::IL: {
      // Sagittal play in the fingers, transverse play in the thumb.
      const JointSpec d{{3.0e4, 3.0e4, 3.0e3}, 0.08};
      const JointSpec m{{4.0e4, 4.0e4, 4.0e3}, 0.08};
      for (std::size_t f = 1; f < kNumFingers; ++f) p.fingers[f] = finger(f, d, m);
      p.fingers[0] = finger(0, {{3.0e4, 3.0e3, 3.0e4}, 0.08}, {{4.0e4, 4.0e3, 4.0e4}, 0.08});
      p.wrist = {{5.0e4, 5.0e4, 5.0e4}, 0.08};
      // Thick silicone fingertips.
      p.pad.fill(6.0e3);
      break;
    }
    case HandArchetype::SH: {
      // Elastic ligaments everywhere and a compliant, damped wrist.
      const JointSpec d{{1.5e4, 6.0e3, 2.5e3}, 0.25};
      const JointSpec m{{2.0e4, 8.0e3, 3.0e3}, 0.25};
      for (std::size_t f = 0; f < kNumFingers; ++f) p.fingers[f] = finger(f, d, m);
      p.wrist = {{8.0e3, 8.0e3, 8.0e3}, 0.30};
      p.pad.fill(4.0e3);
      break;
    }
  }
  return p;
}

Vec3 damping_for(const Vec3& k, double zeta, double m_a, double m_b) {
  const double m_eff = m_a * m_b / (m_a + m_b);
  return {2.0 * zeta * std::sqrt(k[0] * m_eff), 2.0 * zeta * std::sqrt(k[1] * m_eff),
          2.0 * zeta * std::sqrt(k[2] * m_eff)};
}

double projected_stiffness(const Link& l, std::size_t axis) {
  double k = 0.0;
  for (std::size_t r = 0; r < 3; ++r) k += l.stiffness[r] * l.frame[r][axis] * l.frame[r][axis];
  return k;
}

void put_vec3(io::PayloadWriter& w, const Vec3& v) {
  for (double x : v) w.put_f64(x);
}

Vec3 get_vec3(io::PayloadReader& r) { return {r.get_f64(), r.get_f64(), r.get_f64()}; }

std::size_t get_index(io::PayloadReader& r) {
  const auto v = r.get_u64();
  if (v > (1u << 20)) throw FormatError("index out of range in payload");
  return static_cast<std::size_t>(v);
}

}  // namespace

Mat3 frame_from_angles(double yaw, double pitch, double roll) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cr = std::cos(roll), sr = std::sin(roll);
  // R = Rz(yaw) * Ry(pitch) * Rx(roll) maps local to global; the frame rows
  // are the columns of R.
  const double r[3][3] = {
      {cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
      {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
      {-sp, cp * sr, cp * cr},
  };
  Mat3 m{};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) m[i][j] = r[j][i];
  }
  return m;
}

bool is_rotation(const Mat3& m, double tol) {
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < 3; ++k) d += m[i][k] * m[j][k];
      if (std::abs(d - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  }
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  return std::abs(det - 1.0) <= tol;
}

void validate_hand_model(const HandModel& model) {
  const auto& net = model.network;
  validate_network(net);
  const auto n = net.bodies.size();

  const auto check_distinct = [n](const auto& idx, const char* what) {
    std::vector<std::size_t> v(idx.begin(), idx.end());
    std::sort(v.begin(), v.end());
    if (std::adjacent_find(v.begin(), v.end()) != v.end() || (!v.empty() && v.back() >= n)) {
      throw InvalidArgument(std::string(what) + " indices must be distinct valid bodies");
    }
  };
  check_distinct(model.sensor_nodes, "sensor node");
  check_distinct(model.finger_tips, "fingertip");
  for (auto l : model.distal_joint) {
    if (l >= net.links.size()) throw InvalidArgument("distal joint index out of range");
  }
  for (auto l : model.proximal_joint) {
    if (l >= net.links.size()) throw InvalidArgument("metacarpal joint index out of range");
  }
  if (model.wrist_link >= net.links.size()) throw InvalidArgument("wrist link index out of range");
  for (double k : model.pad_stiffness) {
    if (!(k > 0.0) || !std::isfinite(k)) throw InvalidArgument("pad stiffness must be positive and finite");
  }

  // Connectivity over links (union-find).
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  const auto find = [&parent](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& l : net.links) parent[find(l.a)] = find(l.b);
  for (std::size_t i = 1; i < n; ++i) {
    if (find(i) != find(0)) throw InvalidArgument("hand model graph is not connected");
  }
}

HandModel build_hand_model(HandArchetype archetype) {
  const PresetSpec spec = preset_spec(archetype);
  HandModel m;
  m.archetype = archetype;
  m.preset_version = kPresetVersion;
  auto& net = m.network;
  net.bodies.resize(kBodyCount);

  constexpr std::array<const char*, kNumFingers> names = {"thumb", "index", "middle", "ring", "little"};
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    const auto& fs = spec.fingers[f];
    const double base_x = f == 0 ? 0.07 : 0.10;
    net.bodies[kTipBase + f] = {std::string(names[f]) + "_tip", fs.tip_mass,
                                {base_x + kFingerLength[f], kFingerY[f], 0.0}};
    net.bodies[kProximalBase + f] = {std::string(names[f]) + "_proximal", fs.proximal_mass,
                                     {base_x + 0.45 * kFingerLength[f], kFingerY[f], 0.0}};
  }
  net.bodies[kPalm] = {"palm", kPalmMass, {0.06, 0.0, 0.0}};
  net.bodies[kWrist] = {"wrist", kWristMass, {0.0, 0.0, 0.0}};
  for (std::size_t j = 0; j < kNumSensors; ++j) {
    const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * static_cast<double>(j) / 5.0;
    m.sensor_angles[j] = angle;
    net.bodies[kShellBase + j] = {"shell_" + std::to_string(j), kShellMass[j],
                                  {-0.06, kSocketRadius * std::cos(angle), kSocketRadius * std::sin(angle)}};
    m.sensor_nodes[j] = kShellBase + j;
  }
  net.bodies[kSocketBase] = {"socket_base", kSocketBaseMass, {-0.20, 0.0, 0.0}};

  const auto add_link = [&](std::size_t a, std::size_t b, const Vec3& k, double zeta, const Mat3& frame) {
    net.links.push_back({a, b, k, damping_for(k, zeta, net.bodies[a].mass, net.bodies[b].mass), frame});
    return net.links.size() - 1;
  };

  for (std::size_t f = 0; f < kNumFingers; ++f) {
    const auto& fs = spec.fingers[f];
    const Mat3 frame = frame_from_angles(fs.yaw, fs.pitch, fs.roll);
    m.finger_tips[f] = kTipBase + f;
    m.pad_stiffness[f] = spec.pad[f];
    m.distal_joint[f] = add_link(kProximalBase + f, kTipBase + f, fs.distal.k, fs.distal.zeta, frame);
    m.proximal_joint[f] = add_link(kPalm, kProximalBase + f, fs.metacarpal.k, fs.metacarpal.zeta, frame);
  }
  m.wrist_link = add_link(kWrist, kPalm, spec.wrist.k, spec.wrist.zeta, kIdentityFrame);

  for (std::size_t j = 0; j < kNumSensors; ++j) {
    const Mat3 radial = frame_from_angles(0.0, 0.0, m.sensor_angles[j]);
    Vec3 k = kWristShellK;
    for (double& v : k) v *= kWristShellScale[j];
    add_link(kWrist, kShellBase + j, k, kSocketZeta, radial);
    add_link(kShellBase + j, kSocketBase, kShellBaseK, kSocketZeta, radial);
    add_link(kShellBase + j, kShellBase + (j + 1) % kNumSensors, {kShellRingK, kShellRingK, kShellRingK},
             kSocketZeta, kIdentityFrame);
  }

  net.ground_links.push_back({kSocketBase, kSuspensionK, kSuspensionC});
  net.ground_links.push_back({kWrist, kSuspensionK, kSuspensionC});

  validate_hand_model(m);
  return m;
}

double finger_joint_stiffness(const HandModel& model, Finger finger, std::size_t axis) {
  if (axis > 2) throw InvalidArgument("axis must be 0, 1 or 2");
  const auto f = index_of(finger);
  const double k1 = projected_stiffness(model.network.links.at(model.distal_joint[f]), axis);
  const double k2 = projected_stiffness(model.network.links.at(model.proximal_joint[f]), axis);
  if (k1 <= 0.0 || k2 <= 0.0) return 0.0;
  return 1.0 / (1.0 / k1 + 1.0 / k2);
}

double wrist_stiffness(const HandModel& model, std::size_t axis) {
  if (axis > 2) throw InvalidArgument("axis must be 0, 1 or 2");
  return projected_stiffness(model.network.links.at(model.wrist_link), axis);
}

HandModel scale_joint_stiffness(const HandModel& model, double factor) {
  if (!(factor >= 0.0)) throw InvalidArgument("stiffness factor must be >= 0");
  HandModel out = model;
  const auto scale = [&](std::size_t idx) {
    for (double& k : out.network.links[idx].stiffness) k *= factor;
  };
  for (auto l : model.distal_joint) scale(l);
  for (auto l : model.proximal_joint) scale(l);
  scale(model.wrist_link);
  return out;
}

// ---------------------------------------------------------------------------
// Hand model files

void save_hand_model(const HandModel& model, const std::filesystem::path& path) {
  validate_hand_model(model);
  io::Archive a;
  a.kind = "hand-model";
  a.format_version = kHandModelFormatVersion;
  a.manifest.set("archetype", std::string(to_string(model.archetype)));
  a.manifest.set("preset_version", model.preset_version);
  std::string names;
  for (const auto& b : model.network.bodies) {
    if (b.name.find(',') != std::string::npos) throw InvalidArgument("body names must not contain ','");
    if (!names.empty()) names += ',';
    names += b.name;
  }
  a.manifest.set("body_names", names);

  io::PayloadWriter w;
  const auto& net = model.network;
  w.put_u64(net.bodies.size());
  for (const auto& b : net.bodies) {
    w.put_f64(b.mass);
    put_vec3(w, b.rest_position);
  }
  w.put_u64(net.links.size());
  for (const auto& l : net.links) {
    w.put_u64(l.a);
    w.put_u64(l.b);
    put_vec3(w, l.stiffness);
    put_vec3(w, l.damping);
    for (const auto& row : l.frame) put_vec3(w, row);
  }
  w.put_u64(net.ground_links.size());
  for (const auto& g : net.ground_links) {
    w.put_u64(g.body);
    put_vec3(w, g.stiffness);
    put_vec3(w, g.damping);
  }
  for (std::size_t j = 0; j < kNumSensors; ++j) {
    w.put_u64(model.sensor_nodes[j]);
    w.put_f64(model.sensor_angles[j]);
  }
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    w.put_u64(model.finger_tips[f]);
    w.put_f64(model.pad_stiffness[f]);
    w.put_u64(model.distal_joint[f]);
    w.put_u64(model.proximal_joint[f]);
  }
  w.put_u64(model.wrist_link);
  a.payload = w.release();
  io::write_archive(path, a);
}

HandModel load_hand_model(const std::filesystem::path& path) {
  const io::Archive a = io::read_archive(path, "hand-model", kHandModelFormatVersion);
  HandModel m;
  const auto arch = parse_archetype(a.manifest.require("archetype"));
  if (!arch) throw FormatError("unknown archetype in hand model");
  m.archetype = *arch;
  m.preset_version = static_cast<int>(a.manifest.require_int("preset_version"));

  std::vector<std::string> names;
  {
    const std::string all = a.manifest.require("body_names");
    std::size_t pos = 0;
    while (pos <= all.size()) {
      const auto comma = all.find(',', pos);
      names.push_back(all.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }

  io::PayloadReader r(a.payload);
  auto& net = m.network;
  net.bodies.resize(get_index(r));
  if (names.size() != net.bodies.size()) throw FormatError("body name count does not match payload");
  for (std::size_t i = 0; i < net.bodies.size(); ++i) {
    net.bodies[i].name = names[i];
    net.bodies[i].mass = r.get_f64();
    net.bodies[i].rest_position = get_vec3(r);
  }
  net.links.resize(get_index(r));
  for (auto& l : net.links) {
    l.a = get_index(r);
    l.b = get_index(r);
    l.stiffness = get_vec3(r);
    l.damping = get_vec3(r);
    for (auto& row : l.frame) row = get_vec3(r);
  }
  net.ground_links.resize(get_index(r));
  for (auto& g : net.ground_links) {
    g.body = get_index(r);
    g.stiffness = get_vec3(r);
    g.damping = get_vec3(r);
  }
  for (std::size_t j = 0; j < kNumSensors; ++j) {
    m.sensor_nodes[j] = get_index(r);
    m.sensor_angles[j] = r.get_f64();
  }
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    m.finger_tips[f] = get_index(r);
    m.pad_stiffness[f] = r.get_f64();
    m.distal_joint[f] = get_index(r);
    m.proximal_joint[f] = get_index(r);
  }
  m.wrist_link = get_index(r);
  r.expect_end();
  validate_hand_model(m);
  return m;
}

// ---------------------------------------------------------------------------
// Simulation archives

namespace {

void write_impactor(io::Manifest& m, const ImpactorConfig& c) {
  m.set("impactor_mode", std::string(c.mode == ImpactorMode::Hammer ? "hammer" : "pendulum"));
  m.set("impactor_mass", c.mass);
  m.set("impactor_speed", c.speed);
  m.set("release_angle_deg", c.release_angle_deg);
  m.set("arm_length", c.arm_length);
  m.set("contact_stiffness", c.contact_stiffness);
  m.set("contact_damping", c.contact_damping);
  m.set("velocity_jitter", c.velocity_jitter);
  m.set("direction_jitter_deg", c.direction_jitter_deg);
}

ImpactorConfig read_impactor(const io::Manifest& m) {
  ImpactorConfig c;
  const auto mode = m.require("impactor_mode");
  if (mode == "hammer") {
    c.mode = ImpactorMode::Hammer;
  } else if (mode == "pendulum") {
    c.mode = ImpactorMode::Pendulum;
  } else {
    throw FormatError("unknown impactor mode '" + mode + "'");
  }
  c.mass = m.require_double("impactor_mass");
  c.speed = m.require_double("impactor_speed");
  c.release_angle_deg = m.require_double("release_angle_deg");
  c.arm_length = m.require_double("arm_length");
  c.contact_stiffness = m.require_double("contact_stiffness");
  c.contact_damping = m.require_double("contact_damping");
  c.velocity_jitter = m.require_double("velocity_jitter");
  c.direction_jitter_deg = m.require_double("direction_jitter_deg");
  return c;
}

void write_options(io::Manifest& m, const SimOptions& o) {
  m.set("sample_rate", o.sample_rate);
  m.set("duration", o.duration);
  m.set("pre_contact", o.pre_contact);
  m.set("internal_step", o.internal_step);
  m.set("noise_std", o.noise_std);
  m.set("clip", std::string(o.clip ? "true" : "false"));
  m.set("clip_level", o.clip_level);
  m.set("comm_error_rate", o.comm_error_rate);
}

SimOptions read_options(const io::Manifest& m) {
  SimOptions o;
  o.sample_rate = m.require_double("sample_rate");
  o.duration = m.require_double("duration");
  o.pre_contact = m.require_double("pre_contact");
  o.internal_step = m.require_double("internal_step");
  o.noise_std = m.require_double("noise_std");
  o.clip = m.require("clip") == "true";
  o.clip_level = m.require_double("clip_level");
  o.comm_error_rate = m.require_double("comm_error_rate");
  return o;
}

std::vector<double> read_doubles(io::PayloadReader& r, std::size_t n) {
  std::vector<double> v(n);
  r.get_f64s(v);
  return v;
}

}  // namespace

void save_sim_archive(const SimArchive& archive, const std::filesystem::path& path) {
  io::Archive a;
  a.kind = "sim-archive";
  a.format_version = kSimArchiveFormatVersion;
  a.manifest.set("archetype", std::string(to_string(archive.hand)));
  a.manifest.set("seed", archive.seed);
  a.manifest.set("n_outputs", static_cast<std::uint64_t>(archive.outputs.size()));
  write_impactor(a.manifest, archive.impactor);
  write_options(a.manifest, archive.options);

  // Per output: i64 finger, f64 speed, u64 seed, f64 internal_step,
  // f64 force rate, u64 n, fx[n], fy[n], fz[n], then per sensor:
  // i64 sensor_id, f64 rate, u64 n, ax[n], ay[n], az[n], i64 valid[n].
  io::PayloadWriter w;
  w.put_u64(archive.outputs.size());
  for (const auto& o : archive.outputs) {
    w.put_i64(static_cast<std::int64_t>(o.finger));
    w.put_f64(o.meta.impact_speed);
    w.put_u64(o.meta.seed);
    w.put_f64(o.internal_step);
    w.put_f64(o.force.sample_rate());
    w.put_u64(o.force.size());
    w.put_f64s(o.force.fx());
    w.put_f64s(o.force.fy());
    w.put_f64s(o.force.fz());
    w.put_u64(o.sensor_traces.size());
    for (const auto& t : o.sensor_traces) {
      w.put_i64(t.sensor_id());
      w.put_f64(t.sample_rate());
      w.put_u64(t.size());
      w.put_f64s(t.ax());
      w.put_f64s(t.ay());
      w.put_f64s(t.az());
      for (bool v : t.valid_mask()) w.put_i64(v ? 1 : 0);
    }
  }
  a.payload = w.release();
  io::write_archive(path, a);
}

SimArchive load_sim_archive(const std::filesystem::path& path) {
  const io::Archive a = io::read_archive(path, "sim-archive", kSimArchiveFormatVersion);
  SimArchive out;
  const auto arch = parse_archetype(a.manifest.require("archetype"));
  if (!arch) throw FormatError("unknown archetype in simulation archive");
  out.hand = *arch;
  out.seed = a.manifest.require_u64("seed");
  out.impactor = read_impactor(a.manifest);
  out.options = read_options(a.manifest);

  io::PayloadReader r(a.payload);
  const auto n = r.get_u64();
  if (n > r.remaining() / 8) throw FormatError("output count exceeds payload size");
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto finger = r.get_i64();
    if (finger < 0 || finger >= static_cast<std::int64_t>(kNumFingers)) throw FormatError("bad finger code");
    ImpactMeta meta;
    meta.impact_speed = r.get_f64();
    meta.seed = r.get_u64();
    const double step = r.get_f64();
    const double force_rate = r.get_f64();
    const auto nf = r.get_u64();
    if (nf > r.remaining() / 24) throw FormatError("force length exceeds payload size");
    auto fx = read_doubles(r, nf);
    auto fy = read_doubles(r, nf);
    auto fz = read_doubles(r, nf);
    SimOutput o{ForceTrace(force_rate, std::move(fx), std::move(fy), std::move(fz)), {}, step,
                static_cast<Finger>(finger), meta};
    const auto n_sensors = r.get_u64();
    if (n_sensors > kNumSensors) throw FormatError("too many sensor traces");
    for (std::uint64_t j = 0; j < n_sensors; ++j) {
      const auto id = static_cast<int>(r.get_i64());
      const double rate = r.get_f64();
      const auto ns = r.get_u64();
      if (ns > r.remaining() / 32) throw FormatError("trace length exceeds payload size");
      auto ax = read_doubles(r, ns);
      auto ay = read_doubles(r, ns);
      auto az = read_doubles(r, ns);
      std::vector<bool> valid(ns);
      for (std::size_t k = 0; k < ns; ++k) valid[k] = r.get_i64() != 0;
      o.sensor_traces.emplace_back(id, rate, std::move(ax), std::move(ay), std::move(az), std::move(valid));
    }
    out.outputs.push_back(std::move(o));
  }
  r.expect_end();
  return out;
}

}  // namespace vibtx::sim
