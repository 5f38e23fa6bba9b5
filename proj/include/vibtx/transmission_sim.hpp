#pragma once

// Lumped-parameter model of impact vibration travelling from a struck
// fingertip through the hand and wrist into five socket shell nodes.
//
// State is expressed as small displacements about the rest configuration.
// Links are spring-dampers with independent stiffness along the three axes
// of a per-link frame (finger joints follow the finger, socket links are
// radial/tangential).
// Axis convention: x runs along the forearm towards the fingers, y across
// the palm (thumb side positive), z is the palm normal, so impacts
// perpendicular to the coronal hand plane act along z.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vibtx/signal_model.hpp"

namespace vibtx::sim {

using Vec3 = std::array<double, 3>;
/// Rows are the local axes expressed in global coordinates.
using Mat3 = std::array<Vec3, 3>;

inline constexpr Mat3 kIdentityFrame = {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};

/// Local frame rotated by roll (about x), then pitch (about y), then yaw
/// (about z), angles in radians.
Mat3 frame_from_angles(double yaw, double pitch, double roll);
bool is_rotation(const Mat3& m, double tol = 1e-9);

inline constexpr std::size_t kAxisX = 0;
inline constexpr std::size_t kAxisY = 1;
inline constexpr std::size_t kAxisZ = 2;
/// Direction of the nominal impact.
inline constexpr std::size_t kImpactAxis = kAxisZ;

struct Body {
  std::string name;
  double mass = 0.0;          ///< kg
  Vec3 rest_position{};       ///< m; informational, dynamics use displacements

  bool operator==(const Body&) const = default;
};

/// Spring-damper between two bodies. Stiffness and damping act per axis of
/// the link's local frame: with R = frame and d = u_b - u_a, the force on
/// `a` is R^T (k .* (R d) + c .* (R d')). The identity frame gives plain
/// per-global-axis springs.
struct Link {
  std::size_t a = 0;
  std::size_t b = 0;
  Vec3 stiffness{};  ///< N/m per local axis
  Vec3 damping{};    ///< N*s/m per local axis
  Mat3 frame = kIdentityFrame;

  bool operator==(const Link&) const = default;
};

/// Spring-damper from a body to the fixed frame (suspension loops).
struct GroundLink {
  std::size_t body = 0;
  Vec3 stiffness{};
  Vec3 damping{};

  bool operator==(const GroundLink&) const = default;
};

struct MassSpringNetwork {
  std::vector<Body> bodies;
  std::vector<Link> links;
  std::vector<GroundLink> ground_links;

  bool operator==(const MassSpringNetwork&) const = default;
};

/// Throws InvalidArgument on non-positive mass, negative or non-finite
/// coefficients, or out-of-range body indices.
void validate_network(const MassSpringNetwork& net);

struct NetworkState {
  std::vector<Vec3> displacement;
  std::vector<Vec3> velocity;

  static NetworkState at_rest(std::size_t n_bodies);
};

/// Fixed-step semi-implicit (symplectic) Euler.
class Integrator {
 public:
  Integrator(const MassSpringNetwork& net, double step);

  [[nodiscard]] double step_size() const noexcept { return dt_; }

  /// Internal spring-damper forces for `state`, written into `forces`.
  void compute_forces(const NetworkState& state, std::span<Vec3> forces) const;

  /// Advance one step; `external` (may be empty) is added to internal forces.
  /// Returns the accelerations used for the velocity update via `accel`
  /// when it is non-empty.
  void step(NetworkState& state, std::span<const Vec3> external, std::span<Vec3> accel = {}) const;

  /// Kinetic energy plus potential energy stored in links and ground links.
  [[nodiscard]] double mechanical_energy(const NetworkState& state) const;

 private:
  const MassSpringNetwork* net_;
  double dt_;
  mutable std::vector<Vec3> scratch_;
};

// ---------------------------------------------------------------------------
// Hand models

/// Body layout shared by every shipped preset.
namespace layout {
inline constexpr std::size_t kTipBase = 0;        // 0..4  fingertips, by Finger
inline constexpr std::size_t kProximalBase = 5;   // 5..9  proximal phalanges
inline constexpr std::size_t kPalm = 10;
inline constexpr std::size_t kWrist = 11;
inline constexpr std::size_t kShellBase = 12;     // 12..16 socket shell nodes (sensors)
inline constexpr std::size_t kSocketBase = 17;
inline constexpr std::size_t kBodyCount = 18;
}  // namespace layout

struct HandModel {
  HandArchetype archetype = HandArchetype::CH;
  MassSpringNetwork network;
  std::array<std::size_t, kNumSensors> sensor_nodes{};
  /// Sensor mounting angle about the forearm (x) axis, radians.
  std::array<double, kNumSensors> sensor_angles{};
  std::array<std::size_t, kNumFingers> finger_tips{};
  /// Glove/fingertip pad stiffness (N/m), in series with the impactor's
  /// contact stiffness.
  std::array<double, kNumFingers> pad_stiffness{};
  /// Link indices of each finger's distal and metacarpal joints.
  std::array<std::size_t, kNumFingers> distal_joint{};
  std::array<std::size_t, kNumFingers> proximal_joint{};
  std::size_t wrist_link = 0;
  int preset_version = 0;

  bool operator==(const HandModel&) const = default;
};

inline constexpr int kPresetVersion = 4;
inline constexpr int kHandModelFormatVersion = 1;

/// Throws InvalidArgument when the graph is disconnected, a mass is not
/// positive, a stiffness is negative, or sensor/fingertip indices are invalid.
void validate_hand_model(const HandModel& model);

/// The shipped calibrated preset for an archetype.
HandModel build_hand_model(HandArchetype archetype);

/// Series stiffness of a finger's distal and metacarpal joints along `axis`.
double finger_joint_stiffness(const HandModel& model, Finger finger, std::size_t axis);
double wrist_stiffness(const HandModel& model, std::size_t axis);

/// Multiply the stiffness of every finger joint and the wrist by `factor`.
HandModel scale_joint_stiffness(const HandModel& model, double factor);

void save_hand_model(const HandModel& model, const std::filesystem::path& path);
HandModel load_hand_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Impacts

enum class ImpactorMode : std::uint8_t { Hammer = 0, Pendulum };

struct ImpactorConfig {
  ImpactorMode mode = ImpactorMode::Hammer;
  double mass = 0.13;                ///< kg
  double speed = 0.35;               ///< m/s, hammer only
  double release_angle_deg = 3.0;    ///< pendulum only
  double arm_length = 0.35;          ///< m, pendulum only
  double contact_stiffness = 1.0e5;  ///< N/m, impactor head; in series with the finger pad
  double contact_damping = 2.0;      ///< N*s/m
  double velocity_jitter = 0.0;      ///< relative std-dev of speed
  double direction_jitter_deg = 0.0; ///< std-dev of tilt away from the impact axis

  static ImpactorConfig hammer();
  static ImpactorConfig pendulum();

  /// Nominal speed at contact (before jitter).
  [[nodiscard]] double nominal_speed() const;
};

/// Throws InvalidArgument when mass <= 0, the release angle is outside
/// (0, 90) degrees, or a jitter is negative.
void validate_impactor(const ImpactorConfig& cfg);

/// Contact stiffness seen by an impactor striking `finger`: the impactor
/// head in series with the finger pad.
double effective_contact_stiffness(const HandModel& model, const ImpactorConfig& impactor, Finger finger);

struct SimOptions {
  double sample_rate = kDefaultSampleRate;
  double duration = 0.55;         ///< s of recorded signal
  double pre_contact = 0.1;       ///< s of free flight before nominal contact
  double internal_step = 5e-5;    ///< s
  double noise_std = 0.02;        ///< m/s^2, additive Gaussian per axis
  bool clip = false;
  double clip_level = 156.9;      ///< m/s^2 (16 g)
  double comm_error_rate = 0.0;   ///< probability a sample is flagged invalid
};

struct SimOutput {
  ForceTrace force;                        ///< on the fingertip, at the internal rate
  std::vector<AxisTraceSet> sensor_traces; ///< one per sensor node, sensor frame
  double internal_step = 0.0;
  Finger finger = Finger::Thumb;
  ImpactMeta meta;

  bool operator==(const SimOutput&) const = default;
};

/// Called after every internal step with the time, the full state
/// (impactor is the last body) and whether the contact spring is engaged.
using StepObserver = std::function<void(double t, const NetworkState& state, bool in_contact)>;

/// Pure function of its arguments. Throws NumericalError when any state
/// magnitude exceeds 1e9.
SimOutput simulate_impact(const HandModel& model, const ImpactorConfig& impactor, Finger finger,
                          std::uint64_t seed, const SimOptions& options = {},
                          const StepObserver& observer = {});

struct ForceShape {
  double peak = 0.0;   ///< N, global max |F_z|
  double width = 0.0;  ///< s, full width at half maximum of the first contact episode
};

/// Throws InvalidArgument("no contact detected") when F_z is identically zero.
ForceShape impact_force_shape_stats(const ForceTrace& force);
ForceShape impact_force_shape_stats(const SimOutput& out);

/// Seed of repetition `rep` for `finger` inside batch_simulate.
std::uint64_t impact_seed(std::uint64_t batch_seed, Finger finger, std::size_t rep);

/// n_per_finger impacts on every finger, ordered by (finger, repetition).
/// Jitter is drawn per impact from impact_seed(). `threads` > 1 runs impacts
/// concurrently; results are identical either way.
std::vector<SimOutput> batch_simulate(const HandModel& model, const ImpactorConfig& impactor,
                                      std::size_t n_per_finger, std::uint64_t seed,
                                      const SimOptions& options = {}, unsigned threads = 1);

/// Archive of labelled simulation outputs (cmd_simulate output).
struct SimArchive {
  HandArchetype hand = HandArchetype::CH;
  std::uint64_t seed = 0;
  ImpactorConfig impactor;
  SimOptions options;
  std::vector<SimOutput> outputs;
};

inline constexpr int kSimArchiveFormatVersion = 1;

void save_sim_archive(const SimArchive& archive, const std::filesystem::path& path);
SimArchive load_sim_archive(const std::filesystem::path& path);

}  // namespace vibtx::sim
