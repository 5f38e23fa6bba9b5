#include "vibtx/transmission_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <thread>

#include "vibtx/archive.hpp"
#include "vibtx/errors.hpp"
#include "vibtx/rng.hpp"

namespace vibtx::sim {
namespace {

constexpr double kGravity = 9.81;
constexpr double kBlowUpLimit = 1e9;

bool finite_nonneg(const Vec3& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x) && x >= 0.0; });
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

}  // namespace

// ---------------------------------------------------------------------------
// Network and integrator

void validate_network(const MassSpringNetwork& net) {
  const auto n = net.bodies.size();
  for (const auto& b : net.bodies) {
    if (!(b.mass > 0.0) || !std::isfinite(b.mass)) {
      throw InvalidArgument("body '" + b.name + "' must have a positive mass");
    }
  }
  for (const auto& l : net.links) {
    if (l.a >= n || l.b >= n || l.a == l.b) throw InvalidArgument("link references invalid bodies");
    if (!finite_nonneg(l.stiffness) || !finite_nonneg(l.damping)) {
      throw InvalidArgument("link stiffness and damping must be finite and >= 0");
    }
    if (!is_rotation(l.frame)) throw InvalidArgument("link frame must be a rotation matrix");
  }
  for (const auto& g : net.ground_links) {
    if (g.body >= n) throw InvalidArgument("ground link references an invalid body");
    if (!finite_nonneg(g.stiffness) || !finite_nonneg(g.damping)) {
      throw InvalidArgument("ground link stiffness and damping must be finite and >= 0");
    }
  }
}

NetworkState NetworkState::at_rest(std::size_t n_bodies) {
  return {std::vector<Vec3>(n_bodies, Vec3{}), std::vector<Vec3>(n_bodies, Vec3{})};
}

Integrator::Integrator(const MassSpringNetwork& net, double step)
    : net_(&net), dt_(step), scratch_(net.bodies.size()) {
  if (!(step > 0.0) || !std::isfinite(step)) throw InvalidArgument("internal step must be positive");
  validate_network(net);
}

void Integrator::compute_forces(const NetworkState& s, std::span<Vec3> forces) const {
  std::fill(forces.begin(), forces.end(), Vec3{});
  for (const auto& l : net_->links) {
    Vec3 d, dv;
    for (std::size_t k = 0; k < 3; ++k) {
      d[k] = s.displacement[l.b][k] - s.displacement[l.a][k];
      dv[k] = s.velocity[l.b][k] - s.velocity[l.a][k];
    }
    // Local-frame force, rotated back to global axes.
    Vec3 f{};
    for (std::size_t r = 0; r < 3; ++r) {
      const double local = l.stiffness[r] * dot(l.frame[r], d) + l.damping[r] * dot(l.frame[r], dv);
      for (std::size_t k = 0; k < 3; ++k) f[k] += l.frame[r][k] * local;
    }
    for (std::size_t k = 0; k < 3; ++k) {
      forces[l.a][k] += f[k];
      forces[l.b][k] -= f[k];
    }
  }
  for (const auto& g : net_->ground_links) {
    for (std::size_t k = 0; k < 3; ++k) {
      forces[g.body][k] -= g.stiffness[k] * s.displacement[g.body][k] + g.damping[k] * s.velocity[g.body][k];
    }
  }
}

void Integrator::step(NetworkState& s, std::span<const Vec3> external, std::span<Vec3> accel) const {
  compute_forces(s, scratch_);
  const auto n = net_->bodies.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double inv_m = 1.0 / net_->bodies[i].mass;
    for (std::size_t k = 0; k < 3; ++k) {
      double f = scratch_[i][k];
      if (!external.empty()) f += external[i][k];
      const double a = f * inv_m;
      if (!accel.empty()) accel[i][k] = a;
      s.velocity[i][k] += dt_ * a;
      s.displacement[i][k] += dt_ * s.velocity[i][k];
    }
  }
}

double Integrator::mechanical_energy(const NetworkState& s) const {
  double e = 0.0;
  for (std::size_t i = 0; i < net_->bodies.size(); ++i) {
    e += 0.5 * net_->bodies[i].mass * dot(s.velocity[i], s.velocity[i]);
  }
  for (const auto& l : net_->links) {
    Vec3 d;
    for (std::size_t k = 0; k < 3; ++k) d[k] = s.displacement[l.b][k] - s.displacement[l.a][k];
    for (std::size_t r = 0; r < 3; ++r) {
      const double local = dot(l.frame[r], d);
      e += 0.5 * l.stiffness[r] * local * local;
    }
  }
  for (const auto& g : net_->ground_links) {
    for (std::size_t k = 0; k < 3; ++k) {
      e += 0.5 * g.stiffness[k] * s.displacement[g.body][k] * s.displacement[g.body][k];
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Impactor

ImpactorConfig ImpactorConfig::hammer() { return ImpactorConfig{}; }

ImpactorConfig ImpactorConfig::pendulum() {
  ImpactorConfig c;
  c.mode = ImpactorMode::Pendulum;
  c.mass = 0.25;
  return c;
}

double effective_contact_stiffness(const HandModel& model, const ImpactorConfig& impactor, Finger finger) {
  const double kp = model.pad_stiffness[index_of(finger)];
  const double ki = impactor.contact_stiffness;
  if (kp <= 0.0 || ki <= 0.0) return 0.0;
  return ki * kp / (ki + kp);
}

double ImpactorConfig::nominal_speed() const {
  if (mode == ImpactorMode::Hammer) return speed;
  const double angle = release_angle_deg * std::numbers::pi / 180.0;
  return std::sqrt(2.0 * kGravity * arm_length * (1.0 - std::cos(angle)));
}

void validate_impactor(const ImpactorConfig& c) {
  if (!(c.mass > 0.0)) throw InvalidArgument("impactor mass must be positive");
  if (c.mode == ImpactorMode::Pendulum) {
    if (!(c.release_angle_deg > 0.0 && c.release_angle_deg < 90.0)) {
      throw InvalidArgument("release angle must lie in (0, 90) degrees");
    }
    if (!(c.arm_length > 0.0)) throw InvalidArgument("pendulum arm length must be positive");
  } else if (!(c.speed >= 0.0)) {
    throw InvalidArgument("hammer speed must be >= 0");
  }
  if (!(c.velocity_jitter >= 0.0) || !(c.direction_jitter_deg >= 0.0)) {
    throw InvalidArgument("jitters must be >= 0");
  }
  if (!(c.contact_stiffness >= 0.0) || !(c.contact_damping >= 0.0)) {
    throw InvalidArgument("contact coefficients must be >= 0");
  }
}

// ---------------------------------------------------------------------------
// Simulation

SimOutput simulate_impact(const HandModel& model, const ImpactorConfig& impactor, Finger finger,
                          std::uint64_t seed, const SimOptions& opt, const StepObserver& observer) {
  validate_impactor(impactor);
  validate_hand_model(model);
  if (!(opt.sample_rate > 0.0) || !(opt.duration > 0.0) || !(opt.pre_contact >= 0.0) ||
      !(opt.noise_std >= 0.0) || !(opt.comm_error_rate >= 0.0 && opt.comm_error_rate < 1.0)) {
    throw InvalidArgument("invalid simulation options");
  }
  if (opt.sample_rate * opt.internal_step > 1.0) {
    throw InvalidArgument("internal step must not exceed the sensor sample period");
  }

  Rng rng(seed);
  const double speed = std::max(0.0, impactor.nominal_speed() * (1.0 + impactor.velocity_jitter * rng.normal()));
  const double tilt = impactor.direction_jitter_deg * std::numbers::pi / 180.0 * rng.normal();
  const double azimuth = 2.0 * std::numbers::pi * rng.uniform();
  // Unit direction of impactor travel, nominally +z.
  const Vec3 dir = {std::sin(tilt) * std::cos(azimuth), std::sin(tilt) * std::sin(azimuth), std::cos(tilt)};

  // Hand network plus the impactor as an extra free body.
  MassSpringNetwork net = model.network;
  const std::size_t tip = model.finger_tips[index_of(finger)];
  const std::size_t imp = net.bodies.size();
  net.bodies.push_back({"impactor", impactor.mass, net.bodies[tip].rest_position});
  const Integrator integrator(net, opt.internal_step);
  const double contact_k = effective_contact_stiffness(model, impactor, finger);

  NetworkState state = NetworkState::at_rest(net.bodies.size());
  for (std::size_t k = 0; k < 3; ++k) {
    state.displacement[imp][k] = -dir[k] * speed * opt.pre_contact;
    state.velocity[imp][k] = dir[k] * speed;
  }

  const double dt = opt.internal_step;
  const auto n_steps = static_cast<std::size_t>(std::llround(opt.duration / dt));
  const auto n_samples = static_cast<std::size_t>(std::floor(opt.duration * opt.sample_rate + 1e-9));
  if (n_samples < 1) throw InvalidArgument("duration shorter than one sensor sample");

  std::vector<double> fx(n_steps), fy(n_steps), fz(n_steps);
  std::vector<Vec3> external(net.bodies.size(), Vec3{});

  // Sensor acceleration = velocity change over each sample period, which
  // acts as the sensor's integrate-and-dump anti-alias stage.
  std::array<std::vector<Vec3>, kNumSensors> accel;
  for (auto& a : accel) a.assign(n_samples, Vec3{});
  std::array<Vec3, kNumSensors> last_velocity{};
  std::size_t next_sample = 1;
  const auto sample_step = [&](std::size_t k) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(k) / (opt.sample_rate * dt)));
  };

  for (std::size_t s = 0; s < n_steps; ++s) {
    const double pen = dot(state.displacement[imp], dir) - dot(state.displacement[tip], dir);
    double f = 0.0;
    bool in_contact = false;
    if (pen > 0.0) {
      const double pen_rate = dot(state.velocity[imp], dir) - dot(state.velocity[tip], dir);
      f = std::max(0.0, contact_k * pen + impactor.contact_damping * pen_rate);
      in_contact = true;
    }
    for (std::size_t k = 0; k < 3; ++k) {
      external[tip][k] = f * dir[k];
      external[imp][k] = -f * dir[k];
    }
    fx[s] = f * dir[0];
    fy[s] = f * dir[1];
    fz[s] = f * dir[2];

    integrator.step(state, external);

    for (std::size_t i = 0; i < net.bodies.size(); ++i) {
      for (std::size_t k = 0; k < 3; ++k) {
        if (!(std::abs(state.displacement[i][k]) <= kBlowUpLimit) ||
            !(std::abs(state.velocity[i][k]) <= kBlowUpLimit)) {
          throw NumericalError("integration became unstable at t=" + std::to_string((s + 1) * dt) +
                               " s; reduce the internal step");
        }
      }
    }
    if (observer) observer(static_cast<double>(s + 1) * dt, state, in_contact);

    while (next_sample < n_samples && sample_step(next_sample) == s + 1) {
      for (std::size_t j = 0; j < kNumSensors; ++j) {
        const auto& v = state.velocity[model.sensor_nodes[j]];
        for (std::size_t k = 0; k < 3; ++k) {
          accel[j][next_sample][k] = (v[k] - last_velocity[j][k]) * opt.sample_rate;
        }
        last_velocity[j] = v;
      }
      ++next_sample;
    }
  }

  SimOutput out{ForceTrace(1.0 / dt, std::move(fx), std::move(fy), std::move(fz)), {}, dt, finger,
                ImpactMeta{speed, seed}};

  // Rotate into each sensor frame (mounted at an angle about x), then add
  // noise, clipping and communication dropouts.
  for (std::size_t j = 0; j < kNumSensors; ++j) {
    const double c = std::cos(model.sensor_angles[j]);
    const double sn = std::sin(model.sensor_angles[j]);
    std::vector<double> ax(n_samples), ay(n_samples), az(n_samples);
    std::vector<bool> valid(n_samples, true);
    for (std::size_t k = 0; k < n_samples; ++k) {
      const Vec3& a = accel[j][k];
      std::array<double, 3> local = {a[0], c * a[1] + sn * a[2], -sn * a[1] + c * a[2]};
      for (double& v : local) {
        if (opt.noise_std > 0.0) v += opt.noise_std * rng.normal();
        if (opt.clip) v = std::clamp(v, -opt.clip_level, opt.clip_level);
      }
      if (opt.comm_error_rate > 0.0 && rng.bernoulli(opt.comm_error_rate)) {
        valid[k] = false;
        local = {0.0, 0.0, 0.0};
      }
      ax[k] = local[0];
      ay[k] = local[1];
      az[k] = local[2];
    }
    out.sensor_traces.emplace_back(static_cast<int>(j), opt.sample_rate, std::move(ax), std::move(ay),
                                   std::move(az), std::move(valid));
  }
  return out;
}

ForceShape impact_force_shape_stats(const ForceTrace& force) {
  const auto& fz = force.fz();
  std::size_t start = fz.size();
  double peak = 0.0;
  for (std::size_t i = 0; i < fz.size(); ++i) {
    const double a = std::abs(fz[i]);
    if (a > 0.0 && start == fz.size()) start = i;
    peak = std::max(peak, a);
  }
  if (start == fz.size()) throw InvalidArgument("no contact detected");

  std::size_t end = start;
  while (end < fz.size() && fz[end] != 0.0) ++end;
  std::size_t ep_peak = start;
  for (std::size_t i = start; i < end; ++i) {
    if (std::abs(fz[i]) > std::abs(fz[ep_peak])) ep_peak = i;
  }
  const double half = 0.5 * std::abs(fz[ep_peak]);
  const auto value = [&](std::size_t i) { return i < fz.size() ? std::abs(fz[i]) : 0.0; };

  // Linear interpolation of both half-maximum crossings; samples outside the
  // episode count as zero force.
  std::size_t i = ep_peak;
  while (i > start && value(i - 1) >= half) --i;
  double left = static_cast<double>(i);
  {
    const double lo = i > 0 ? value(i - 1) : 0.0;
    const double hi = value(i);
    if (hi > lo) left = static_cast<double>(i) - (hi - half) / (hi - lo);
  }
  std::size_t j = ep_peak;
  while (j + 1 < end && value(j + 1) >= half) ++j;
  double right = static_cast<double>(j);
  {
    const double hi = value(j);
    const double lo = value(j + 1);
    if (hi > lo) right = static_cast<double>(j) + (hi - half) / (hi - lo);
  }
  return {peak, (right - left) / force.sample_rate()};
}

ForceShape impact_force_shape_stats(const SimOutput& out) { return impact_force_shape_stats(out.force); }

std::uint64_t impact_seed(std::uint64_t batch_seed, Finger finger, std::size_t rep) {
  return derive_seed(batch_seed, index_of(finger) * 1'000'003ULL + rep);
}

std::vector<SimOutput> batch_simulate(const HandModel& model, const ImpactorConfig& impactor,
                                      std::size_t n_per_finger, std::uint64_t seed,
                                      const SimOptions& options, unsigned threads) {
  if (n_per_finger < 1) throw InvalidArgument("n_per_finger must be >= 1");
  const std::size_t total = n_per_finger * kNumFingers;
  std::vector<std::optional<SimOutput>> slots(total);
  const auto run = [&](std::size_t idx) {
    const auto finger = static_cast<Finger>(idx / n_per_finger);
    const std::size_t rep = idx % n_per_finger;
    slots[idx] = simulate_impact(model, impactor, finger, impact_seed(seed, finger, rep), options);
  };

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(total)));
  if (threads == 1) {
    for (std::size_t i = 0; i < total; ++i) run(i);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < total; i += threads) run(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<SimOutput> out;
  out.reserve(total);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace vibtx::sim
