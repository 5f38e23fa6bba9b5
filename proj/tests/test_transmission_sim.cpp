#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "vibtx/dsp.hpp"
#include "vibtx/errors.hpp"
#include "vibtx/rng.hpp"
#include "vibtx/transmission_sim.hpp"

namespace fs = std::filesystem;
using namespace vibtx;
using namespace vibtx::sim;

namespace {

double raw_sensor_energy(const SimOutput& out) {
  double e = 0.0;
  for (const auto& t : out.sensor_traces) {
    for (std::size_t a = 0; a < 3; ++a) {
      for (double v : t.axis(a)) e += v * v;
    }
  }
  return e;
}

double mean_pipeline_energy(const HandModel& model, const ImpactorConfig& imp, const SimOptions& opt) {
  double sum = 0.0;
  for (Finger f : kAllFingers) {
    const auto r = dsp::run_pipeline(simulate_impact(model, imp, f, 7, opt), {});
    for (double e : r.energies) sum += e;
  }
  return sum / 25.0;
}

}  // namespace

TEST(Frames, AnglesGiveRotations) {
  EXPECT_TRUE(is_rotation(frame_from_angles(0.3, -1.1, 2.0)));
  EXPECT_TRUE(is_rotation(kIdentityFrame));
  Mat3 bad = kIdentityFrame;
  bad[0][0] = 2.0;
  EXPECT_FALSE(is_rotation(bad));
}

TEST(Network, ValidationRejectsBadInputs) {
  MassSpringNetwork net;
  net.bodies.push_back({"a", 0.0, {}});
  EXPECT_THROW(validate_network(net), InvalidArgument);
  net.bodies[0].mass = 1.0;
  net.links.push_back({0, 3, {1, 1, 1}, {}, kIdentityFrame});
  EXPECT_THROW(validate_network(net), InvalidArgument);
  net.links[0].b = 0;
  net.links[0].stiffness[1] = -1.0;
  EXPECT_THROW(validate_network(net), InvalidArgument);
}

TEST(Integrator, SingleDofMatchesClosedForm) {
  EXPECT_LT(oracle::single_dof_error(0.1, 4.0, 0.3, 5e-5), 1e-3);
  EXPECT_LT(oracle::single_dof_error(0.02, 2.5, 0.3, 5e-5, 0), 1e-3);
}

TEST(Integrator, LinkForcesAreEqualAndOpposite) {
  MassSpringNetwork net;
  net.bodies = {{"a", 1.0, {}}, {"b", 2.0, {}}};
  net.links.push_back({0, 1, {10.0, 20.0, 30.0}, {}, frame_from_angles(0.4, 0.2, -0.3)});
  const Integrator integ(net, 1e-4);
  auto s = NetworkState::at_rest(2);
  s.displacement[1] = {0.01, -0.02, 0.005};
  std::vector<Vec3> f(2);
  integ.compute_forces(s, f);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(f[0][k] + f[1][k], 0.0, 1e-15);
  EXPECT_GT(integ.mechanical_energy(s), 0.0);
}

TEST(HandModel, PresetsValidate) {
  for (auto h : kAllArchetypes) {
    const auto m = build_hand_model(h);
    EXPECT_NO_THROW(validate_hand_model(m));
    EXPECT_EQ(m.network.bodies.size(), layout::kBodyCount);
    EXPECT_EQ(m.preset_version, kPresetVersion);
  }
}

TEST(HandModel, VariPlusActiveDigitsStifferThanPassive) {
  const auto m = build_hand_model(HandArchetype::VP);
  EXPECT_GT(finger_joint_stiffness(m, Finger::Index, kImpactAxis),
            finger_joint_stiffness(m, Finger::Ring, kImpactAxis));
}

TEST(HandModel, ILimbThumbStifferThanIndexOnImpactAxis) {
  const auto m = build_hand_model(HandArchetype::IL);
  EXPECT_GT(finger_joint_stiffness(m, Finger::Thumb, kImpactAxis),
            finger_joint_stiffness(m, Finger::Index, kImpactAxis));
}

TEST(HandModel, SoftHandWristMoreCompliantThanCosmetic) {
  EXPECT_LT(wrist_stiffness(build_hand_model(HandArchetype::SH), kImpactAxis),
            wrist_stiffness(build_hand_model(HandArchetype::CH), kImpactAxis));
}

TEST(HandModel, DisconnectedGraphRejected) {
  auto m = build_hand_model(HandArchetype::CH);
  m.network.links.erase(m.network.links.begin() + static_cast<std::ptrdiff_t>(m.wrist_link));
  m.wrist_link = 0;
  EXPECT_THROW(validate_hand_model(m), InvalidArgument);
}

TEST(HandModel, ScalingMultipliesJointStiffness) {
  const auto m = build_hand_model(HandArchetype::CH);
  const auto half = scale_joint_stiffness(m, 0.5);
  EXPECT_NEAR(finger_joint_stiffness(half, Finger::Middle, kAxisY),
              0.5 * finger_joint_stiffness(m, Finger::Middle, kAxisY), 1e-9);
  EXPECT_NEAR(wrist_stiffness(half, kAxisZ), 0.5 * wrist_stiffness(m, kAxisZ), 1e-9);
}

TEST(HandModel, SaveLoadRoundTrip) {
  const auto dir = fs::temp_directory_path() / "vibtx_test_sim";
  fs::create_directories(dir);
  for (auto h : kAllArchetypes) {
    const auto m = build_hand_model(h);
    save_hand_model(m, dir / "hand.vtx");
    EXPECT_EQ(load_hand_model(dir / "hand.vtx"), m);
  }
}

TEST(Impactor, Validation) {
  auto p = ImpactorConfig::pendulum();
  p.release_angle_deg = 90.0;
  EXPECT_THROW(validate_impactor(p), InvalidArgument);
  auto h = ImpactorConfig::hammer();
  h.mass = 0.0;
  EXPECT_THROW(validate_impactor(h), InvalidArgument);
  h = ImpactorConfig::hammer();
  h.velocity_jitter = -0.1;
  EXPECT_THROW(validate_impactor(h), InvalidArgument);
}

TEST(Impactor, PendulumSpeedFromReleaseAngle) {
  const auto p = ImpactorConfig::pendulum();
  const double a = 3.0 * std::numbers::pi / 180.0;
  EXPECT_NEAR(p.nominal_speed(), std::sqrt(2.0 * 9.81 * 0.35 * (1.0 - std::cos(a))), 1e-3);
}

TEST(Impactor, ContactStiffnessInSeriesWithPad) {
  const auto m = build_hand_model(HandArchetype::CH);
  auto imp = ImpactorConfig::hammer();
  const double kp = m.pad_stiffness[index_of(Finger::Ring)];
  const double k = effective_contact_stiffness(m, imp, Finger::Ring);
  EXPECT_NEAR(1.0 / k, 1.0 / kp + 1.0 / imp.contact_stiffness, 1e-15);
  EXPECT_LT(k, kp);
}

TEST(Simulate, DeterministicGivenSeed) {
  const auto m = build_hand_model(HandArchetype::IL);
  auto imp = dsp::dataset_impactor();
  SimOptions opt;
  opt.comm_error_rate = 0.01;
  const auto a = simulate_impact(m, imp, Finger::Middle, 123, opt);
  const auto b = simulate_impact(m, imp, Finger::Middle, 123, opt);
  const auto c = simulate_impact(m, imp, Finger::Middle, 124, opt);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.sensor_traces, c.sensor_traces);
}

TEST(Simulate, OutputShapes) {
  const auto out = simulate_impact(build_hand_model(HandArchetype::CH), ImpactorConfig::pendulum(), Finger::Thumb, 1);
  ASSERT_EQ(out.sensor_traces.size(), kNumSensors);
  for (const auto& t : out.sensor_traces) {
    EXPECT_EQ(t.size(), 550u);
    EXPECT_EQ(t.sample_rate(), 1000.0);
  }
  EXPECT_EQ(out.force.size(), 11000u);
  EXPECT_DOUBLE_EQ(out.internal_step, 5e-5);
}

TEST(Simulate, ForceIsOneSided) {
  const auto out = simulate_impact(build_hand_model(HandArchetype::SH), ImpactorConfig::pendulum(), Finger::Index, 2);
  for (double f : out.force.fz()) EXPECT_GE(f, 0.0);
}

TEST(Simulate, NoTransmissionPathMeansNoSensorSignal) {
  auto m = build_hand_model(HandArchetype::CH);
  for (auto& l : m.network.links) {
    l.stiffness = {};
    l.damping = {};
  }
  SimOptions opt;
  opt.noise_std = 0.0;
  const auto out = simulate_impact(m, ImpactorConfig::pendulum(), Finger::Index, 3, opt);
  EXPECT_EQ(raw_sensor_energy(out), 0.0);

  const auto connected = simulate_impact(build_hand_model(HandArchetype::CH), ImpactorConfig::pendulum(),
                                         Finger::Index, 3, opt);
  EXPECT_GT(raw_sensor_energy(connected), 1.0);
}

TEST(Simulate, UndampedEnergyConservedAfterContact) {
  for (auto h : kAllArchetypes) {
    const auto r = oracle::post_contact_drift(build_hand_model(h), Finger::Index, 11);
    EXPECT_GT(r.window, 0.3) << to_string(h);
    EXPECT_LT(r.drift, 0.005) << to_string(h);
    EXPECT_LT(r.ripple, 0.02) << to_string(h);
  }
}

TEST(Simulate, ZeroSpeedHasNoContact) {
  auto imp = ImpactorConfig::hammer();
  imp.speed = 0.0;
  const auto out = simulate_impact(build_hand_model(HandArchetype::CH), imp, Finger::Index, 4);
  try {
    (void)impact_force_shape_stats(out);
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "no contact detected");
  }
}

TEST(ForceShape, HalfSineWidth) {
  const double fs = 20000.0;
  const double T = 0.004;
  std::vector<double> fz(2000, 0.0);
  const std::size_t start = 500;
  for (std::size_t i = 0; i < 2000; ++i) {
    const double t = (static_cast<double>(i) - start) / fs;
    if (t > 0.0 && t < T) fz[i] = 3.0 * std::sin(std::numbers::pi * t / T);
  }
  const ForceTrace f(fs, std::vector<double>(2000), std::vector<double>(2000), fz);
  const auto s = impact_force_shape_stats(f);
  EXPECT_NEAR(s.width, 2.0 * T / 3.0, 1.0 / fs);
  EXPECT_NEAR(s.peak, 3.0, 1e-3);
}

TEST(ForceShape, StiffHandSharperThanSoftHand) {
  const auto imp = ImpactorConfig::pendulum();
  const auto vp = impact_force_shape_stats(simulate_impact(build_hand_model(HandArchetype::VP), imp, Finger::Index, 42));
  const auto sh = impact_force_shape_stats(simulate_impact(build_hand_model(HandArchetype::SH), imp, Finger::Index, 42));
  EXPECT_GT(vp.peak, sh.peak);
  EXPECT_LT(vp.width, sh.width);
}

TEST(Properties, MonotoneCompliance) {
  SimOptions opt;
  opt.noise_std = 0.0;
  const auto imp = ImpactorConfig::pendulum();
  for (auto h : kAllArchetypes) {
    const auto base = build_hand_model(h);
    double prev = std::numeric_limits<double>::infinity();
    for (double s : {1.0, 0.5, 0.1}) {
      const double e = mean_pipeline_energy(scale_joint_stiffness(base, s), imp, opt);
      EXPECT_LE(e, prev) << to_string(h) << " scale " << s;
      prev = e;
    }
  }
}

TEST(Properties, CosmeticRowsDistinct) {
  const auto outputs = batch_simulate(build_hand_model(HandArchetype::CH), ImpactorConfig::pendulum(), 3, 42);
  const auto em = dsp::energy_matrix(outputs, {});

  // Energy of sensor noise alone through the same chain.
  Rng rng(1);
  double floor = 0.0;
  const int draws = 20;
  for (int d = 0; d < draws; ++d) {
    std::array<std::vector<double>, 3> ax;
    for (auto& a : ax) {
      a.resize(kWindowLength);
      for (double& v : a) v = 0.02 * rng.normal();
    }
    const AxisTraceSet t(0, 1000.0, ax[0], ax[1], ax[2]);
    floor += dsp::energy(dsp::dft321(dsp::highpass(t, {}))) / draws;
  }

  for (std::size_t a = 0; a < kNumFingers; ++a) {
    for (std::size_t b = a + 1; b < kNumFingers; ++b) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < kNumSensors; ++k) d2 += std::pow(*em[a][k] - *em[b][k], 2);
      EXPECT_GT(std::sqrt(d2), 10.0 * floor) << a << " vs " << b;
    }
  }
}

TEST(Batch, CountsOrderAndSeeds) {
  const auto m = build_hand_model(HandArchetype::SH);
  const auto imp = dsp::dataset_impactor();
  const auto outs = batch_simulate(m, imp, 2, 9);
  ASSERT_EQ(outs.size(), 10u);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const auto f = static_cast<Finger>(i / 2);
    EXPECT_EQ(outs[i].finger, f);
    EXPECT_EQ(outs[i].meta.seed, impact_seed(9, f, i % 2));
  }
  EXPECT_EQ(outs[3], simulate_impact(m, imp, Finger::Index, impact_seed(9, Finger::Index, 1)));
  EXPECT_EQ(batch_simulate(m, imp, 2, 9, {}, 3), outs);
  EXPECT_NE(batch_simulate(m, imp, 2, 10)[0].meta.impact_speed, outs[0].meta.impact_speed);
  EXPECT_THROW((void)batch_simulate(m, imp, 0, 9), InvalidArgument);
}

TEST(Batch, HundredPerFinger) {
  SimOptions opt;
  opt.duration = 0.05;
  opt.pre_contact = 0.01;
  const auto outs = batch_simulate(build_hand_model(HandArchetype::CH), ImpactorConfig::hammer(), 100, 1, opt, 4);
  EXPECT_EQ(outs.size(), 500u);
}

TEST(SimArchive, RoundTrip) {
  SimArchive a;
  a.hand = HandArchetype::VP;
  a.seed = 5;
  a.impactor = ImpactorConfig::pendulum();
  a.options.comm_error_rate = 0.05;
  a.outputs = batch_simulate(build_hand_model(a.hand), a.impactor, 1, 5, a.options);
  const auto path = fs::temp_directory_path() / "vibtx_test_sim" / "sim.vtx";
  fs::create_directories(path.parent_path());
  save_sim_archive(a, path);
  const auto b = load_sim_archive(path);
  EXPECT_EQ(b.hand, a.hand);
  EXPECT_EQ(b.seed, a.seed);
  EXPECT_EQ(b.outputs, a.outputs);
  EXPECT_EQ(b.options.comm_error_rate, 0.05);
}
