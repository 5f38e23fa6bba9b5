#pragma once

// Acceleration processing chain: gap repair, zero-phase high-pass, window
// alignment on the impact force peak, 3-to-1 axis reduction and energy.

#include <array>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "vibtx/archive.hpp"
#include "vibtx/signal_model.hpp"
#include "vibtx/transmission_sim.hpp"

namespace vibtx::dsp {

struct PipelineConfig {
  double highpass_cutoff = 20.0;  ///< Hz
  int highpass_order = 4;         ///< even; the filter is run forward and backward
  std::size_t window_len = kWindowLength;
  std::size_t pre_peak_offset = 50;
  ReductionMethod reduction = ReductionMethod::DFT321;

  /// Throws InvalidArgument unless 0 < cutoff < sample_rate / 2, the order
  /// is a positive even number, window_len == 300 and offset < window_len.
  void validate(double sample_rate) const;

  void write(io::Manifest& m) const;
  /// Missing keys keep their defaults.
  static PipelineConfig read(const io::Manifest& m);
};

/// Invalid samples are replaced by linear interpolation between the nearest
/// valid neighbours; leading/trailing gaps hold the nearest valid value.
/// Throws InvalidArgument when no sample is valid.
AxisTraceSet repair_gaps(const AxisTraceSet& t);

/// Second-order section, a0 normalised to 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

/// Digital Butterworth high-pass via the bilinear transform with
/// pre-warped cutoff; order/2 sections.
std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double sample_rate);

/// Single forward pass (direct form II transposed), zero initial state.
std::vector<double> sosfilt(std::span<const Biquad> sos, std::span<const double> x);

/// Forward-backward filtering with odd-extension padding and steady-state
/// initial conditions. Zero phase; magnitude response squared.
std::vector<double> sosfiltfilt(std::span<const Biquad> sos, std::span<const double> x);

/// Per-axis zero-phase Butterworth high-pass.
AxisTraceSet highpass(const AxisTraceSet& t, const PipelineConfig& cfg);

struct AlignedWindow {
  AxisTraceSet window;
  std::size_t peak_index = 0;  ///< argmax |F_z| in sensor samples
  bool padded = false;         ///< part of the window fell outside the trace
};

/// Window [p - offset, p - offset + window_len) around p = argmax |F_z|
/// (earliest index on ties). The force may be sampled at a different rate;
/// its peak is mapped onto the sensor clock. Out-of-range samples are zero.
/// Throws InvalidArgument when the force is identically zero.
AlignedWindow align_window(const AxisTraceSet& t, const ForceTrace& f, const PipelineConfig& cfg);

/// Direct DFT with a cached twiddle table.
std::vector<std::complex<double>> dft(std::span<const double> x);
/// Real part of the inverse DFT.
std::vector<double> idft_real(std::span<const std::complex<double>> X);

/// Per-bin magnitude sqrt(|X|^2 + |Y|^2 + |Z|^2) with the phase of X+Y+Z,
/// Hermitian symmetry enforced, inverted to a real signal. Preserves total
/// energy. Throws InvalidArgument unless the trace has 300 samples.
ReducedTrace dft321(const AxisTraceSet& t);

/// Projection of the mean-removed samples on the principal axis of the 3x3
/// covariance. Sign: the principal axis has a non-negative component along
/// the input axis of largest variance. Throws InvalidArgument for length
/// != 300 or zero variance.
ReducedTrace pca_reduce(const AxisTraceSet& t);

ReducedTrace reduce(const AxisTraceSet& t, ReductionMethod method);

/// Sum of squares.
double energy(const ReducedTrace& r);
double energy(std::span<const double> x);

/// Rows = contacted finger, columns = sensor. Empty entries are missing.
using EnergyMatrix = std::array<std::array<std::optional<double>, kNumSensors>, kNumFingers>;

/// Mean of the 25 entries. Throws InvalidArgument on a missing entry.
double mean_hand_energy(const EnergyMatrix& m);

struct PipelineResult {
  std::vector<ReducedTrace> traces;  ///< one per sensor
  std::array<double, kNumSensors> energies{};
  bool padded = false;
};

/// repair -> highpass -> align -> reduce -> energy, per sensor.
PipelineResult run_pipeline(const sim::SimOutput& sim, const PipelineConfig& cfg);

/// run_pipeline packaged as a labelled training sample.
ImpactSample to_impact_sample(const sim::SimOutput& sim, HandArchetype hand, const PipelineConfig& cfg);

/// Per-finger mean of per-sensor energies over a batch of outputs.
EnergyMatrix energy_matrix(std::span<const sim::SimOutput> outputs, const PipelineConfig& cfg);

/// Hand-held hammer with per-impact speed and direction scatter.
sim::ImpactorConfig dataset_impactor();

struct DatasetOptions {
  std::size_t n_per_finger = 100;
  sim::ImpactorConfig impactor = dataset_impactor();
  sim::SimOptions sim;
  PipelineConfig pipeline;
  unsigned threads = 1;
};

/// Simulated impacts on every finger of the preset, each run through the
/// pipeline. Samples are ordered by (finger, repetition) and seeded with
/// sim::impact_seed(seed, finger, repetition); the result does not depend
/// on the thread count.
Dataset generate_dataset(HandArchetype hand, std::uint64_t seed, const DatasetOptions& opt = {});

}  // namespace vibtx::dsp
