#include "vibtx/dsp.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <thread>

#include "vibtx/errors.hpp"

namespace vibtx::dsp {
namespace {

using cplx = std::complex<double>;

// exp(-2*pi*i*k/n) for k in [0, n)
const std::vector<cplx>& twiddles(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<std::vector<cplx>>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) {
    slot = std::make_unique<std::vector<cplx>>(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      (*slot)[k] = {std::cos(angle), std::sin(angle)};
    }
  }
  return *slot;
}

void require_window(const AxisTraceSet& t) {
  if (t.size() != kWindowLength) {
    throw InvalidArgument("expected a 300-sample window, got " + std::to_string(t.size()));
  }
}

}  // namespace

void PipelineConfig::validate(double sample_rate) const {
  if (!(highpass_cutoff > 0.0) || !(highpass_cutoff < sample_rate / 2.0)) {
    throw InvalidArgument("high-pass cutoff must lie strictly between 0 and the Nyquist frequency");
  }
  if (highpass_order < 2 || highpass_order % 2 != 0) {
    throw InvalidArgument("high-pass order must be a positive even number");
  }
  if (window_len != kWindowLength) throw InvalidArgument("window length is fixed at 300 samples");
  if (pre_peak_offset >= window_len) throw InvalidArgument("pre-peak offset must be < window length");
}

void PipelineConfig::write(io::Manifest& m) const {
  m.set("highpass_cutoff", highpass_cutoff);
  m.set("highpass_order", highpass_order);
  m.set("window_len", static_cast<std::uint64_t>(window_len));
  m.set("pre_peak_offset", static_cast<std::uint64_t>(pre_peak_offset));
  m.set("reduction", std::string(to_string(reduction)));
}

PipelineConfig PipelineConfig::read(const io::Manifest& m) {
  PipelineConfig c;
  if (m.contains("highpass_cutoff")) c.highpass_cutoff = m.require_double("highpass_cutoff");
  if (m.contains("highpass_order")) c.highpass_order = static_cast<int>(m.require_int("highpass_order"));
  if (m.contains("window_len")) c.window_len = static_cast<std::size_t>(m.require_u64("window_len"));
  if (m.contains("pre_peak_offset")) {
    c.pre_peak_offset = static_cast<std::size_t>(m.require_u64("pre_peak_offset"));
  }
  if (m.contains("reduction")) {
    const auto r = parse_reduction(m.require("reduction"));
    if (!r) throw FormatError("unknown reduction method '" + m.require("reduction") + "'");
    c.reduction = *r;
  }
  return c;
}

// ---------------------------------------------------------------------------

AxisTraceSet repair_gaps(const AxisTraceSet& t) {
  const auto& mask = t.valid_mask();
  const std::size_t n = t.size();
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) valid.push_back(i);
  }
  if (valid.empty()) throw InvalidArgument("trace has no valid samples");
  if (valid.size() == n) return t;

  std::array<std::vector<double>, 3> axes;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto& src = t.axis(a);
    auto& dst = axes[a];
    dst = src;
    std::size_t next = 0;  // index into `valid` of the first valid sample >= i
    for (std::size_t i = 0; i < n; ++i) {
      while (next < valid.size() && valid[next] < i) ++next;
      if (mask[i]) continue;
      if (next == 0) {
        dst[i] = src[valid.front()];
      } else if (next == valid.size()) {
        dst[i] = src[valid.back()];
      } else {
        const std::size_t lo = valid[next - 1];
        const std::size_t hi = valid[next];
        const double w = static_cast<double>(i - lo) / static_cast<double>(hi - lo);
        dst[i] = src[lo] + w * (src[hi] - src[lo]);
      }
    }
  }
  return {t.sensor_id(), t.sample_rate(), std::move(axes[0]), std::move(axes[1]), std::move(axes[2])};
}

std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double sample_rate) {
  if (order < 2 || order % 2 != 0) throw InvalidArgument("order must be a positive even number");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < sample_rate / 2.0)) {
    throw InvalidArgument("cutoff must lie strictly between 0 and the Nyquist frequency");
  }
  // Each conjugate pole pair of the analog prototype gives s^2 + a*s + 1.
  // Low-pass -> high-pass (s -> K/s), then s = (1 - z^-1) / (1 + z^-1).
  const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate);
  std::vector<Biquad> sos;
  for (int i = 1; i <= order / 2; ++i) {
    const double a = 2.0 * std::sin(std::numbers::pi * (2.0 * i - 1.0) / (2.0 * order));
    const double a0 = k * k + a * k + 1.0;
    sos.push_back({1.0 / a0, -2.0 / a0, 1.0 / a0, (2.0 * k * k - 2.0) / a0, (k * k - a * k + 1.0) / a0});
  }
  return sos;
}

namespace {

// In-place cascade with explicit initial states (z1, z2 per section).
void run_cascade(std::span<const Biquad> sos, std::vector<double>& x,
                 std::vector<std::array<double, 2>> state) {
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const auto& q = sos[s];
    double z1 = state[s][0];
    double z2 = state[s][1];
    for (double& v : x) {
      const double in = v;
      const double y = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * y + z2;
      z2 = q.b2 * in - q.a2 * y;
      v = y;
    }
  }
}

// Steady-state section states for a unit step at the cascade input.
std::vector<std::array<double, 2>> step_states(std::span<const Biquad> sos) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double scale = 1.0;
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const auto& q = sos[s];
    const double g = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
    const double z2 = q.b2 - q.a2 * g;
    const double z1 = q.b1 - q.a1 * g + z2;
    zi[s] = {scale * z1, scale * z2};
    scale *= g;
  }
  return zi;
}

}  // namespace

std::vector<double> sosfilt(std::span<const Biquad> sos, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  run_cascade(sos, y, std::vector<std::array<double, 2>>(sos.size(), {0.0, 0.0}));
  return y;
}

std::vector<double> sosfiltfilt(std::span<const Biquad> sos, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) throw InvalidArgument("signal too short for forward-backward filtering");
  const std::size_t padlen = std::min<std::size_t>(3 * (2 * sos.size() + 1), n - 1);

  // Odd extension: 2*x[0] - x[padlen..1] | x | 2*x[n-1] - x[n-2..n-1-padlen]
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const auto zi = step_states(sos);
  const auto scaled = [&zi](double v) {
    auto z = zi;
    for (auto& s : z) {
      s[0] *= v;
      s[1] *= v;
    }
    return z;
  };

  run_cascade(sos, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  run_cascade(sos, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(padlen),
          ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

AxisTraceSet highpass(const AxisTraceSet& t, const PipelineConfig& cfg) {
  cfg.validate(t.sample_rate());
  if (t.size() <= static_cast<std::size_t>(3 * cfg.highpass_order)) {
    throw InvalidArgument("trace too short for the high-pass filter");
  }
  const auto sos = butterworth_highpass(cfg.highpass_order, cfg.highpass_cutoff, t.sample_rate());
  return {t.sensor_id(), t.sample_rate(), sosfiltfilt(sos, t.ax()), sosfiltfilt(sos, t.ay()),
          sosfiltfilt(sos, t.az()), t.valid_mask()};
}

AlignedWindow align_window(const AxisTraceSet& t, const ForceTrace& f, const PipelineConfig& cfg) {
  if (cfg.pre_peak_offset >= cfg.window_len) throw InvalidArgument("pre-peak offset must be < window length");
  const auto& fz = f.fz();
  std::size_t peak = 0;
  double best = 0.0;
  for (std::size_t i = 0; i < fz.size(); ++i) {
    if (std::abs(fz[i]) > best) {
      best = std::abs(fz[i]);
      peak = i;
    }
  }
  if (best == 0.0) throw InvalidArgument("force trace is all zero; no impact peak");

  const auto p = static_cast<std::ptrdiff_t>(
      std::llround(static_cast<double>(peak) * t.sample_rate() / f.sample_rate()));
  const std::ptrdiff_t start = p - static_cast<std::ptrdiff_t>(cfg.pre_peak_offset);
  const auto n = static_cast<std::ptrdiff_t>(t.size());

  std::array<std::vector<double>, 3> axes;
  std::vector<bool> valid(cfg.window_len, true);
  bool padded = false;
  for (std::size_t a = 0; a < 3; ++a) {
    axes[a].assign(cfg.window_len, 0.0);
    const auto& src = t.axis(a);
    for (std::size_t k = 0; k < cfg.window_len; ++k) {
      const std::ptrdiff_t i = start + static_cast<std::ptrdiff_t>(k);
      if (i >= 0 && i < n) {
        axes[a][k] = src[static_cast<std::size_t>(i)];
        valid[k] = t.valid_mask()[static_cast<std::size_t>(i)];
      } else {
        padded = true;
      }
    }
  }
  return {AxisTraceSet(t.sensor_id(), t.sample_rate(), std::move(axes[0]), std::move(axes[1]),
                       std::move(axes[2]), std::move(valid)),
          static_cast<std::size_t>(std::max<std::ptrdiff_t>(p, 0)), padded};
}

// ---------------------------------------------------------------------------

std::vector<std::complex<double>> dft(std::span<const double> x) {
  const std::size_t n = x.size();
  const auto& w = twiddles(n);
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc{};
    std::size_t idx = 0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += x[j] * w[idx];
      idx += k;
      if (idx >= n) idx -= n;
    }
    out[k] = acc;
  }
  return out;
}

std::vector<double> idft_real(std::span<const std::complex<double>> X) {
  const std::size_t n = X.size();
  const auto& w = twiddles(n);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    std::size_t idx = 0;
    for (std::size_t k = 0; k < n; ++k) {
      // Re(X[k] * conj(w[idx]))
      acc += X[k].real() * w[idx].real() + X[k].imag() * w[idx].imag();
      idx += j;
      if (idx >= n) idx -= n;
    }
    out[j] = acc / static_cast<double>(n);
  }
  return out;
}

ReducedTrace dft321(const AxisTraceSet& t) {
  require_window(t);
  const std::size_t n = t.size();
  const auto X = dft(t.ax());
  const auto Y = dft(t.ay());
  const auto Z = dft(t.az());

  std::vector<cplx> A(n);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double mag = std::sqrt(std::norm(X[k]) + std::norm(Y[k]) + std::norm(Z[k]));
    const cplx sum = X[k] + Y[k] + Z[k];
    cplx v;
    if (k == 0 || 2 * k == n) {
      // DC and Nyquist bins must be real.
      v = sum.real() < 0.0 ? -mag : mag;
    } else {
      v = std::polar(mag, std::arg(sum));
    }
    A[k] = v;
    if (k != 0 && 2 * k != n) A[n - k] = std::conj(v);
  }
  return {idft_real(A), ReductionMethod::DFT321};
}

ReducedTrace pca_reduce(const AxisTraceSet& t) {
  require_window(t);
  const std::size_t n = t.size();
  Eigen::Matrix<double, Eigen::Dynamic, 3> data(static_cast<Eigen::Index>(n), 3);
  for (std::size_t a = 0; a < 3; ++a) {
    const auto& src = t.axis(a);
    for (std::size_t i = 0; i < n; ++i) data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = src[i];
  }
  const Eigen::RowVector3d mean = data.colwise().mean();
  data.rowwise() -= mean;
  const Eigen::Matrix3d cov = (data.transpose() * data) / static_cast<double>(n);
  if (cov.trace() <= 0.0) throw InvalidArgument("zero-variance input has no principal axis");

  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  Eigen::Vector3d axis = solver.eigenvectors().col(2);  // eigenvalues ascending
  Eigen::Index dominant = 0;
  cov.diagonal().maxCoeff(&dominant);
  if (axis(dominant) < 0.0) axis = -axis;

  const Eigen::VectorXd proj = data * axis;
  return {std::vector<double>(proj.data(), proj.data() + proj.size()), ReductionMethod::PCA};
}

ReducedTrace reduce(const AxisTraceSet& t, ReductionMethod method) {
  return method == ReductionMethod::PCA ? pca_reduce(t) : dft321(t);
}

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

double energy(const ReducedTrace& r) { return energy(r.samples); }

double mean_hand_energy(const EnergyMatrix& m) {
  double sum = 0.0;
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    for (std::size_t s = 0; s < kNumSensors; ++s) {
      if (!m[f][s]) {
        throw InvalidArgument("energy matrix is missing finger " + std::to_string(f) + ", sensor " +
                              std::to_string(s));
      }
      sum += *m[f][s];
    }
  }
  return sum / static_cast<double>(kNumFingers * kNumSensors);
}

PipelineResult run_pipeline(const sim::SimOutput& sim, const PipelineConfig& cfg) {
  PipelineResult out;
  for (std::size_t j = 0; j < sim.sensor_traces.size(); ++j) {
    const AxisTraceSet repaired = repair_gaps(sim.sensor_traces[j]);
    const AxisTraceSet filtered = highpass(repaired, cfg);
    const AlignedWindow aligned = align_window(filtered, sim.force, cfg);
    out.padded = out.padded || aligned.padded;
    out.traces.push_back(reduce(aligned.window, cfg.reduction));
    if (j < kNumSensors) out.energies[j] = energy(out.traces.back());
  }
  if (out.traces.size() != kNumSensors) throw InvalidArgument("simulation output must have 5 sensor traces");
  return out;
}

ImpactSample to_impact_sample(const sim::SimOutput& sim, HandArchetype hand, const PipelineConfig& cfg) {
  PipelineResult r = run_pipeline(sim, cfg);
  return {sim.finger, std::move(r.traces), hand, sim.meta};
}

EnergyMatrix energy_matrix(std::span<const sim::SimOutput> outputs, const PipelineConfig& cfg) {
  std::array<std::array<double, kNumSensors>, kNumFingers> sum{};
  std::array<std::size_t, kNumFingers> count{};
  for (const auto& o : outputs) {
    const auto r = run_pipeline(o, cfg);
    const auto f = index_of(o.finger);
    for (std::size_t s = 0; s < kNumSensors; ++s) sum[f][s] += r.energies[s];
    ++count[f];
  }
  EnergyMatrix m{};
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    if (count[f] == 0) continue;
    for (std::size_t s = 0; s < kNumSensors; ++s) m[f][s] = sum[f][s] / static_cast<double>(count[f]);
  }
  return m;
}

sim::ImpactorConfig dataset_impactor() {
  auto c = sim::ImpactorConfig::hammer();
  c.velocity_jitter = 0.2;
  c.direction_jitter_deg = 8.0;
  return c;
}

Dataset generate_dataset(HandArchetype hand, std::uint64_t seed, const DatasetOptions& opt) {
  if (opt.n_per_finger < 1) throw InvalidArgument("n_per_finger must be >= 1");
  opt.pipeline.validate(opt.sim.sample_rate);
  const sim::HandModel model = sim::build_hand_model(hand);
  const std::size_t n = opt.n_per_finger;
  const std::size_t total = n * kNumFingers;

  Dataset d;
  d.samples.resize(total);
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  const auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= total) return;
      const Finger f = kAllFingers[k / n];
      try {
        const auto out = sim::simulate_impact(model, opt.impactor, f, sim::impact_seed(seed, f, k % n), opt.sim);
        d.samples[k] = to_impact_sample(out, hand, opt.pipeline);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        next = total;
      }
    }
  };
  const unsigned threads = std::max(1u, opt.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  d.manifest.hand = hand;
  d.manifest.generation_seed = seed;
  d.manifest.role = DatasetRole::Full;
  return d;
}

}  // namespace vibtx::dsp
