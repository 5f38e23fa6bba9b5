#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "svg.hpp"
#include "vibtx/archive.hpp"
#include "vibtx/dsp.hpp"
#include "vibtx/errors.hpp"
#include "vibtx/lstm.hpp"
#include "vibtx/metrics.hpp"
#include "vibtx/rng.hpp"
#include "vibtx/transmission_sim.hpp"

#ifndef VIBTX_VERSION
#define VIBTX_VERSION "0.0.0"
#endif

namespace vibtx::cli {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProvenanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 42;
  std::string out = "vibtx-out";
  unsigned threads = 1;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string num(double v, const char* f = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string pct(double v) { return num(100.0 * v, "%.1f%%"); }

HandArchetype hand_arg(const std::string& s) {
  const auto h = parse_archetype(s);
  if (!h) throw UsageError("unknown hand '" + s + "'");
  return *h;
}

const std::vector<std::string> kHandChoices = {"CH", "VP", "IL", "SH"};

CLI::Option* add_hand(CLI::App* sub, std::string& target) {
  return sub->add_option("--hand", target, "Hand archetype: CH, VP, IL or SH")
      ->transform(CLI::IsMember(kHandChoices, CLI::ignore_case));
}

class Run {
 public:
  Run(std::string subcommand, const Globals& g, const CLI::App& app)
      : sub_(std::move(subcommand)), g_(g), app_(app), started_(utc_now()), dir_(g.out) {
    fs::create_directories(dir_);
  }

  [[nodiscard]] const fs::path& dir() const { return dir_; }
  void input(const fs::path& p) { inputs_.push_back(p.string()); }
  fs::path output(const std::string& name) {
    outputs_.push_back(name);
    return dir_ / name;
  }
  void write_text(const std::string& name, const std::string& text) { io::write_text_file(output(name), text); }

  void finish() {
    io::Manifest m;
    m.set("subcommand", sub_);
    m.set("toolkit_version", std::string(VIBTX_VERSION));
    m.set("seed", g_.seed);
    m.set("threads", static_cast<std::uint64_t>(g_.threads));
    m.set("out_dir", dir_.string());
    m.set("inputs", join(inputs_));
    m.set("outputs", join(outputs_));
    m.set("started_utc", started_);
    m.set("finished_utc", utc_now());
    std::string text = m.to_text();
    text += "# configuration snapshot\n[" + sub_ + "]\n";
    text += app_.config_to_str(true, false);
    io::write_text_file(dir_ / "run_manifest.txt", text);
  }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
  }

  std::string sub_;
  Globals g_;
  const CLI::App& app_;
  std::string started_;
  fs::path dir_;
  std::vector<std::string> inputs_, outputs_;
};

struct SimFlags {
  std::string impactor = "pendulum";
  double speed_jitter = 0.0;
  double direction_jitter = 0.0;
  double noise = 0.02;
  bool clip = false;
  double comm_error_rate = 0.0;
  double release_angle = 3.0;

  void add(CLI::App* sub) {
    sub->add_option("--impactor", impactor, "hammer or pendulum")
        ->transform(CLI::IsMember({"hammer", "pendulum"}, CLI::ignore_case))
        ->capture_default_str();
    sub->add_option("--speed-jitter", speed_jitter, "Relative std-dev of impact speed")->capture_default_str();
    sub->add_option("--direction-jitter", direction_jitter, "Std-dev of impact tilt, degrees")->capture_default_str();
    sub->add_option("--release-angle", release_angle, "Pendulum release angle, degrees")->capture_default_str();
    sub->add_option("--noise", noise, "Accelerometer noise std-dev, m/s^2")->capture_default_str();
    sub->add_flag("--clip", clip, "Saturate accelerations at 16 g");
    sub->add_option("--comm-error-rate", comm_error_rate, "Probability a sample is lost")->capture_default_str();
  }

  [[nodiscard]] sim::ImpactorConfig impactor_config() const {
    auto c = impactor == "hammer" ? sim::ImpactorConfig::hammer() : sim::ImpactorConfig::pendulum();
    c.velocity_jitter = speed_jitter;
    c.direction_jitter_deg = direction_jitter;
    c.release_angle_deg = release_angle;
    return c;
  }

  [[nodiscard]] sim::SimOptions options() const {
    sim::SimOptions o;
    o.noise_std = noise;
    o.clip = clip;
    o.comm_error_rate = comm_error_rate;
    return o;
  }
};

struct PipelineFlags {
  dsp::PipelineConfig cfg;
  std::string reduction = "dft321";

  void add(CLI::App* sub) {
    sub->add_option("--cutoff", cfg.highpass_cutoff, "High-pass cutoff, Hz")->capture_default_str();
    sub->add_option("--filter-order", cfg.highpass_order, "High-pass order (even)")->capture_default_str();
    sub->add_option("--pre-peak", cfg.pre_peak_offset, "Window samples before the force peak")
        ->capture_default_str();
    sub->add_option("--reduction", reduction, "dft321 or pca")
        ->transform(CLI::IsMember({"dft321", "pca"}, CLI::ignore_case))
        ->capture_default_str();
  }

  [[nodiscard]] dsp::PipelineConfig config() const {
    auto c = cfg;
    c.reduction = *parse_reduction(reduction);
    return c;
  }
};

std::string energy_csv(const std::vector<std::pair<HandArchetype, dsp::EnergyMatrix>>& rows) {
  std::string s = "hand,finger";
  for (std::size_t j = 0; j < kNumSensors; ++j) s += ",imu" + std::to_string(j + 1);
  s += "\n";
  for (const auto& [hand, m] : rows) {
    for (std::size_t f = 0; f < kNumFingers; ++f) {
      s += std::string(to_string(hand)) + "," + std::string(to_string(kAllFingers[f]));
      for (std::size_t j = 0; j < kNumSensors; ++j) s += "," + (m[f][j] ? num(*m[f][j]) : std::string());
      s += "\n";
    }
  }
  return s;
}

BarChart energy_chart(HandArchetype hand, const dsp::EnergyMatrix& m) {
  BarChart c;
  c.title = "Socket energy per contacted finger, " + std::string(to_string(hand));
  c.y_label = "energy of reduced signal (m^2/s^4)";
  for (auto f : kAllFingers) c.groups.emplace_back(to_string(f));
  for (std::size_t j = 0; j < kNumSensors; ++j) c.series.push_back("IMU " + std::to_string(j + 1));
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    std::vector<double> row;
    for (std::size_t j = 0; j < kNumSensors; ++j) row.push_back(m[f][j].value_or(0.0));
    c.values.push_back(std::move(row));
  }
  return c;
}

// ---------------------------------------------------------------------------

struct SimulateCmd {
  std::string hand;
  std::size_t n = 3;
  SimFlags sim;

  void add(CLI::App* sub) {
    add_hand(sub, hand)->required();
    sub->add_option("--n", n, "Impacts per finger")->capture_default_str()->check(CLI::PositiveNumber);
    sim.add(sub);
  }

  void operator()(Run& run, const Globals& g, std::ostream& out) const {
    sim::SimArchive a;
    a.hand = hand_arg(hand);
    a.seed = g.seed;
    a.impactor = sim.impactor_config();
    a.options = sim.options();
    a.outputs = sim::batch_simulate(sim::build_hand_model(a.hand), a.impactor, n, g.seed, a.options, g.threads);
    const std::string name = "sim_" + std::string(to_string(a.hand)) + ".vtx";
    sim::save_sim_archive(a, run.output(name));
    out << "simulated " << a.outputs.size() << " impacts on " << to_string(a.hand) << " -> "
        << (run.dir() / name).string() << "\n";
  }
};

struct PipelineCmd {
  std::string sim_path;
  PipelineFlags pipe;

  void add(CLI::App* sub) {
    sub->add_option("--sim", sim_path, "Simulation archive")->required();
    pipe.add(sub);
  }

  void operator()(Run& run, const Globals&, std::ostream& out) const {
    run.input(sim_path);
    const auto a = sim::load_sim_archive(sim_path);
    const auto cfg = pipe.config();
    std::string impacts = "index,finger,seed,impact_speed,padded";
    for (std::size_t j = 0; j < kNumSensors; ++j) impacts += ",energy_imu" + std::to_string(j + 1);
    impacts += "\n";
    for (std::size_t i = 0; i < a.outputs.size(); ++i) {
      const auto& o = a.outputs[i];
      const auto r = dsp::run_pipeline(o, cfg);
      impacts += std::to_string(i) + "," + std::string(to_string(o.finger)) + "," + std::to_string(o.meta.seed) +
                 "," + num(o.meta.impact_speed) + "," + (r.padded ? "1" : "0");
      for (double e : r.energies) impacts += "," + num(e);
      impacts += "\n";
    }
    const auto m = dsp::energy_matrix(a.outputs, cfg);
    const std::string h(to_string(a.hand));
    run.write_text("impacts_" + h + ".csv", impacts);
    run.write_text("energy_" + h + ".csv", energy_csv({{a.hand, m}}));
    run.write_text("energy_" + h + ".svg", render_svg(energy_chart(a.hand, m)));
    bool complete = true;
    for (const auto& row : m) {
      for (const auto& e : row) complete = complete && e.has_value();
    }
    out << "processed " << a.outputs.size() << " impacts";
    if (complete) out << "; mean socket energy " << num(dsp::mean_hand_energy(m));
    out << "\n";
  }
};

struct DatasetCmd {
  std::string hand;
  std::size_t n = 100;
  double speed_jitter = dsp::dataset_impactor().velocity_jitter;
  double direction_jitter = dsp::dataset_impactor().direction_jitter_deg;
  double noise = 0.02;
  PipelineFlags pipe;

  void add(CLI::App* sub) {
    add_hand(sub, hand)->required();
    sub->add_option("--n", n, "Impacts per finger")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--speed-jitter", speed_jitter, "Relative std-dev of hammer speed")->capture_default_str();
    sub->add_option("--direction-jitter", direction_jitter, "Std-dev of hammer tilt, degrees")
        ->capture_default_str();
    sub->add_option("--noise", noise, "Accelerometer noise std-dev, m/s^2")->capture_default_str();
    pipe.add(sub);
  }

  void operator()(Run& run, const Globals& g, std::ostream& out) const {
    dsp::DatasetOptions o;
    o.n_per_finger = n;
    o.impactor.velocity_jitter = speed_jitter;
    o.impactor.direction_jitter_deg = direction_jitter;
    o.sim.noise_std = noise;
    o.pipeline = pipe.config();
    o.threads = g.threads;
    const auto h = hand_arg(hand);
    const Dataset d = dsp::generate_dataset(h, g.seed, o);
    const auto v = validate_dataset(d);
    if (!v.empty()) throw Error("generated dataset failed validation: " + v.front().rule + ": " + v.front().detail);
    const std::string name = "dataset_" + std::string(to_string(h)) + ".vtx";
    save_dataset(d, run.output(name));
    char fp[16];
    std::snprintf(fp, sizeof(fp), "%08x", dataset_fingerprint(d));
    out << "dataset " << to_string(h) << ": " << d.samples.size() << " samples, fingerprint " << fp << " -> "
        << (run.dir() / name).string() << "\n";
  }
};

struct SplitCmd {
  std::string dataset;
  double train = 0.8, validation = 0.1, test = 0.1;

  void add(CLI::App* sub) {
    sub->add_option("--dataset", dataset, "Dataset archive to split")->required();
    sub->add_option("--train-frac", train)->capture_default_str();
    sub->add_option("--val-frac", validation)->capture_default_str();
    sub->add_option("--test-frac", test)->capture_default_str();
  }

  void operator()(Run& run, const Globals& g, std::ostream& out) const {
    run.input(dataset);
    const Dataset d = load_dataset(dataset);
    const auto s = split_dataset(d, {train, validation, test}, g.seed);
    save_dataset(s.train, run.output("train.vtx"));
    save_dataset(s.validation, run.output("validation.vtx"));
    save_dataset(s.test, run.output("test.vtx"));
    out << "split " << d.samples.size() << " samples into " << s.train.samples.size() << "/"
        << s.validation.samples.size() << "/" << s.test.samples.size() << "\n";
  }
};

struct TrainCmd {
  std::string train_path, val_path, preset;
  double lr = 1e-3;
  std::size_t epochs = 50, dense = 32, hidden = 32, batch = 32;
  double dropout = 0.2;
  bool verbose = false;
  CLI::Option *lr_opt = nullptr, *epochs_opt = nullptr, *dense_opt = nullptr, *hidden_opt = nullptr,
              *batch_opt = nullptr;

  void add(CLI::App* sub) {
    sub->add_option("--train", train_path, "Training split")->required();
    sub->add_option("--val", val_path, "Validation split")->required();
    sub->add_option("--preset", preset,
                    "Tuned settings per hand (lr/epochs/dense/hidden/batch): VP 0.0011/68/40/40/64, "
                    "CH 0.0016/168/37/40/32, IL 0.0027/185/21/39/64, SH 0.0033/82/18/39/64. "
                    "Explicit flags override.")
        ->transform(CLI::IsMember(kHandChoices, CLI::ignore_case));
    lr_opt = sub->add_option("--lr", lr, "Initial learning rate")->capture_default_str();
    epochs_opt = sub->add_option("--epochs", epochs)->capture_default_str()->check(CLI::PositiveNumber);
    dense_opt = sub->add_option("--dense", dense, "Units per dense layer")->capture_default_str()->check(CLI::PositiveNumber);
    hidden_opt = sub->add_option("--hidden", hidden, "LSTM hidden units")->capture_default_str()->check(CLI::PositiveNumber);
    batch_opt = sub->add_option("--batch", batch, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--dropout", dropout)->capture_default_str();
    sub->add_flag("--verbose", verbose, "Print every epoch");
  }

  void operator()(Run& run, const Globals& g, std::ostream& out) const {
    nn::NetworkSpec spec;
    nn::TrainConfig cfg;
    spec.dense_units = dense;
    spec.lstm_hidden = hidden;
    spec.dropout = dropout;
    cfg.learning_rate = lr;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.seed = g.seed;
    if (!preset.empty()) {
      const auto p = nn::hand_preset(hand_arg(preset));
      if (lr_opt->count() == 0) cfg.learning_rate = p.learning_rate;
      if (epochs_opt->count() == 0) cfg.epochs = p.epochs;
      if (dense_opt->count() == 0) spec.dense_units = p.dense_units;
      if (hidden_opt->count() == 0) spec.lstm_hidden = p.lstm_hidden;
      if (batch_opt->count() == 0) cfg.batch_size = p.batch_size;
    }
    run.input(train_path);
    run.input(val_path);
    const Dataset tr = load_dataset(train_path);
    const Dataset va = load_dataset(val_path);
    out << "training: lr " << num(cfg.learning_rate) << ", epochs " << cfg.epochs << ", dense " << spec.dense_units
        << ", hidden " << spec.lstm_hidden << ", batch " << cfg.batch_size << "\n";
    const auto res = nn::train(spec, cfg, tr, va, [&](const nn::EpochRecord& e) {
      if (verbose) out << "epoch " << e.epoch << " loss " << num(e.train_loss) << " val " << pct(e.val_accuracy) << "\n";
    });
    std::string hist = "epoch,train_loss,val_accuracy\n";
    for (const auto& e : res.history) {
      hist += std::to_string(e.epoch) + "," + num(e.train_loss, "%.9g") + "," + num(e.val_accuracy) + "\n";
    }
    run.write_text("history.csv", hist);
    nn::save_model(res.params, run.output("model.vtx"));
    out << "best epoch " << res.best_epoch << ", validation accuracy " << pct(res.best_val_accuracy) << " -> "
        << (run.dir() / "model.vtx").string() << "\n";
  }
};

struct EvalCmd {
  std::string model_path, data_path, val_path;

  void add(CLI::App* sub) {
    sub->add_option("--model", model_path, "Trained model")->required();
    sub->add_option("--data", data_path, "Test split")->required();
    sub->add_option("--val", val_path, "Validation split, for the summary line");
  }

  void operator()(Run& run, const Globals&, std::ostream& out) const {
    run.input(model_path);
    run.input(data_path);
    const auto p = nn::load_model(model_path);
    const Dataset test = load_dataset(data_path);
    const auto ev = nn::evaluate(p, test);
    if (!ev.warnings.empty()) throw ProvenanceError(ev.warnings.front() + "; refusing to report");
    std::optional<double> val_acc;
    if (!val_path.empty()) {
      run.input(val_path);
      const auto v = nn::evaluate(p, load_dataset(val_path));
      if (!v.warnings.empty()) throw ProvenanceError(v.warnings.front() + "; refusing to report");
      val_acc = v.accuracy;
    }
    const std::string hand(to_string(test.manifest.hand));
    const metrics::Report report{"Test confusion matrix, " + hand, ev.cm, metrics::finger_names()};
    std::string summary = "hand  validation_accuracy  test_accuracy  test_mean_precision\n";
    summary += hand + std::string(6 - std::min<std::size_t>(hand.size(), 5), ' ') +
               (val_acc ? pct(*val_acc) : std::string("n/a")) + "                " + pct(ev.accuracy) + "          " +
               pct(ev.macro_precision.value) + "\n";
    std::string csv = metrics::to_csv(report);
    csv += "validation_accuracy," + (val_acc ? num(*val_acc, "%.6f") : std::string()) + "\n";
    run.write_text("report.txt", metrics::format_table(report) + "\n" + summary);
    run.write_text("report.csv", csv);
    out << metrics::format_table(report) << "\n" << summary;
  }
};

struct SearchCmd {
  std::string train_path, val_path;
  std::size_t budget = 30;
  nn::SearchSpace space;

  void add(CLI::App* sub) {
    sub->add_option("--train", train_path, "Training split")->required();
    sub->add_option("--val", val_path, "Validation split")->required();
    sub->add_option("--budget", budget, "Number of trials")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--lr-min", space.lr_min)->capture_default_str();
    sub->add_option("--lr-max", space.lr_max)->capture_default_str();
    sub->add_option("--epochs-min", space.epochs_min)->capture_default_str();
    sub->add_option("--epochs-max", space.epochs_max)->capture_default_str();
    sub->add_option("--dense-min", space.dense_min)->capture_default_str();
    sub->add_option("--dense-max", space.dense_max)->capture_default_str();
    sub->add_option("--hidden-min", space.hidden_min)->capture_default_str();
    sub->add_option("--hidden-max", space.hidden_max)->capture_default_str();
  }

  void operator()(Run& run, const Globals& g, std::ostream& out) const {
    run.input(train_path);
    run.input(val_path);
    const Dataset tr = load_dataset(train_path);
    const Dataset va = load_dataset(val_path);
    const auto r = nn::hyper_search(space, budget, g.seed, tr, va, {}, g.threads);
    run.write_text("trials.csv", nn::trials_csv(r));
    std::string best = "# best of " + std::to_string(budget) + " trials, validation accuracy " +
                       num(r.val_accuracy, "%.4f") + "\n[train]\n";
    best += "lr=" + num(r.cfg.learning_rate, "%.6g") + "\n";
    best += "epochs=" + std::to_string(r.cfg.epochs) + "\n";
    best += "dense=" + std::to_string(r.spec.dense_units) + "\n";
    best += "hidden=" + std::to_string(r.spec.lstm_hidden) + "\n";
    best += "batch=" + std::to_string(r.cfg.batch_size) + "\n";
    run.write_text("best_config.ini", best);
    out << "best trial " << r.best_trial << ": validation accuracy " << pct(r.val_accuracy) << "\n" << best;
  }
};

struct ReportCmd {
  std::vector<std::string> sims;
  bool simulate = false;
  std::size_t n = 25;
  PipelineFlags pipe;

  void add(CLI::App* sub) {
    sub->add_option("--sim", sims, "Four simulation archives, one per hand");
    sub->add_flag("--simulate", simulate, "Simulate pendulum impacts on all four presets instead");
    sub->add_option("--n", n, "Impacts per finger with --simulate")->capture_default_str()->check(CLI::PositiveNumber);
    pipe.add(sub);
  }

  void operator()(Run& run, const Globals& g, std::ostream& out) const {
    const auto cfg = pipe.config();
    std::map<HandArchetype, dsp::EnergyMatrix> by_hand;
    if (simulate) {
      if (!sims.empty()) throw UsageError("use either --sim or --simulate");
      for (auto h : kAllArchetypes) {
        const auto outputs = sim::batch_simulate(sim::build_hand_model(h), sim::ImpactorConfig::pendulum(), n,
                                                 derive_seed(g.seed, static_cast<std::uint64_t>(h)), {}, g.threads);
        by_hand[h] = dsp::energy_matrix(outputs, cfg);
      }
    } else {
      if (sims.size() != kAllArchetypes.size()) {
        throw UsageError("transmission-report requires four archives, one per hand (got " +
                         std::to_string(sims.size()) + ")");
      }
      for (const auto& path : sims) {
        run.input(path);
        const auto a = sim::load_sim_archive(path);
        if (by_hand.count(a.hand)) {
          throw UsageError("transmission-report requires four archives, one per hand (" +
                           std::string(to_string(a.hand)) + " given twice)");
        }
        by_hand[a.hand] = dsp::energy_matrix(a.outputs, cfg);
      }
    }

    std::vector<std::pair<HandArchetype, dsp::EnergyMatrix>> rows(by_hand.begin(), by_hand.end());
    std::vector<double> means, acc;
    std::string means_csv = "hand,mean_energy,perception_accuracy\n";
    BarChart means_chart{"Mean socket energy per hand", "mean energy (m^2/s^4)", {}, {"mean energy"}, {}};
    for (const auto& [h, m] : rows) {
      const double mean = dsp::mean_hand_energy(m);
      means.push_back(mean);
      acc.push_back(kPerceptionAccuracy[static_cast<std::size_t>(h)]);
      means_csv += std::string(to_string(h)) + "," + num(mean) + "," + num(acc.back()) + "\n";
      means_chart.groups.emplace_back(to_string(h));
      means_chart.values.push_back({mean});
      run.write_text("energy_" + std::string(to_string(h)) + ".svg", render_svg(energy_chart(h, m)));
    }
    const auto rho = metrics::spearman_rho(means, acc);
    std::string text = "hand  mean_energy  perception_accuracy\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      char line[128];
      std::snprintf(line, sizeof(line), "%-5s %11.4g  %5.0f%%\n", std::string(to_string(rows[i].first)).c_str(),
                    means[i], acc[i]);
      text += line;
    }
    text += "spearman_rho=" + (rho ? num(*rho, "%.4f") : std::string("undefined (constant energies)")) + "\n";

    run.write_text("energy_matrix.csv", energy_csv(rows));
    run.write_text("hand_means.csv", means_csv);
    run.write_text("hand_means.svg", render_svg(means_chart));
    run.write_text("spearman.txt", text);
    out << text;
  }
};

void register_all(CLI::App& app, Globals& g) {
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--out", g.out, std::string("Output directory (default from $") + kOutEnv + ")")
      ->envname(kOutEnv)
      ->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for simulation and search")
      ->capture_default_str()
      ->check(CLI::Range(1u, 256u));
  app.set_config("--config", "", "Read options from an INI file (global keys, [subcommand] sections)");
  app.require_subcommand(1);
}

template <typename Cmd>
int dispatch(const Cmd& cmd, const CLI::App* sub, const Globals& g, std::ostream& out) {
  Run run(sub->get_name(), g, *sub);
  cmd(run, g, out);
  run.finish();
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Impact-vibration transmission simulator, processing pipeline and finger classifier", "vibtx"};
  app.set_version_flag("--version", std::string(VIBTX_VERSION));
  Globals g;
  register_all(app, g);

  SimulateCmd simulate;
  PipelineCmd pipeline;
  DatasetCmd dataset;
  SplitCmd split;
  TrainCmd train;
  EvalCmd eval;
  SearchCmd search;
  ReportCmd report;
  auto* c_sim = app.add_subcommand("simulate", "Simulate impacts on every finger of one hand");
  auto* c_pipe = app.add_subcommand("pipeline", "Filter, align and reduce a simulation archive; energy tables");
  auto* c_data = app.add_subcommand("dataset", "Generate a labelled classification dataset");
  auto* c_split = app.add_subcommand("split", "Stratified 80/10/10 split of a dataset");
  auto* c_train = app.add_subcommand("train", "Train the LSTM classifier");
  auto* c_eval = app.add_subcommand("eval", "Evaluate a model on a held-out split");
  auto* c_search = app.add_subcommand("search", "Random hyperparameter search");
  auto* c_report = app.add_subcommand(
      "transmission-report",
      "Energy bar charts and rank correlation against perception accuracies CH 58, VP 52, IL 45, SH 37 (%)");
  simulate.add(c_sim);
  pipeline.add(c_pipe);
  dataset.add(c_data);
  split.add(c_split);
  train.add(c_train);
  eval.add(c_eval);
  search.add(c_search);
  report.add(c_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "vibtx: error: usage: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (c_sim->parsed()) return dispatch(simulate, c_sim, g, out);
    if (c_pipe->parsed()) return dispatch(pipeline, c_pipe, g, out);
    if (c_data->parsed()) return dispatch(dataset, c_data, g, out);
    if (c_split->parsed()) return dispatch(split, c_split, g, out);
    if (c_train->parsed()) return dispatch(train, c_train, g, out);
    if (c_eval->parsed()) return dispatch(eval, c_eval, g, out);
    if (c_search->parsed()) return dispatch(search, c_search, g, out);
    if (c_report->parsed()) return dispatch(report, c_report, g, out);
    err << "vibtx: error: usage: no subcommand\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "vibtx: error: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ProvenanceError& e) {
    err << "vibtx: error: provenance: " << e.what() << "\n";
  } catch (const ChecksumError& e) {
    err << "vibtx: error: checksum: " << e.what() << "\n";
  } catch (const FormatError& e) {
    err << "vibtx: error: format: " << e.what() << "\n";
  } catch (const IoError& e) {
    err << "vibtx: error: io: " << e.what() << "\n";
  } catch (const NumericalError& e) {
    err << "vibtx: error: numerical: " << e.what() << "\n";
  } catch (const InvalidArgument& e) {
    err << "vibtx: error: invalid-argument: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "vibtx: error: runtime: " << e.what() << "\n";
  }
  return kExitRuntime;
}

}  // namespace vibtx::cli
