// dohsim: cohort generation/validation, safety-bound calibration, and
// closed-loop induction experiments for the anesthesia toolkit.
//
// Exit codes are stable API: 0 ok, 1 bad command line, 2 input validation
// failure, 3 calibration/runtime failure, 4 strict-mode violation.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "doh/calibration.hpp"
#include "doh/cohort.hpp"
#include "doh/config.hpp"
#include "doh/controller.hpp"
#include "doh/erg.hpp"
#include "doh/simulate.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitStrict = 4;

int worker_count() {
  if (const char* env = std::getenv("DOHSIM_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n >= 1 && n <= 256) return static_cast<int>(n);
    std::cerr << "warning: ignoring invalid DOHSIM_THREADS='" << env << "'\n";
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Flag wins when given on the command line, then the config file, then the
// built-in default already stored in `v`.
template <typename T>
T pick(const CLI::Option* opt, T v, const doh::ConfigMap& cfg, const std::string& key) {
  if (opt != nullptr && opt->count() > 0) return v;
  return doh::config_get(cfg, key, v);
}

std::uint64_t pick_u64(const CLI::Option* opt, std::uint64_t v, const doh::ConfigMap& cfg,
                       const std::string& key) {
  if (opt != nullptr && opt->count() > 0) return v;
  const auto it = cfg.find(key);
  if (it == cfg.end()) return v;
  char* end = nullptr;
  const unsigned long long parsed = std::strtoull(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw std::runtime_error("config key '" + key + "': not an integer: " + it->second);
  return parsed;
}

doh::ConfigMap load_config_if(const std::string& path) {
  if (path.empty()) return {};
  return doh::load_config(path);
}

/// Group controller with any [controller.groupN] / [controller] overrides.
doh::ControllerConfig controller_from_config(const doh::ConfigMap& cfg, int group) {
  doh::ControllerConfig c = doh::controller_defaults(group);
  const std::string p = "controller.group" + std::to_string(group) + ".";
  c.pid = doh::PidParams::make(
      doh::config_get(cfg, p + "kp", c.pid.kp), doh::config_get(cfg, p + "ki", c.pid.ki),
      doh::config_get(cfg, p + "kd", c.pid.kd), doh::config_get(cfg, p + "Tt", c.pid.Tt));
  c.prefilter.Tsp = doh::config_get(cfg, p + "Tsp", c.prefilter.Tsp);
  const double umaxMlh = doh::config_get(cfg, "controller.umax_mlh", c.sat.uMax * 360.0);
  if (!(umaxMlh > 0)) throw std::runtime_error("controller.umax_mlh must be > 0");
  c.sat.uMax = umaxMlh / 360.0;
  return c;
}

void print_cohort_summary(std::ostream& os, const std::vector<doh::PatientModel>& cohort) {
  os << "patients: " << cohort.size() << "\n";
  char buf[256];
  for (int g = 1; g <= doh::kNumGroups; ++g) {
    int n = 0;
    double ageLo = 1e300, ageHi = -1e300;
    double v1Lo = 1e300, v1Hi = -1e300, ecLo = 1e300, ecHi = -1e300;
    double gaLo = 1e300, gaHi = -1e300;
    for (const auto& p : cohort) {
      if (p.group != g) continue;
      ++n;
      ageLo = std::min(ageLo, p.age);
      ageHi = std::max(ageHi, p.age);
      v1Lo = std::min(v1Lo, p.pk.V1);
      v1Hi = std::max(v1Hi, p.pk.V1);
      ecLo = std::min(ecLo, p.pd.EC50);
      ecHi = std::max(ecHi, p.pd.EC50);
      gaLo = std::min(gaLo, p.pd.gamma);
      gaHi = std::max(gaHi, p.pd.gamma);
    }
    if (n == 0) {
      std::snprintf(buf, sizeof buf, "  group %d: 0 patients\n", g);
      os << buf;
      continue;
    }
    std::snprintf(buf, sizeof buf,
                  "  group %d: %d patients, age [%g, %g], V1 [%.3g, %.3g] l, EC50 "
                  "[%.3g, %.3g] ug/ml, gamma [%.3g, %.3g]\n",
                  g, n, ageLo, ageHi, v1Lo, v1Hi, ecLo, ecHi, gaLo, gaHi);
    os << buf;
  }
}

// ---- cohort ---------------------------------------------------------------

struct GenerateArgs {
  std::string out = "cohort.csv";
  int n = 44;
  std::uint64_t seed = 1;
  double spread = 0.1;
};

int cmd_generate(const GenerateArgs& a) {
  try {
    doh::CohortSpec spec;
    spec.n = a.n;
    spec.seed = a.seed;
    spec.spread = a.spread;
    const auto cohort = doh::generate_cohort(spec);
    char note[128];
    std::snprintf(note, sizeof note, "generated: n=%d seed=%llu spread=%g", a.n,
                  static_cast<unsigned long long>(a.seed), a.spread);
    doh::save_cohort(fs::path(a.out), cohort, note);
    std::cout << "wrote " << a.out << "\n";
    print_cohort_summary(std::cout, cohort);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

int cmd_validate(const std::string& path) {
  try {
    const auto cohort = doh::load_cohort(fs::path(path));
    std::cout << path << ": OK\n";
    print_cohort_summary(std::cout, cohort);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

// ---- calibrate ------------------------------------------------------------

struct CalibrateArgs {
  std::string cohortPath;
  std::string out = "bounds.txt";
  std::string configPath;
  doh::CalibrationConfig cc;
  const CLI::Option *oRuns = nullptr, *oSeed = nullptr, *oDuration = nullptr,
                    *oDt = nullptr, *oInflation = nullptr, *oPade = nullptr;
};

int cmd_calibrate(CalibrateArgs& a) {
  std::vector<doh::PatientModel> cohort;
  doh::ConfigMap cfg;
  try {
    cfg = load_config_if(a.configPath);
    a.cc.runs = pick(a.oRuns, a.cc.runs, cfg, "calibrate.runs");
    a.cc.seed = pick_u64(a.oSeed, a.cc.seed, cfg, "calibrate.seed");
    a.cc.duration = pick(a.oDuration, a.cc.duration, cfg, "calibrate.duration");
    a.cc.dt = pick(a.oDt, a.cc.dt, cfg, "calibrate.dt");
    a.cc.inflation = pick(a.oInflation, a.cc.inflation, cfg, "calibrate.inflation");
    a.cc.padeOrder = pick(a.oPade, a.cc.padeOrder, cfg, "calibrate.pade_order");
    cohort = doh::load_cohort(fs::path(a.cohortPath));
    if (cohort.empty()) throw doh::CohortFormatError(a.cohortPath + ": no patients");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    const doh::CalibrationBounds b = doh::calibrate(cohort, a.cc);
    doh::save_bounds(a.out, b);
    std::cout << "wrote " << a.out << "\n";
    doh::write_bounds(std::cout, b);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "calibration failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---- run ------------------------------------------------------------------

struct RunArgs {
  std::string cohortPath;
  std::string outDir = "out";
  std::string boundsPath;
  std::string configPath;
  std::string modeStr = "erg";
  std::string clockStr = "reference";
  std::vector<std::string> patientIds;
  doh::SimConfig sim;
  double noiseVariance = 0.1;  // only applied when the flag/config key is present
  double noiseSd = 0.0;
  bool strict = false;
  bool appendix = false;
  bool noiseStudy = false;
  const CLI::Option *oDuration = nullptr, *oDt = nullptr, *oR = nullptr, *oSeed = nullptr,
                    *oStride = nullptr, *oNoiseVar = nullptr, *oNoiseSd = nullptr,
                    *oMode = nullptr, *oClock = nullptr, *oOut = nullptr,
                    *oBounds = nullptr;
};

void write_appendix_traces(const fs::path& dir, const std::vector<doh::PatientModel>& anchors,
                           const doh::SimConfig& base, doh::GainMode gainMode,
                           const std::string& fileName) {
  doh::SimConfig sim = base;
  sim.mode = doh::Mode::noPrefilter;  // direct reference step isolates the nonlinearity
  sim.noiseVariance.reset();

  std::vector<std::vector<double>> traces;
  traces.reserve(anchors.size());
  for (const auto& p : anchors)
    traces.push_back(doh::hill_linearization_error(p, gainMode, sim));

  std::ofstream os(dir / fileName);
  if (!os) throw std::runtime_error("cannot write " + (dir / fileName).string());
  os << "t_s";
  for (const auto& p : anchors) os << ",group" << p.group;
  os << "\n";
  char buf[64];
  const std::size_t n = traces.empty() ? 0 : traces.front().size();
  for (std::size_t k = 0; k < n; ++k) {
    std::snprintf(buf, sizeof buf, "%.10g", static_cast<double>(k) * sim.dt);
    os << buf;
    for (const auto& tr : traces) {
      std::snprintf(buf, sizeof buf, ",%.10g", tr[k]);
      os << buf;
    }
    os << "\n";
  }
}

int cmd_run(RunArgs& a) {
  std::vector<doh::PatientModel> cohort;
  std::vector<doh::Mode> modes;
  doh::ConfigMap cfg;
  doh::ErgConfig erg;
  bool wantsErg = false;
  fs::path outDir;

  try {
    cfg = load_config_if(a.configPath);

    a.sim.duration = pick(a.oDuration, a.sim.duration, cfg, "sim.duration");
    a.sim.dt = pick(a.oDt, a.sim.dt, cfg, "sim.dt");
    a.sim.r = pick(a.oR, a.sim.r, cfg, "sim.r");
    a.sim.seed = pick_u64(a.oSeed, a.sim.seed, cfg, "sim.seed");
    a.sim.trajStride = pick(a.oStride, a.sim.trajStride, cfg, "sim.traj_stride");
    if (a.sim.trajStride < 1) throw std::runtime_error("traj stride must be >= 1");

    const bool varGiven = a.oNoiseVar->count() > 0 || cfg.count("sim.noise_variance") > 0;
    const bool sdGiven = a.oNoiseSd->count() > 0 || cfg.count("sim.noise_sd") > 0;
    if (a.oNoiseVar->count() > 0 && a.oNoiseSd->count() > 0)
      throw std::runtime_error("give either --noise-variance or --noise-sd, not both");
    if (varGiven)
      a.sim.noiseVariance = pick(a.oNoiseVar, a.noiseVariance, cfg, "sim.noise_variance");
    else if (sdGiven) {
      const double sd = pick(a.oNoiseSd, a.noiseSd, cfg, "sim.noise_sd");
      a.sim.noiseVariance = sd * sd;
    }

    const std::string modeStr = pick(a.oMode, a.modeStr, cfg, "run.mode");
    if (modeStr == "all") {
      modes = {doh::Mode::noPrefilter, doh::Mode::passivePrefilter, doh::Mode::erg};
    } else if (const auto m = doh::mode_from_name(modeStr)) {
      modes = {*m};
    } else {
      throw std::runtime_error("unknown mode '" + modeStr +
                               "' (expected no-prefilter, passive, erg, or all)");
    }
    wantsErg = std::find(modes.begin(), modes.end(), doh::Mode::erg) != modes.end();

    erg.kappa = doh::config_get(cfg, "erg.kappa", erg.kappa);
    erg.eta = doh::config_get(cfg, "erg.eta", erg.eta);
    erg.horizonT = doh::config_get(cfg, "erg.horizon", erg.horizonT);
    erg.gridStep = doh::config_get(cfg, "erg.grid_step", erg.gridStep);
    erg.yLimit = doh::config_get(cfg, "erg.y_limit", erg.yLimit);
    erg.delta1HoldS = doh::config_get(cfg, "erg.delta1_hold", erg.delta1HoldS);
    erg.delta1TauS = doh::config_get(cfg, "erg.delta1_tau", erg.delta1TauS);
    erg.padeOrder = doh::config_get(cfg, "erg.pade_order", erg.padeOrder);
    const std::string clock = pick(a.oClock, a.clockStr, cfg, "erg.delta1_clock");
    if (clock == "reference")
      erg.delta1Clock = doh::ErgConfig::Delta1Clock::reference;
    else if (clock == "last-move")
      erg.delta1Clock = doh::ErgConfig::Delta1Clock::lastMove;
    else
      throw std::runtime_error("unknown delta1 clock '" + clock +
                               "' (expected reference or last-move)");

    const std::string boundsPath =
        pick(a.oBounds, a.boundsPath, cfg, "run.bounds");
    if (wantsErg) {
      if (boundsPath.empty())
        throw std::runtime_error("erg mode needs --bounds (calibrate first)");
      const doh::CalibrationBounds b = doh::load_bounds(boundsPath);
      erg.delta0 = b.delta0;
      erg.delta2 = b.delta2;
      erg.inflation = b.inflation;
    }

    cohort = doh::load_cohort(fs::path(a.cohortPath));
    if (!a.patientIds.empty()) {
      std::vector<doh::PatientModel> subset;
      for (const auto& id : a.patientIds) {
        const auto it = std::find_if(cohort.begin(), cohort.end(),
                                     [&](const auto& p) { return p.id == id; });
        if (it == cohort.end())
          throw std::runtime_error("patient '" + id + "' not in " + a.cohortPath);
        subset.push_back(*it);
      }
      cohort = std::move(subset);
    }
    if (cohort.empty()) throw std::runtime_error(a.cohortPath + ": no patients");

    outDir = fs::path(pick(a.oOut, a.outDir, cfg, "run.out"));
    fs::create_directories(outDir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  const bool hasOverrides =
      std::any_of(cfg.begin(), cfg.end(),
                  [](const auto& kv) { return kv.first.rfind("controller.", 0) == 0; });
  std::function<doh::ControllerConfig(int)> controllerFor;
  if (hasOverrides)
    controllerFor = [cfg](int group) { return controller_from_config(cfg, group); };

  const int workers = worker_count();
  auto sink = [&](const doh::PatientModel& p, const doh::SimResult& res) {
    const fs::path file =
        outDir / ("traj_" + p.id + "_" + std::string(doh::mode_name(res.metrics.mode)) +
                  ".csv");
    std::ofstream os(file);
    if (!os) throw std::runtime_error("cannot write " + file.string());
    doh::write_trajectory_csv(os, res.traj);
  };

  try {
    const doh::CohortExperimentResult result = doh::run_cohort_experiment(
        cohort, modes, a.sim, wantsErg ? &erg : nullptr, workers, sink, controllerFor);

    {
      std::ofstream os(outDir / "metrics.csv");
      doh::write_metrics_csv(os, result.metrics);
    }
    {
      std::ofstream os(outDir / "report.txt");
      doh::write_summary_report(os, result, a.sim);
    }
    doh::write_summary_report(std::cout, result, a.sim);

    if (a.noiseStudy) {
      if (a.sim.noiseVariance) {
        std::cout << "\nnoise study skipped: the main run is already noisy\n";
      } else {
        doh::SimConfig noisy = a.sim;
        noisy.noiseVariance = doh::config_get(cfg, "sim.noise_variance", 0.1);
        const auto noisyResult = doh::run_cohort_experiment(
            cohort, modes, noisy, wantsErg ? &erg : nullptr, workers, {}, controllerFor);
        {
          std::ofstream os(outDir / "metrics_noise.csv");
          doh::write_metrics_csv(os, noisyResult.metrics);
        }
        std::ofstream os(outDir / "report.txt", std::ios::app);
        os << "\n--- with measurement noise ---\n";
        doh::write_summary_report(os, noisyResult, noisy);
        std::cout << "\n--- with measurement noise ---\n";
        doh::write_summary_report(std::cout, noisyResult, noisy);
      }
    }

    if (a.appendix) {
      std::vector<doh::PatientModel> anchors;
      for (int g = 1; g <= doh::kNumGroups; ++g)
        anchors.push_back(doh::anchor_patient(g));
      write_appendix_traces(outDir, anchors, a.sim, doh::GainMode::unity,
                            "appendix_eh_unity.csv");
      write_appendix_traces(outDir, anchors, a.sim, doh::GainMode::halfGamma,
                            "appendix_eh_halfgamma.csv");
      std::cout << "wrote linearization-error traces (unity and half-gamma)\n";
    }

    if (a.strict) {
      int ergOverdosed = 0, ergFailures = 0;
      for (const auto& m : result.metrics)
        if (m.mode == doh::Mode::erg && m.overdosed) ++ergOverdosed;
      for (const auto& f : result.failures)
        if (f.mode == doh::Mode::erg) ++ergFailures;
      if (ergOverdosed > 0 || ergFailures > 0) {
        std::cerr << "strict: " << ergOverdosed << " overdosed and " << ergFailures
                  << " failed governor runs\n";
        return kExitStrict;
      }
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop anesthesia induction toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dohsim 0.1.0");

  // cohort generate / validate
  auto* cohortCmd = app.add_subcommand("cohort", "Create or check patient cohort files");
  cohortCmd->require_subcommand(1);

  GenerateArgs gen;
  auto* genCmd = cohortCmd->add_subcommand("generate", "Write a seeded synthetic cohort");
  genCmd->add_option("--out", gen.out, "Output cohort file")->capture_default_str();
  genCmd->add_option("--n", gen.n, "Number of patients")->capture_default_str();
  genCmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  genCmd->add_option("--spread", gen.spread, "Relative parameter spread")
      ->capture_default_str();

  std::string validatePath;
  auto* valCmd = cohortCmd->add_subcommand("validate", "Check a cohort file");
  valCmd->add_option("path", validatePath, "Cohort file")->required();

  // calibrate
  CalibrateArgs cal;
  auto* calCmd =
      app.add_subcommand("calibrate", "Estimate governor safety bounds for a cohort");
  calCmd->add_option("cohort", cal.cohortPath, "Cohort file")->required();
  calCmd->add_option("--out", cal.out, "Bounds output file")->capture_default_str();
  cal.oRuns = calCmd->add_option("--runs", cal.cc.runs, "Random profiles per patient")
                  ->capture_default_str();
  cal.oSeed =
      calCmd->add_option("--seed", cal.cc.seed, "Calibration seed")->capture_default_str();
  cal.oDuration = calCmd->add_option("--duration", cal.cc.duration, "Profile length [s]")
                      ->capture_default_str();
  cal.oDt = calCmd->add_option("--dt", cal.cc.dt, "Step [s]")->capture_default_str();
  cal.oInflation =
      calCmd->add_option("--inflation", cal.cc.inflation, "Safety bound inflation factor")
          ->capture_default_str();
  cal.oPade = calCmd->add_option("--pade-order", cal.cc.padeOrder, "Delay approximation order")
                  ->capture_default_str();
  calCmd->add_option("--config", cal.configPath, "Experiment config file");

  // run
  RunArgs run;
  auto* runCmd = app.add_subcommand("run", "Simulate the cohort and write CSVs + report");
  runCmd->add_option("cohort", run.cohortPath, "Cohort file")->required();
  run.oOut = runCmd->add_option("--out", run.outDir, "Output directory")
                 ->capture_default_str();
  run.oBounds = runCmd->add_option("--bounds", run.boundsPath,
                                   "Calibrated bounds file (required for erg)");
  run.oMode = runCmd->add_option("--mode", run.modeStr,
                                 "no-prefilter, passive, erg, or all")
                  ->capture_default_str();
  run.oDuration = runCmd->add_option("--duration", run.sim.duration, "Simulated time [s]")
                      ->capture_default_str();
  run.oDt = runCmd->add_option("--dt", run.sim.dt, "Step [s]")->capture_default_str();
  run.oR = runCmd->add_option("--r", run.sim.r, "Target level")->capture_default_str();
  run.oSeed =
      runCmd->add_option("--seed", run.sim.seed, "Noise seed")->capture_default_str();
  run.oNoiseVar = runCmd->add_option("--noise-variance", run.noiseVariance,
                                     "Effect noise variance (off by default)");
  run.oNoiseSd = runCmd->add_option("--noise-sd", run.noiseSd,
                                    "Effect noise standard deviation (off by default)");
  run.sim.trajStride = 10;
  run.oStride = runCmd->add_option("--traj-stride", run.sim.trajStride,
                                   "Keep every k-th trajectory sample")
                    ->capture_default_str();
  run.oClock = runCmd->add_option("--delta1-clock", run.clockStr,
                                  "Decay epoch for the time-varying bound: "
                                  "reference or last-move")
                   ->capture_default_str();
  runCmd->add_option("--patient", run.patientIds, "Only simulate these patient ids");
  runCmd->add_option("--config", run.configPath, "Experiment config file");
  runCmd->add_flag("--strict", run.strict,
                   "Exit 4 if any governor run overdoses or fails");
  runCmd->add_flag("--appendix", run.appendix,
                   "Also write static-gain linearization error traces");
  runCmd->add_flag("--noise-study", run.noiseStudy,
                   "Also rerun the modes with measurement noise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (genCmd->parsed()) return cmd_generate(gen);
  if (valCmd->parsed()) return cmd_validate(validatePath);
  if (calCmd->parsed()) return cmd_calibrate(cal);
  if (runCmd->parsed()) return cmd_run(run);
  return kExitUsage;
}
