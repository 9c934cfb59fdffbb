// Acceptance gate for the anesthesia toolkit: ten end-to-end checks covering
// constraint enforcement, baseline contrast, performance, predictor accuracy,
// stability, calibration soundness, convergence, the static-gain study,
// runtime, and core model invariants. Prints one PASS/FAIL line per criterion
// and exits with the number of failures.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doh/calibration.hpp"
#include "doh/cohort.hpp"
#include "doh/controller.hpp"
#include "doh/erg.hpp"
#include "doh/linear_system.hpp"
#include "doh/patient.hpp"
#include "doh/simulate.hpp"

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const doh::ModeAggregate* find_mode(const doh::CohortExperimentResult& r, doh::Mode m) {
  for (const auto& a : r.aggregates)
    if (a.mode == m) return &a;
  return nullptr;
}

doh::ErgConfig erg_from(const doh::CalibrationBounds& b) {
  doh::ErgConfig cfg;
  cfg.delta0 = b.delta0;
  cfg.delta2 = b.delta2;
  cfg.inflation = b.inflation;
  return cfg;
}

// ---- 1: the calibrated governor keeps the whole shipped cohort safe --------

Outcome constraint_enforcement(const std::string& bin, const std::string& cohortPath,
                               const fs::path& work, fs::path& boundsOut) {
  const fs::path bounds = work / "bounds.txt";
  const fs::path outDir = work / "erg_run";
  const auto t0 = Clock::now();
  const int calRc = shell("'" + bin + "' calibrate '" + cohortPath + "' --runs 200 --out '" +
                          bounds.string() + "' > '" + (work / "cal.log").string() +
                          "' 2>&1");
  if (calRc != 0) return {false, fmt("calibration exited %d", calRc)};
  const int runRc = shell("'" + bin + "' run '" + cohortPath + "' --mode erg --bounds '" +
                          bounds.string() + "' --out '" + outDir.string() +
                          "' --strict > '" + (work / "run.log").string() + "' 2>&1");
  const double wall = seconds_since(t0);
  if (runRc != 0) return {false, fmt("strict governor run exited %d", runRc)};
  if (wall >= 300.0) return {false, fmt("calibrate + run took %.1f s (budget 300)", wall)};
  boundsOut = bounds;
  return {true, fmt("44 governor runs, 0 over the 0.6 line, %.1f s total", wall)};
}

// ---- 2: the unshaped and prefiltered baselines misbehave as expected -------

Outcome baseline_contrast(const std::vector<doh::PatientModel>& cohort) {
  doh::SimConfig sim;  // 1800 s, noise-free
  const auto res = doh::run_cohort_experiment(
      cohort, {doh::Mode::noPrefilter, doh::Mode::passivePrefilter}, sim, nullptr, 2);
  if (!res.failures.empty()) return {false, fmt("%zu runs failed", res.failures.size())};

  int noOvershoot = 0;
  for (const auto& m : res.metrics)
    if (m.mode == doh::Mode::noPrefilter && m.overshootPct <= 0.0) ++noOvershoot;
  const auto* raw = find_mode(res, doh::Mode::noPrefilter);
  const auto* passive = find_mode(res, doh::Mode::passivePrefilter);
  if (raw == nullptr || passive == nullptr) return {false, "missing aggregates"};

  const int n = raw->n;
  const bool enough = raw->overdosed * 4 >= n * 3;  // at least 75%
  const bool fewer = passive->overdosed < raw->overdosed;
  const bool pass = noOvershoot == 0 && enough && fewer;
  return {pass, fmt("raw: %d/%d overdosed, %d without overshoot; passive: %d overdosed",
                    raw->overdosed, n, noOvershoot, passive->overdosed)};
}

// ---- 3: governor performance stays inside the loosened envelope ------------

Outcome performance_envelope(const std::vector<doh::PatientModel>& cohort,
                             const doh::CalibrationBounds& bounds) {
  doh::SimConfig sim;
  const doh::ErgConfig erg = erg_from(bounds);
  const auto res =
      doh::run_cohort_experiment(cohort, {doh::Mode::erg}, sim, &erg, 2);
  if (!res.failures.empty()) return {false, fmt("%zu runs failed", res.failures.size())};
  const auto* a = find_mode(res, doh::Mode::erg);
  if (a == nullptr) return {false, "missing aggregate"};

  const bool pass =
      a->rise.mean <= 360.0 && a->settle.mean <= 600.0 && a->overshoot.mean <= 15.0;
  const bool tight =
      a->rise.mean < 300.0 && a->settle.mean < 480.0 && a->overshoot.mean < 10.0;
  return {pass, fmt("mean rise %.0f s, settle %.0f s, overshoot %.1f%% "
                    "(5 min / 8 min / 10%% claim: %s)",
                    a->rise.mean, a->settle.mean, a->overshoot.mean,
                    tight ? "met" : "not met")};
}

// ---- 4: the discrete propagator matches fine integration -------------------

Outcome predictor_exactness() {
  std::mt19937_64 eng(2024);
  std::uniform_real_distribution<double> coord(-0.5, 0.5), ref(0.0, 0.6);
  double worstFine = 0, worstSplit = 0;

  for (int g = 1; g <= doh::kNumGroups; ++g) {
    const doh::LinearClosedLoop sys =
        doh::build_closed_loop(doh::nominal_model(g), doh::controller_defaults(g).pid);
    const auto full = doh::DiscretePropagator::make(sys, 1.0);
    const auto half = doh::DiscretePropagator::make(sys, 0.5);
    const int n = sys.n();

    for (int trial = 0; trial < 100; ++trial) {
      Eigen::VectorXd x(n);
      for (int i = 0; i < n; ++i) x[i] = coord(eng);
      const double v = ref(eng);

      // one matrix-exponential step vs classic RK4 at a 1e-4 s step
      const Eigen::VectorXd xProp = full.Ad * x + full.Bd * v;
      Eigen::VectorXd xf = x;
      const double hFine = 1e-4;
      const Eigen::VectorXd bv = sys.B * v;
      for (int k = 0; k < 10000; ++k) {
        const Eigen::VectorXd k1 = sys.A * xf + bv;
        const Eigen::VectorXd k2 = sys.A * (xf + 0.5 * hFine * k1) + bv;
        const Eigen::VectorXd k3 = sys.A * (xf + 0.5 * hFine * k2) + bv;
        const Eigen::VectorXd k4 = sys.A * (xf + hFine * k3) + bv;
        xf += hFine / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      worstFine = std::max(worstFine, std::abs(sys.C.dot(xProp) - sys.C.dot(xf)));

      // composing two half-steps must reproduce the full step
      const Eigen::VectorXd xSplit = half.Ad * (half.Ad * x + half.Bd * v) + half.Bd * v;
      worstSplit = std::max(worstSplit, std::abs(sys.C.dot(xProp) - sys.C.dot(xSplit)));
    }
  }
  const bool pass = worstFine <= 1e-8 && worstSplit <= 1e-10;
  return {pass, fmt("|vs fine RK4| <= %.2e (budget 1e-8), |vs composed| <= %.2e "
                    "(budget 1e-10), 100 states x 4 groups",
                    worstFine, worstSplit)};
}

// ---- 5: every assembled loop is stable with unit DC gain -------------------

Outcome assembled_loop_stability() {
  double worstEig = -1e300, worstDc = 0;
  for (int g = 1; g <= doh::kNumGroups; ++g) {
    const doh::LinearClosedLoop sys =
        doh::build_closed_loop(doh::nominal_model(g), doh::controller_defaults(g).pid);
    worstEig = std::max(worstEig, sys.maxRealEig());
    worstDc = std::max(worstDc, std::abs(doh::dc_gain(sys) - 1.0));
  }
  const bool pass = worstEig < 0.0 && worstDc <= 1e-6;
  return {pass, fmt("max Re(eig) %.3e, |DC - 1| <= %.2e across groups", worstEig, worstDc)};
}

// ---- 6: the calibrated bounds hold up on held-out runs ---------------------

Outcome calibration_soundness(const std::vector<doh::PatientModel>& cohort,
                              const doh::CalibrationBounds& bounds) {
  doh::CalibrationConfig cfg;
  cfg.runs = 19;  // 11 patients per group -> 209 held-out runs per group
  double worstFraction = 1.0;
  for (int g = 1; g <= doh::kNumGroups; ++g)
    worstFraction = std::min(
        worstFraction, doh::delta0_holdout_fraction(cohort, g, bounds.delta0[g - 1], cfg));

  doh::CalibrationConfig quick;
  quick.runs = 2;
  quick.duration = 600;
  doh::CohortSpec spec;
  spec.n = 8;
  spec.seed = 5;
  double prev = -1.0, zeroSpread = 1.0;
  bool monotone = true;
  for (double spread : {0.0, 0.1, 0.3}) {
    spec.spread = spread;
    const double d2 = doh::estimate_delta2(doh::generate_cohort(spec), quick);
    if (spread == 0.0) zeroSpread = d2;
    monotone = monotone && d2 >= prev;
    prev = d2;
  }
  const bool pass = worstFraction >= 0.99 && zeroSpread < 1e-9 && monotone;
  return {pass, fmt("holdout coverage >= %.4f (budget 0.99), spread-0 gap %.1e, "
                    "spread widening %s",
                    worstFraction, zeroSpread, monotone ? "monotone" : "NOT monotone")};
}

// ---- 7: the governor walks every anchor to the target ----------------------

Outcome governor_convergence(const doh::CalibrationBounds& bounds) {
  const doh::ErgConfig erg = erg_from(bounds);
  doh::SimConfig sim;
  sim.mode = doh::Mode::erg;
  std::string times;
  bool pass = true;
  for (int g = 1; g <= doh::kNumGroups; ++g) {
    const auto res = doh::run_induction(doh::anchor_patient(g),
                                        doh::controller_defaults(g), sim, &erg);
    const auto& tr = res.traj;
    double vAt = -1, yAt = -1;
    for (std::size_t k = 0; k < tr.size(); ++k) {
      if (vAt < 0 && std::abs(tr.v[k] - 0.5) < erg.eta) vAt = tr.t[k];
      if (yAt < 0 && std::abs(tr.y[k] - 0.5) < 0.02) yAt = tr.t[k];
    }
    const bool held = std::abs(tr.v.back() - 0.5) < erg.eta &&
                      std::abs(tr.y.back() - 0.5) < 0.02;
    pass = pass && vAt >= 0 && yAt >= 0 && held;
    times += fmt("%sg%d v@%.0fs y@%.0fs", g == 1 ? "" : ", ", g, vAt, yAt);
  }
  return {pass, times + " (all within 1800 s and holding at the end)"};
}

// ---- 8: the tangent stand-in beats the unity stand-in terminally -----------

Outcome tangent_gain_study() {
  doh::SimConfig sim;
  sim.duration = 1200;  // both errors vanish asymptotically; compare live transients
  sim.mode = doh::Mode::passivePrefilter;
  double worstH = 0;
  bool ordered = true;
  for (int g = 1; g <= doh::kNumGroups; ++g) {
    const auto u = doh::hill_linearization_error(doh::anchor_patient(g),
                                                 doh::GainMode::unity, sim);
    const auto h = doh::hill_linearization_error(doh::anchor_patient(g),
                                                 doh::GainMode::halfGamma, sim);
    double eU = 0, eH = 0;
    for (std::size_t k = u.size() - 3000; k < u.size(); ++k) {
      eU = std::max(eU, std::abs(u[k]));
      eH = std::max(eH, std::abs(h[k]));
    }
    worstH = std::max(worstH, eH);
    ordered = ordered && eH <= eU;
  }
  const bool pass = worstH < 0.01 && ordered;
  return {pass, fmt("terminal tangent error <= %.2e (budget 0.01), %s the unity error",
                    worstH, ordered ? "below" : "NOT below")};
}

// ---- 9: a full virtual surgery is cheap -------------------------------------

Outcome runtime_budget(const doh::CalibrationBounds& bounds) {
  const doh::ErgConfig erg = erg_from(bounds);
  doh::SimConfig sim;
  sim.mode = doh::Mode::erg;

  const auto t0 = Clock::now();
  (void)doh::run_induction(doh::anchor_patient(2), doh::controller_defaults(2), sim, &erg);
  const double wall = seconds_since(t0);

  const doh::LinearClosedLoop sys =
      doh::build_closed_loop(doh::nominal_model(2), doh::controller_defaults(2).pid);
  doh::ReferenceGovernor gov(sys, erg, 2, sim.dt);
  for (int k = 0; k < 2000; ++k) gov.step(k * sim.dt, 0.5);
  const auto m0 = Clock::now();
  double sink = 0;
  for (int k = 0; k < 1000; ++k) sink += gov.margin(200.0 + k * sim.dt);
  const double perMarginMs = seconds_since(m0);  // 1000 calls -> ms per call
  (void)sink;

  const bool pass = wall < 5.0 && perMarginMs < 10.0;
  return {pass, fmt("30 min governor run %.2f s (budget 5), margin evaluation %.3f ms "
                    "(budget 10)",
                    wall, perMarginMs)};
}

// ---- 10: core model invariants ----------------------------------------------

Outcome model_invariants() {
  std::string failed;

  {  // drug mass balance: infused = stored + eliminated
    const doh::PatientModel p = doh::anchor_patient(1);
    doh::PlantSimulator plant(p, 0.01);
    double eliminated = 0, prevC1 = plant.state().c[0];
    const double u = 1.0;
    for (int k = 0; k < 20000; ++k) {
      plant.step(u);
      const double c1 = plant.state().c[0];
      eliminated += p.pk.Cl1 * 0.5 * (prevC1 + c1) * 0.01;  // trapezoid
      prevC1 = c1;
    }
    const auto& c = plant.state().c;
    const double stored = p.pk.V1 * c[0] + p.pk.V2 * c[1] + p.pk.V3 * c[2];
    const double infused = u * 200.0;
    if (std::abs(infused - stored - eliminated) > 1e-3 * infused)
      failed += " mass-balance";
  }
  {  // uniform concentration I/Cl1 is the infusion equilibrium
    const doh::PkParams& pk = doh::anchor_patient(2).pk;
    const double cEq = 0.8 / pk.Cl1;
    const auto d = doh::pk_derivative({cEq, cEq, cEq}, 0.8, pk);
    if (std::abs(d[0]) > 1e-12 || std::abs(d[1]) > 1e-12 || std::abs(d[2]) > 1e-12)
      failed += " pk-equilibrium";
  }
  {  // dose-response curve: strictly increasing, through (0.5, 0.5), in [0, 1)
    for (double gamma : {1.5, 2.0, 2.2, 3.0}) {
      double prev = -1;
      for (double er = 0; er <= 3.0; er += 1e-3) {
        const double eo = doh::hill(er, gamma);
        if (eo <= prev || eo < 0 || eo >= 1) {
          failed += " hill-shape";
          break;
        }
        prev = eo;
      }
      if (std::abs(doh::hill(0.5, gamma) - 0.5) > 1e-15) failed += " hill-center";
    }
  }
  {  // sensor lags settle at their input
    double m1 = 0, m2 = 0;
    for (int k = 0; k < 200000; ++k) {
      const auto d = doh::monitor_derivative(m1, m2, 0.7);
      m1 += 1e-3 * d[0];
      m2 += 1e-3 * d[1];
    }
    if (std::abs(m2 - 0.7) > 1e-6) failed += " monitor-dc";
    const auto still = doh::monitor_derivative(0.7, 0.7, 0.7);
    if (still[0] != 0.0 || still[1] != 0.0) failed += " monitor-fixpoint";
  }
  {  // back-calculation pins the integrator under persistent saturation
    const doh::ControllerConfig ctrl = doh::controller_defaults(2);
    doh::ControllerState cs;
    for (int k = 0; k < 30000; ++k)
      doh::two_dof_pid_step(cs, 1.0, 0.0, ctrl.pid, ctrl.sat, 0.1);
    const double fix = ctrl.sat.uMax + ctrl.pid.ki * ctrl.pid.Tt - ctrl.pid.kp;
    if (std::abs(cs.integrator - fix) > 1e-3) failed += " anti-windup";
  }
  {  // seeded noisy runs are bit-identical
    doh::SimConfig sim;
    sim.duration = 300;
    sim.noiseVariance = 0.1;
    const auto a =
        doh::run_induction(doh::anchor_patient(3), doh::controller_defaults(3), sim);
    const auto b =
        doh::run_induction(doh::anchor_patient(3), doh::controller_defaults(3), sim);
    if (a.traj.y != b.traj.y) failed += " determinism";
  }
  {  // refining the plant step leaves the trajectory unchanged
    doh::SimConfig coarse;
    coarse.duration = 1200;
    coarse.mode = doh::Mode::noPrefilter;
    doh::SimConfig fine = coarse;
    fine.plantSubsteps = 2;
    const auto a =
        doh::run_induction(doh::anchor_patient(4), doh::controller_defaults(4), coarse);
    const auto b =
        doh::run_induction(doh::anchor_patient(4), doh::controller_defaults(4), fine);
    if (std::abs(a.metrics.peakY - b.metrics.peakY) > 1e-4) failed += " step-refinement";
  }

  if (failed.empty())
    return {true, "mass balance, equilibria, saturation shape, sensor, anti-windup, "
                  "determinism, step refinement"};
  return {false, "failed:" + failed};
}

}  // namespace

int main() {
  const char* binEnv = std::getenv("DOHSIM_BIN");
  const char* cohortEnv = std::getenv("DOHSIM_COHORT");
  if (binEnv == nullptr || cohortEnv == nullptr) {
    std::fprintf(stderr, "DOHSIM_BIN and DOHSIM_COHORT must be set\n");
    return 10;
  }
  const std::string bin = binEnv;
  const std::string cohortPath = cohortEnv;

  const fs::path work = fs::temp_directory_path() / "doh_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  std::vector<doh::PatientModel> cohort;
  try {
    cohort = doh::load_cohort(fs::path(cohortPath));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cannot load cohort %s: %s\n", cohortPath.c_str(), e.what());
    return 10;
  }

  int failures = 0;
  auto report = [&](int idx, const Outcome& o) {
    std::printf("CRITERION %d: %s - %s\n", idx, o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  };

  fs::path boundsPath;
  report(1, constraint_enforcement(bin, cohortPath, work, boundsPath));

  doh::CalibrationBounds bounds;
  bool haveBounds = false;
  try {
    bounds = doh::load_bounds(boundsPath.empty() ? (work / "bounds.txt").string()
                                                 : boundsPath.string());
    haveBounds = true;
  } catch (const std::exception& e) {
    std::printf("note: shipped-run bounds unavailable (%s); dependent criteria fail\n",
                e.what());
  }
  const Outcome noBounds{false, "no calibrated bounds from criterion 1"};

  report(2, baseline_contrast(cohort));
  report(3, haveBounds ? performance_envelope(cohort, bounds) : noBounds);
  report(4, predictor_exactness());
  report(5, assembled_loop_stability());
  report(6, haveBounds ? calibration_soundness(cohort, bounds) : noBounds);
  report(7, haveBounds ? governor_convergence(bounds) : noBounds);
  report(8, tangent_gain_study());
  report(9, haveBounds ? runtime_budget(bounds) : noBounds);
  report(10, model_invariants());

  std::printf("ACCEPTANCE: %d/10 criteria passed\n", 10 - failures);
  return failures;
}
