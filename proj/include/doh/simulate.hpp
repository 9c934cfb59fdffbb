#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "doh/controller.hpp"
#include "doh/erg.hpp"
#include "doh/patient.hpp"

namespace doh {

/// Closed-loop variants: the raw step reference, the first-order reference
/// shaping stage, or the predictive reference governor.
enum class Mode { noPrefilter, passivePrefilter, erg };

std::string_view mode_name(Mode mode);
std::optional<Mode> mode_from_name(std::string_view name);

/// Any monitor reading above this level counts as an overdose.
inline constexpr double kOverdoseY = 0.6;

struct SimConfig {
  double dt = 0.1;           // integration and control step [s]
  double duration = 1800.0;  // simulated induction window [s]
  Mode mode = Mode::passivePrefilter;
  double r = 0.5;            // target normalized effect, in [0, 1)
  std::optional<double> noiseVariance;  // variance of the additive effect noise
  std::uint64_t seed = 1;    // noise stream seed (per patient id underneath)
  int trajStride = 1;        // keep every k-th sample in the returned trace
  int plantSubsteps = 1;     // plant integration refinement at the fixed control rate
};

struct Trajectory {
  std::vector<double> t, r, v, uSat, c1, er, eo, y, doh, delta;
  bool hasDelta = false;  // delta is populated only under the governor
  std::size_t size() const { return t.size(); }
};

struct InductionMetrics {
  std::string id;
  int group = 0;
  Mode mode = Mode::passivePrefilter;
  std::optional<double> riseTimeS;    // 10% -> 90% of target
  std::optional<double> settleTimeS;  // last time outside the +-5% band
  double overshootPct = 0.0;          // peak above target, percent of target
  double peakY = 0.0;
  double drugMl8Min = 0.0;            // volume infused in the first 8 min
  bool overdosed = false;             // y ever exceeded kOverdoseY
};

struct SimResult {
  Trajectory traj;  // already decimated by trajStride
  InductionMetrics metrics;
};

/// Metrics from a full-resolution trace. The drug total integrates uSat over
/// samples before 480 s; rise and settle are empty when not reached.
InductionMetrics compute_metrics(const Trajectory& traj, double r);

/// One induction run. ergCfg must be non-null exactly when sim.mode is erg;
/// the governor predicts with the nominal group model under ctrl's gains.
SimResult run_induction(const PatientModel& patient, const ControllerConfig& ctrl,
                        const SimConfig& sim, const ErgConfig* ergCfg = nullptr);

/// Affine stand-in replacing the static dose-response nonlinearity in the
/// comparison runs: the identity map, or the tangent at the half-effect point
/// (gain gamma/2, offset (2-gamma)/4; the two coincide at gamma = 2).
enum class GainMode { unity, halfGamma };

/// Difference trace (nonlinear dose-response loop minus affine-effect loop),
/// sampled every sim.dt, under the patient's group default controller.
std::vector<double> hill_linearization_error(const PatientModel& patient, GainMode gainMode,
                                             const SimConfig& sim);

struct Stats {
  int n = 0;
  double mean = 0, sd = 0, lo = 0, hi = 0;
};

Stats stats_of(const std::vector<double>& xs);

struct ModeAggregate {
  Mode mode = Mode::passivePrefilter;
  int n = 0;          // runs that produced metrics
  Stats rise;         // over runs where the threshold was reached
  Stats settle;
  Stats overshoot;
  Stats peak;
  Stats drug;
  int overdosed = 0;  // count of runs with any y > kOverdoseY
};

std::vector<ModeAggregate> aggregate_metrics(const std::vector<InductionMetrics>& metrics);

struct RunFailure {
  std::string id;
  Mode mode = Mode::passivePrefilter;
  std::string what;
};

struct CohortExperimentResult {
  std::vector<InductionMetrics> metrics;  // ordered by (patient id, mode)
  std::vector<ModeAggregate> aggregates;
  std::vector<RunFailure> failures;       // per-run faults; the batch keeps going
};

using ResultSink = std::function<void(const PatientModel&, const SimResult&)>;

/// Runs every patient under every mode with the per-group default controller
/// (or the gains controllerFor returns, when given). Noise streams are
/// derived from sim.seed and the patient id, shared across modes so variants
/// see the same disturbance realization. workers > 1 fans jobs out over
/// threads; results are merged by (patient id, mode) either way. sink, when
/// set, receives each finished run on the calling thread.
CohortExperimentResult run_cohort_experiment(
    const std::vector<PatientModel>& cohort, const std::vector<Mode>& modes,
    const SimConfig& sim, const ErgConfig* ergCfg, int workers = 1,
    const ResultSink& sink = {},
    const std::function<ControllerConfig(int group)>& controllerFor = {});

void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
void write_metrics_csv(std::ostream& os, const std::vector<InductionMetrics>& metrics);
void write_summary_report(std::ostream& os, const CohortExperimentResult& result,
                          const SimConfig& sim);

}  // namespace doh
