#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "doh/patient.hpp"

namespace doh {

/// Piecewise-constant reference profile; times[0] == 0 and times ascending.
struct StepProfile {
  std::vector<double> times;
  std::vector<double> levels;
};

double profile_value(const StepProfile& p, double t);

/// 2..5 nondecreasing steps built from increments uniform in [0, 0.25] with
/// levels capped at 0.5, dwell times uniform in [240, 600] s, truncated at
/// `duration`. The shape mirrors the governor's envelope: it only ever raises
/// the applied reference, by headroom-limited amounts.
StepProfile random_step_profile(std::mt19937_64& eng, double duration);

struct CalibrationConfig {
  std::uint64_t seed = 1;
  int runs = 200;           // random profiles per patient
  double duration = 1200;   // s per run
  double dt = 0.1;          // s
  double inflation = 1.05;  // multiplies the raw suprema before storing
  int padeOrder = 2;
};

/// Empirical safety bounds, stored already inflated.
struct CalibrationBounds {
  std::array<double, 4> delta0{};
  double delta2 = 0;
  double inflation = 1.05;
  std::uint64_t seed = 1;
  int runs = 0;
};

/// Raw (uninflated) supremum, over the group's patients and random reference
/// profiles, of |y - y~| between the nonlinear simulation and the nominal
/// linearized loop the governor predicts with.
double estimate_delta0(const std::vector<PatientModel>& cohort, int group,
                       const CalibrationConfig& cfg);

/// Raw supremum of |y_patient - y_anchor| between each patient's linearized
/// loop and its group anchor's, under the same profiles. Zero when the cohort
/// sits exactly on the anchors.
double estimate_delta2(const std::vector<PatientModel>& cohort,
                       const CalibrationConfig& cfg);

/// Fraction of time samples, across fresh held-out (patient, profile) runs
/// for the given group, whose model error stays within `bound`.
double delta0_holdout_fraction(const std::vector<PatientModel>& cohort, int group,
                               double bound, const CalibrationConfig& cfg);

CalibrationBounds calibrate(const std::vector<PatientModel>& cohort,
                            const CalibrationConfig& cfg);

/// Deterministic text round-trip: same bounds in, byte-identical file out.
void write_bounds(std::ostream& os, const CalibrationBounds& b);
CalibrationBounds read_bounds(std::istream& is, const std::string& name);
CalibrationBounds load_bounds(const std::string& path);
void save_bounds(const std::string& path, const CalibrationBounds& b);

}  // namespace doh
