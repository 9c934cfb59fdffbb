#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace doh {

// Age groups: 1: 18-29, 2: 30-39, 3: 40-49, 4: 50-60.
inline constexpr int kNumGroups = 4;
inline constexpr double kMinAge = 18.0;
inline constexpr double kMaxAge = 60.0;

/// Returns the age group (1..4). Throws std::invalid_argument outside [18, 60].
int group_for_age(double age);

/// Three-compartment PK parameters. Volumes in litres, clearances in l/s.
/// Rate constants (1/s) are derived once at construction:
///   k10 = Cl1/V1, k12 = Cl2/V1, k21 = Cl2/V2, k13 = Cl3/V1, k31 = Cl3/V3.
struct PkParams {
  double V1 = 0, V2 = 0, V3 = 0;
  double Cl1 = 0, Cl2 = 0, Cl3 = 0;
  double k10 = 0, k12 = 0, k21 = 0, k13 = 0, k31 = 0;

  /// Volumes and clearances must be strictly positive.
  /// Throws std::invalid_argument naming the offending field.
  static PkParams from_volumes_clearances(double V1, double V2, double V3,
                                          double Cl1, double Cl2, double Cl3);
};

/// Effect-site PD parameters: transport delay Td [s], distribution rate
/// kd [1/s], plasma concentration of half effect EC50 [ug/ml], Hill slope
/// gamma (dimensionless, > 0).
struct PdParams {
  double Td = 0;
  double kd = 0;
  double EC50 = 0;
  double gamma = 0;

  static PdParams make(double Td, double kd, double EC50, double gamma);
};

struct PatientModel {
  std::string id;
  double age = 0;
  int group = 0;  // derived from age
  PkParams pk;
  PdParams pd;

  static PatientModel make(std::string id, double age, PkParams pk, PdParams pd);
};

/// Group-wise linearized infusion-to-effect model
///   G(s) = e^{-Td s} * K (s + z1)(s + z2) / [(s+p1)(s+p2)(s+p3)(s+p4)],
/// stored with positive magnitudes for the zeros/poles.
struct NominalLinearModel {
  int group = 0;
  double Td = 0;   // s
  double K = 0;    // gain, per (mg/s)
  double z1 = 0, z2 = 0;
  std::array<double, 4> p{};
};

/// Built-in reference model for an age group (1..4).
const NominalLinearModel& nominal_model(int group);

/// Synthetic "typical patient" whose linearization tracks the group reference
/// model closely; used as the anchor of the cohort generator. The parameter
/// choice is a repository convention, documented in the README.
const PatientModel& anchor_patient(int group);

// ---- model right-hand sides -------------------------------------------------

/// dC/dt of the mammillary three-compartment model; infusion in mg/s,
/// concentrations in ug/ml (== mg/l).
std::array<double, 3> pk_derivative(const std::array<double, 3>& c, double infusionMgps,
                                    const PkParams& pk);

/// dEr/dt driven by the delayed plasma concentration.
double pd_derivative(double er, double delayedC1, const PdParams& pd);

/// Hill saturation, Eo in [0, 1) for finite Er >= 0; hill(0.5, g) == 0.5.
double hill(double er, double gamma);

inline constexpr double kMonitorTauS = 8.0;  // each of the two sensor lags

/// Two cascaded first-order lags; returns {dm1, dm2}; the measured output is m2.
std::array<double, 2> monitor_derivative(double m1, double m2, double eo);

// ---- plant integration ------------------------------------------------------

struct PlantState {
  std::array<double, 3> c{};  // C1..C3
  double er = 0;
  double m1 = 0, m2 = 0;
  std::vector<double> delayLine;  // ring buffer of past C1, length ceil(Td/dt)
  std::size_t delayCursor = 0;
};

/// Affine stand-in for the dose-response curve: Eo = gain * Er + offset. The
/// tangent at the half-effect point has gain = gamma/2, offset = (2-gamma)/4.
struct LinearEffect {
  double gain = 1.0;
  double offset = 0.0;
};

/// Steps the coupled PK/PD/monitor ODEs with classic RK4 at a fixed dt.
/// The delay line is sampled at dt resolution and the nearest-past sample is
/// held across the RK4 stages, as is the infusion (zero-order hold).
/// `linearEffect`, when set, replaces Eo = hill(Er) with the affine map.
class PlantSimulator {
 public:
  PlantSimulator(const PatientModel& patient, double dt,
                 std::optional<LinearEffect> linearEffect = std::nullopt);

  /// Advances one step. `eoNoise` is added to the monitor input after the
  /// Hill element (measurement noise path). Throws SimulationDiverged if any
  /// state magnitude exceeds 1e6.
  void step(double infusionMgps, double eoNoise = 0.0);

  double y() const { return state_.m2; }
  double effect() const;  // current Eo (noise-free)
  const PlantState& state() const { return state_; }
  double time() const { return t_; }
  double dt() const { return dt_; }

 private:
  double delayedC1() const;

  const PatientModel patient_;
  double dt_;
  std::optional<LinearEffect> linearEffect_;
  PlantState state_;
  double t_ = 0;
};

struct SimulationDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace doh
