#pragma once

namespace doh {

/// Two-degree-of-freedom PID: u = (kp + ki/s) v - (kp + ki/s + kd s) y,
/// i.e. proportional and integral act on the error while the derivative acts
/// on the measurement only, through a first-order filter with Tf = kd/(10 kp).
/// Tt is the back-calculation anti-windup constant.
struct PidParams {
  double kp = 0;
  double ki = 0;
  double kd = 0;
  double Tt = 0;
  double Tf = 0;

  static PidParams make(double kp, double ki, double kd, double Tt);
};

struct PrefilterParams {
  double Tsp = 0;  // s
};

/// Infusion limits in mg/s; defaults to [0, 600 ml/h at 10 mg/ml].
struct SaturationLimits {
  double uMin = 0.0;
  double uMax = 600.0 * 10.0 / 3600.0;  // 1.6667 mg/s
};

struct ControllerState {
  double integrator = 0;   // integral term, mg/s
  double derivFilter = 0;  // filtered measurement
  double prefilter = 0;    // passive prefilter state
};

struct ControllerConfig {
  PidParams pid;
  PrefilterParams prefilter;
  SaturationLimits sat;
};

/// Built-in robust gains and prefilter constant for an age group (1..4).
ControllerConfig controller_defaults(int group);

/// One step of the passive setpoint prefilter (first-order lag, unity DC
/// gain); returns the filtered reference.
double prefilter_step(ControllerState& st, double r, const PrefilterParams& pf, double dt);

struct PidOutput {
  double uSat = 0;
  double uUnsat = 0;
};

/// One step of the 2-DOF PID. The integrator advances with forward Euler on
/// ki*(v - y) plus the back-calculation term (uSat - uUnsat)/Tt.
PidOutput two_dof_pid_step(ControllerState& st, double v, double y, const PidParams& pid,
                           const SaturationLimits& sat, double dt);

}  // namespace doh
