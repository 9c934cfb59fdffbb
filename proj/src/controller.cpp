#include "doh/controller.hpp"

#include <algorithm>
#include <stdexcept>

namespace doh {

PidParams PidParams::make(double kp, double ki, double kd, double Tt) {
  if (!(kp > 0) || !(ki > 0) || !(kd > 0) || !(Tt > 0))
    throw std::invalid_argument("PID gains and Tt must be > 0");
  PidParams p;
  p.kp = kp;
  p.ki = ki;
  p.kd = kd;
  p.Tt = Tt;
  p.Tf = kd / (10.0 * kp);
  return p;
}

ControllerConfig controller_defaults(int group) {
  if (group < 1 || group > 4) throw std::invalid_argument("group must be 1..4");
  static const PidParams pid[4] = {
      PidParams::make(2.610, 0.026, 65.09, 49.819),
      PidParams::make(3.947, 0.046, 85.29, 43.024),
      PidParams::make(10.207, 0.107, 202.38, 43.397),
      PidParams::make(4.455, 0.058, 104.83, 42.416),
  };
  static const double tsp[4] = {156.81, 129.90, 111.95, 124.96};
  return ControllerConfig{pid[group - 1], PrefilterParams{tsp[group - 1]},
                          SaturationLimits{}};
}

double prefilter_step(ControllerState& st, double r, const PrefilterParams& pf, double dt) {
  st.prefilter += dt / pf.Tsp * (r - st.prefilter);
  return st.prefilter;
}

PidOutput two_dof_pid_step(ControllerState& st, double v, double y, const PidParams& pid,
                           const SaturationLimits& sat, double dt) {
  const double e = v - y;
  const double deriv = pid.kd * (y - st.derivFilter) / pid.Tf;
  const double uUnsat = pid.kp * e + st.integrator - deriv;
  const double uSat = std::clamp(uUnsat, sat.uMin, sat.uMax);

  st.integrator += dt * (pid.ki * e + (uSat - uUnsat) / pid.Tt);
  st.derivFilter += dt * (y - st.derivFilter) / pid.Tf;
  return PidOutput{uSat, uUnsat};
}

}  // namespace doh
