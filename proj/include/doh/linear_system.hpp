#pragma once

#include <Eigen/Dense>
#include <vector>

#include "doh/controller.hpp"
#include "doh/patient.hpp"

namespace doh {

/// Rational transfer function, coefficients in ascending powers of s.
struct RationalTf {
  std::vector<double> num;
  std::vector<double> den;
};

/// Diagonal Pade approximant of e^{-Td s}, order 1..3; unit DC gain.
RationalTf pade_delay(double Td, int order);

/// SISO state space block; D may be nonzero (Pade blocks have feedthrough).
struct StateSpace {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::RowVectorXd C;
  double D = 0;

  int n() const { return static_cast<int>(A.rows()); }
};

/// Controllable-canonical realization; requires deg num <= deg den.
StateSpace realize(const RationalTf& tf);

/// Series connection u -> first -> second -> y.
StateSpace series(const StateSpace& first, const StateSpace& second);

/// The assembled loop  v -> y~:  feedforward (kp + ki/s) on v, feedback
/// (kp + ki/s + kd s, filtered derivative) on the measured output, plant and
/// a (1/(8s+1))^2 sensor, with D = 0. The two integral actions share one
/// state (their difference is what the loop stabilizes; separate states
/// would leave an exact zero eigenvalue). Hurwitz is asserted at
/// construction.
struct LinearClosedLoop {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::RowVectorXd C;
  double D = 0.0;  // the assembled loop is strictly proper

  LinearClosedLoop(Eigen::MatrixXd a, Eigen::VectorXd b, Eigen::RowVectorXd c);

  int n() const { return static_cast<int>(A.rows()); }
  double maxRealEig() const;
};

/// Closed loop around the group reference model (delay via Pade of the given
/// order). State count: 2 controller + (4 + padeOrder) plant + 2 sensor.
LinearClosedLoop build_closed_loop(const NominalLinearModel& nom, const PidParams& pid,
                                   int padeOrder = 2);

/// Closed loop around an individual patient's linearized plant: PK state
/// space, Pade delay on C1, effect-site lag, and the local Hill slope
/// gamma/2 as a pure gain.
LinearClosedLoop build_patient_closed_loop(const PatientModel& patient,
                                           const PidParams& pid, int padeOrder = 2);

/// Exact zero-order-hold discretization over step h, computed from one
/// augmented matrix exponential: x+ = Ad x + Bd v.
struct DiscretePropagator {
  Eigen::MatrixXd Ad;
  Eigen::VectorXd Bd;
  double h = 0;

  static DiscretePropagator make(const LinearClosedLoop& sys, double h);
};

/// Output prediction over a horizon: y~(t + k*gridStep) for k = 0..T/gridStep
/// with the reference held at v. The first element equals C x. gridStep must
/// divide T.
std::vector<double> predict_output(const LinearClosedLoop& sys, const Eigen::VectorXd& x,
                                   double v, double T, double gridStep);

/// Steady state for constant v (solves A x = -B v).
Eigen::VectorXd equilibrium(const LinearClosedLoop& sys, double v);

double dc_gain(const LinearClosedLoop& sys);

/// Time of the zero-state step-response maximum, searched over a window of
/// four times the slowest time constant.
double peak_time(const LinearClosedLoop& sys, double vStep);

}  // namespace doh
