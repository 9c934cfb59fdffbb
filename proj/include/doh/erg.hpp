#pragma once

#include <Eigen/Dense>
#include <array>
#include <limits>
#include <span>
#include <vector>

#include "doh/linear_system.hpp"

namespace doh {

/// Reference-governor configuration. delta0 (per group) and delta2 are the
/// calibrated safety bounds, stored already inflated; yLimit is the hypnosis
/// constraint. delta1Hold/delta1Tau shape the time-varying margin: full bound
/// for `hold` seconds after the clock epoch, then exponential decay.
struct ErgConfig {
  double kappa = 1e5;
  double eta = 0.01;
  double horizonT = 300.0;  // s
  double gridStep = 1.0;    // s
  std::array<double, 4> delta0{};
  double delta2 = 0.0;
  double inflation = 1.05;  // applied by calibration before the bounds are stored
  double yLimit = 0.6;
  double delta1HoldS = 120.0;
  double delta1TauS = 300.0;
  int padeOrder = 2;

  /// Which event restarts the delta1 envelope: the last change of the desired
  /// reference (default), or the last movement of the auxiliary reference.
  enum class Delta1Clock { reference, lastMove };
  Delta1Clock delta1Clock = Delta1Clock::reference;
};

/// Unit attraction field toward r, saturated inside an eta-ball.
double navigation_field(double r, double v, double eta);

/// Time-varying model-error bound: delta0 on [t1, t1+hold], then
/// delta0 * exp(-(t - t1 - hold)/tau).
double delta1(double t, double t1, double delta0, double holdS, double tauS);

/// Dynamic safety margin: min over the prediction grid of
/// yLimit - y~ - delta1Now - delta2. Bounds are expected already inflated.
double dsm(std::span<const double> prediction, double delta1Now, double delta2,
           double yLimit);

struct GovernorState {
  double v = 0;
  Eigen::VectorXd xTilde;     // internal copy of the linearized loop state
  double tLastMove = 0;       // time of the last v change
  double referenceEpoch = 0;  // time the desired reference last changed
};

/// One governor update of the auxiliary reference:
/// v <- v + kappa * max(Delta, 0) * rho * dt, clamped so the move approaches
/// r without crossing it and never goes negative.
/// Updates tLastMove when v actually changes. Returns the new v.
double erg_step(GovernorState& gov, double r, double Delta, const ErgConfig& cfg, double dt,
                double t = 0.0);

/// Advances the internal model one step with the given propagator.
void internal_model_step(GovernorState& gov, const DiscretePropagator& prop, double v);

/// Per-step orchestration: predicts under the held reference, evaluates the
/// margin, applies the governor update, and advances the internal model.
///
/// Forward moves are additionally capped at the margin-exhaustion point: the
/// prediction is affine in the held v, so the largest admissible v is solved
/// directly. This is the kappa -> infinity limit of the continuous update; at
/// the configured kappa the plain discrete update would cross the safe set in
/// one step.
class ReferenceGovernor {
 public:
  ReferenceGovernor(const LinearClosedLoop& sys, const ErgConfig& cfg, int group,
                    double dt);

  /// Updates v for the step starting at time t and advances the internal
  /// model; returns the reference to apply over [t, t+dt).
  double step(double t, double r);

  double v() const { return state_.v; }
  double lastMargin() const { return lastMargin_; }
  const GovernorState& state() const { return state_; }
  GovernorState& state() { return state_; }
  double delta0Applied() const { return delta0_; }

  /// Margin under the held v from the current internal state (no update);
  /// equals dsm(predict_output(...)) with the same grid.
  double margin(double t) const;

 private:
  void evaluate(double delta1Now, double& margin, double& vCap) const;

  LinearClosedLoop sys_;
  ErgConfig cfg_;
  double dt_;
  double delta0_;  // group bound, as stored (inflated)
  DiscretePropagator gridProp_, simProp_;
  std::vector<double> stepGain_;  // zero-state step response on the grid
  GovernorState state_;
  double lastMargin_ = 0;
  double lastR_ = std::numeric_limits<double>::quiet_NaN();  // refreshes the epoch
};

}  // namespace doh
