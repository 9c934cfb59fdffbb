#include "doh/erg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace doh {

double navigation_field(double r, double v, double eta) {
  if (!(eta > 0)) throw std::invalid_argument("eta must be > 0");
  const double d = r - v;
  return d / std::max(std::abs(d), eta);
}

double delta1(double t, double t1, double delta0, double holdS, double tauS) {
  const double elapsed = t - t1;
  if (elapsed <= holdS) return delta0;
  return delta0 * std::exp(-(elapsed - holdS) / tauS);
}

double dsm(std::span<const double> prediction, double delta1Now, double delta2,
           double yLimit) {
  if (prediction.empty()) throw std::invalid_argument("empty prediction");
  double worst = -std::numeric_limits<double>::infinity();
  for (double y : prediction) worst = std::max(worst, y);
  return yLimit - worst - delta1Now - delta2;
}

double erg_step(GovernorState& gov, double r, double Delta, const ErgConfig& cfg, double dt,
                double t) {
  const double rho = navigation_field(r, gov.v, cfg.eta);
  double v = gov.v + cfg.kappa * std::max(Delta, 0.0) * rho * dt;
  // the move approaches r without crossing it (the discrete update at large
  // kappa would otherwise overshoot), and never leaves [0, inf)
  const double lo = std::max(0.0, std::min(gov.v, r));
  const double hi = std::max(gov.v, r);
  v = std::clamp(v, lo, hi);
  if (v != gov.v) gov.tLastMove = t;
  gov.v = v;
  return v;
}

void internal_model_step(GovernorState& gov, const DiscretePropagator& prop, double v) {
  gov.xTilde = prop.Ad * gov.xTilde + prop.Bd * v;
}

namespace {

double group_bound(const ErgConfig& cfg, int group) {
  if (group < 1 || group > 4) throw std::invalid_argument("group must be 1..4");
  return cfg.delta0[static_cast<std::size_t>(group - 1)];
}

}  // namespace

ReferenceGovernor::ReferenceGovernor(const LinearClosedLoop& sys, const ErgConfig& cfg,
                                     int group, double dt)
    : sys_(sys),
      cfg_(cfg),
      dt_(dt),
      delta0_(group_bound(cfg, group)),
      gridProp_(DiscretePropagator::make(sys, cfg.gridStep)),
      simProp_(DiscretePropagator::make(sys, dt)) {
  if (!(cfg.kappa > 0) || !(cfg.eta > 0))
    throw std::invalid_argument("kappa and eta must be > 0");
  if (!(cfg.yLimit > 0) || !(cfg.yLimit < 1))
    throw std::invalid_argument("yLimit must lie in (0, 1)");
  if (!(cfg.inflation >= 1)) throw std::invalid_argument("inflation must be >= 1");
  if (!(cfg.horizonT > 0) || !(cfg.gridStep > 0))
    throw std::invalid_argument("horizon and gridStep must be > 0");
  const double ratio = cfg.horizonT / cfg.gridStep;
  const auto steps = static_cast<long>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(steps)) > 1e-9)
    throw std::invalid_argument("gridStep must divide the horizon");
  if (!(delta0_ >= 0) || !(cfg.delta2 >= 0))
    throw std::invalid_argument("safety bounds must be >= 0");

  // Zero-state step response on the grid: the coefficient of the held v in
  // the prediction, so y~_k = free_k + stepGain_k * v.
  stepGain_.resize(steps + 1);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(sys_.n());
  for (long k = 0; k <= steps; ++k) {
    stepGain_[k] = sys_.C.dot(z);
    if (k < steps) z = gridProp_.Ad * z + gridProp_.Bd;
  }
  state_.xTilde = Eigen::VectorXd::Zero(sys_.n());
}

void ReferenceGovernor::evaluate(double delta1Now, double& margin, double& vCap) const {
  // One pass over the grid: the peak of the prediction under the held v, and
  // the largest reference the remaining margin admits.
  const double room = cfg_.yLimit - delta1Now - cfg_.delta2;
  double worst = -std::numeric_limits<double>::infinity();
  double cap = std::numeric_limits<double>::infinity();
  Eigen::VectorXd xf = state_.xTilde;
  Eigen::VectorXd tmp(xf.size());
  const auto n = static_cast<long>(stepGain_.size());
  for (long k = 0; k < n; ++k) {
    const double freeK = sys_.C.dot(xf);
    worst = std::max(worst, freeK + stepGain_[k] * state_.v);
    if (stepGain_[k] > 1e-12) cap = std::min(cap, (room - freeK) / stepGain_[k]);
    if (k + 1 < n) {
      tmp.noalias() = gridProp_.Ad * xf;
      xf.swap(tmp);
    }
  }
  margin = room - worst;
  vCap = cap;
}

double ReferenceGovernor::margin(double t) const {
  const double epoch = cfg_.delta1Clock == ErgConfig::Delta1Clock::reference
                           ? state_.referenceEpoch
                           : state_.tLastMove;
  const double d1 = delta1(t, epoch, delta0_, cfg_.delta1HoldS, cfg_.delta1TauS);
  double m, capUnused;
  evaluate(d1, m, capUnused);
  return m;
}

double ReferenceGovernor::step(double t, double r) {
  if (std::isnan(lastR_)) {
    lastR_ = r;  // the construction-time epoch covers the first reference
  } else if (r != lastR_) {
    state_.referenceEpoch = t;
    lastR_ = r;
  }
  const double epoch = cfg_.delta1Clock == ErgConfig::Delta1Clock::reference
                           ? state_.referenceEpoch
                           : state_.tLastMove;
  const double d1 = delta1(t, epoch, delta0_, cfg_.delta1HoldS, cfg_.delta1TauS);
  double margin, vCap;
  evaluate(d1, margin, vCap);
  lastMargin_ = margin;

  GovernorState scratch = state_;
  double vNew = erg_step(scratch, r, margin, cfg_, dt_, t);
  if (vNew > state_.v) vNew = std::min(vNew, std::max(state_.v, vCap));
  if (vNew != state_.v) state_.tLastMove = t;
  state_.v = vNew;
  internal_model_step(state_, simProp_, vNew);
  return vNew;
}

}  // namespace doh
