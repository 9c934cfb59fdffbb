#include "doh/linear_system.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

namespace doh {

namespace {

std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> r(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return r;
}

}  // namespace

RationalTf pade_delay(double Td, int order) {
  if (order < 1 || order > 3) throw std::invalid_argument("pade order must be 1..3");
  if (Td < 0) throw std::invalid_argument("Td must be >= 0");
  if (Td == 0.0) return RationalTf{{1.0}, {1.0}};

  // Diagonal coefficients c_k = (2q-k)! q! / ((2q)! k! (q-k)!) Td^k.
  auto fact = [](int m) {
    double f = 1;
    for (int i = 2; i <= m; ++i) f *= i;
    return f;
  };
  const int q = order;
  std::vector<double> num(q + 1), den(q + 1);
  for (int k = 0; k <= q; ++k) {
    const double c =
        fact(2 * q - k) * fact(q) / (fact(2 * q) * fact(k) * fact(q - k)) * std::pow(Td, k);
    den[k] = c;
    num[k] = (k % 2 == 0) ? c : -c;
  }
  return RationalTf{num, den};
}

StateSpace realize(const RationalTf& tf) {
  if (tf.den.empty() || tf.num.empty()) throw std::invalid_argument("empty polynomial");
  if (tf.num.size() > tf.den.size()) throw std::invalid_argument("improper transfer function");
  const int n = static_cast<int>(tf.den.size()) - 1;
  const double lead = tf.den.back();
  if (lead == 0.0) throw std::invalid_argument("zero leading denominator coefficient");

  std::vector<double> den(tf.den), num(tf.num);
  for (auto& d : den) d /= lead;
  for (auto& c : num) c /= lead;
  num.resize(n + 1, 0.0);

  StateSpace ss;
  if (n == 0) {
    ss.A.resize(0, 0);
    ss.B.resize(0);
    ss.C.resize(0);
    ss.D = num[0];
    return ss;
  }
  ss.A = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) ss.A(i, i + 1) = 1.0;
  for (int j = 0; j < n; ++j) ss.A(n - 1, j) = -den[j];
  ss.B = Eigen::VectorXd::Zero(n);
  ss.B(n - 1) = 1.0;
  // Split off the feedthrough: num = D*den + strictly proper remainder.
  ss.D = num[n];
  ss.C.resize(n);
  for (int j = 0; j < n; ++j) ss.C(j) = num[j] - ss.D * den[j];
  return ss;
}

StateSpace series(const StateSpace& g1, const StateSpace& g2) {
  const int n1 = g1.n(), n2 = g2.n();
  StateSpace s;
  s.A = Eigen::MatrixXd::Zero(n1 + n2, n1 + n2);
  s.A.topLeftCorner(n1, n1) = g1.A;
  s.A.bottomRightCorner(n2, n2) = g2.A;
  s.A.bottomLeftCorner(n2, n1) = g2.B * g1.C;
  s.B = Eigen::VectorXd::Zero(n1 + n2);
  s.B.head(n1) = g1.B;
  s.B.tail(n2) = g2.B * g1.D;
  s.C = Eigen::RowVectorXd::Zero(n1 + n2);
  s.C.head(n1) = g2.D * g1.C;
  s.C.tail(n2) = g2.C;
  s.D = g2.D * g1.D;
  return s;
}

LinearClosedLoop::LinearClosedLoop(Eigen::MatrixXd a, Eigen::VectorXd b,
                                   Eigen::RowVectorXd c)
    : A(std::move(a)), B(std::move(b)), C(std::move(c)) {
  const double mre = maxRealEig();
  if (!(mre < 0))
    throw std::runtime_error("assembled closed loop is not Hurwitz (max Re eig = " +
                             std::to_string(mre) + ")");
}

double LinearClosedLoop::maxRealEig() const {
  Eigen::EigenSolver<Eigen::MatrixXd> es(A, /*computeEigenvectors=*/false);
  return es.eigenvalues().real().maxCoeff();
}

namespace {

/// Two-input realization of the two-degree-of-freedom controller
///   u = (kp + ki/s) v - (kp + ki/s + kd s/(Tf s + 1)) y.
/// The two integral actions share one state driven by the error v - y.
/// Realizing them as separate states would pin an exact zero eigenvalue on
/// the assembled matrix (the common integrator drift cancels in u and is
/// unobservable from y), so the shared form is what keeps the loop matrix
/// Hurwitz and invertible.
struct ControllerBlock {
  Eigen::Matrix2d A;        // states: [integral of (v - y), derivative filter]
  Eigen::Vector2d Bv, By;   // input columns for v and y
  Eigen::RowVector2d C;
  double Dv = 0, Dy = 0;
};

ControllerBlock controller_block(const PidParams& pid) {
  if (!(pid.Tf > 0)) throw std::invalid_argument("derivative filter Tf must be > 0");
  ControllerBlock c;
  c.A << 0, 0, 0, -1.0 / pid.Tf;
  c.Bv << 1, 0;
  c.By << -1, 1.0 / pid.Tf;
  c.C << pid.ki, pid.kd / pid.Tf;
  c.Dv = pid.kp;
  c.Dy = -(pid.kp + pid.kd / pid.Tf);
  return c;
}

/// Loop v -> y~ from controller, plant (input u, strictly proper), and sensor.
LinearClosedLoop assemble_closed_loop(const ControllerBlock& ctl, const StateSpace& plant,
                                      const StateSpace& sensor) {
  if (plant.D != 0.0) throw std::invalid_argument("plant block must be strictly proper");
  const int nc = 2, np = plant.n(), ns = sensor.n();
  const int n = nc + np + ns;
  const int oc = 0, op = nc, os = nc + np;

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  A.block(oc, oc, nc, nc) = ctl.A;
  A.block(oc, os, nc, ns) = ctl.By * sensor.C;
  A.block(op, oc, np, nc) = plant.B * ctl.C;
  A.block(op, op, np, np) = plant.A;
  A.block(op, os, np, ns) = plant.B * ctl.Dy * sensor.C;
  A.block(os, op, ns, np) = sensor.B * plant.C;
  A.block(os, os, ns, ns) = sensor.A;

  Eigen::VectorXd B = Eigen::VectorXd::Zero(n);
  B.segment(oc, nc) = ctl.Bv;
  B.segment(op, np) = plant.B * ctl.Dv;

  Eigen::RowVectorXd C = Eigen::RowVectorXd::Zero(n);
  C.segment(os, ns) = sensor.C;

  return LinearClosedLoop(std::move(A), std::move(B), std::move(C));
}

StateSpace sensor_block() {
  // (1/(tau s + 1))^2 as two cascaded lags.
  const double a = 1.0 / kMonitorTauS;
  StateSpace ss;
  ss.A = Eigen::MatrixXd::Zero(2, 2);
  ss.A(0, 0) = -a;
  ss.A(1, 0) = a;
  ss.A(1, 1) = -a;
  ss.B = Eigen::VectorXd::Zero(2);
  ss.B(0) = a;
  ss.C = Eigen::RowVectorXd::Zero(2);
  ss.C(1) = 1.0;
  ss.D = 0.0;
  return ss;
}

}  // namespace

LinearClosedLoop build_closed_loop(const NominalLinearModel& nom, const PidParams& pid,
                                   int padeOrder) {
  // K (s+z1)(s+z2) / prod(s+p_i), then the delay as a Pade factor.
  RationalTf tf;
  tf.num = poly_mul({nom.z1, 1.0}, {nom.z2, 1.0});
  for (auto& c : tf.num) c *= nom.K;
  tf.den = {1.0};
  for (double p : nom.p) tf.den = poly_mul(tf.den, {p, 1.0});

  const RationalTf pade = pade_delay(nom.Td, padeOrder);
  tf.num = poly_mul(tf.num, pade.num);
  tf.den = poly_mul(tf.den, pade.den);

  return assemble_closed_loop(controller_block(pid), realize(tf), sensor_block());
}

LinearClosedLoop build_patient_closed_loop(const PatientModel& patient,
                                           const PidParams& pid, int padeOrder) {
  const auto& pk = patient.pk;
  StateSpace pkss;
  pkss.A.resize(3, 3);
  pkss.A << -(pk.k10 + pk.k12 + pk.k13), pk.k12, pk.k13,  //
      pk.k21, -pk.k21, 0.0,                               //
      pk.k31, 0.0, -pk.k31;
  pkss.B = Eigen::Vector3d(1.0 / pk.V1, 0.0, 0.0);
  pkss.C = Eigen::RowVector3d(1.0, 0.0, 0.0);
  pkss.D = 0.0;

  StateSpace lag;  // effect-site lag with the local Hill slope folded in
  lag.A = Eigen::MatrixXd::Constant(1, 1, -patient.pd.kd);
  lag.B = Eigen::VectorXd::Constant(1, patient.pd.kd);
  const double gain = patient.pd.gamma / 2.0 / (2.0 * patient.pd.EC50);
  lag.C = Eigen::RowVectorXd::Constant(1, gain);
  lag.D = 0.0;

  const StateSpace plant =
      series(series(pkss, realize(pade_delay(patient.pd.Td, padeOrder))), lag);
  return assemble_closed_loop(controller_block(pid), plant, sensor_block());
}

DiscretePropagator DiscretePropagator::make(const LinearClosedLoop& sys, double h) {
  if (!(h > 0)) throw std::invalid_argument("step must be > 0");
  const int n = sys.n();
  // exp([[A, B], [0, 0]] h) = [[Ad, Bd], [0, I]].
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + 1, n + 1);
  m.topLeftCorner(n, n) = sys.A * h;
  m.topRightCorner(n, 1) = sys.B * h;
  const Eigen::MatrixXd phi = m.exp();
  DiscretePropagator p;
  p.Ad = phi.topLeftCorner(n, n);
  p.Bd = phi.topRightCorner(n, 1);
  p.h = h;
  return p;
}

std::vector<double> predict_output(const LinearClosedLoop& sys, const Eigen::VectorXd& x,
                                   double v, double T, double gridStep) {
  if (!(T > 0) || !(gridStep > 0)) throw std::invalid_argument("T, gridStep must be > 0");
  const double ratio = T / gridStep;
  const auto steps = static_cast<long>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(steps)) > 1e-9)
    throw std::invalid_argument("gridStep must divide the horizon T");

  const auto prop = DiscretePropagator::make(sys, gridStep);
  std::vector<double> out;
  out.reserve(steps + 1);
  Eigen::VectorXd xk = x;
  out.push_back(sys.C.dot(xk));
  for (long k = 0; k < steps; ++k) {
    xk = prop.Ad * xk + prop.Bd * v;
    out.push_back(sys.C.dot(xk));
  }
  return out;
}

Eigen::VectorXd equilibrium(const LinearClosedLoop& sys, double v) {
  // Row magnitudes span several orders (drug transfer rates vs filter rates),
  // which drags full-pivot LU under its rank threshold; equilibrate rows
  // before solving.
  const int n = sys.n();
  Eigen::VectorXd scale(n);
  for (int i = 0; i < n; ++i) {
    const double m = sys.A.row(i).cwiseAbs().maxCoeff();
    scale[i] = m > 0 ? 1.0 / m : 1.0;
  }
  const Eigen::MatrixXd As = scale.asDiagonal() * sys.A;
  const Eigen::VectorXd bs = scale.asDiagonal() * (-sys.B * v);
  return As.fullPivLu().solve(bs);
}

double dc_gain(const LinearClosedLoop& sys) {
  return sys.C.dot(equilibrium(sys, 1.0));
}

double peak_time(const LinearClosedLoop& sys, double vStep) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(sys.A, false);
  const double slowest = -es.eigenvalues().real().maxCoeff();  // > 0 (Hurwitz)
  const double window = 4.0 / slowest;
  const long n = 200000;
  const double h = window / n;

  const auto prop = DiscretePropagator::make(sys, h);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.n());
  double best = sys.C.dot(x);
  double bestT = 0;
  for (long k = 1; k <= n; ++k) {
    x = prop.Ad * x + prop.Bd * vStep;
    const double y = sys.C.dot(x);
    if (y > best) {
      best = y;
      bestT = k * h;
    }
  }
  return bestT;
}

}  // namespace doh
