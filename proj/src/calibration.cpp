#include "doh/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "doh/controller.hpp"
#include "doh/linear_system.hpp"
#include "doh/rng.hpp"

namespace doh {

namespace {

constexpr std::uint64_t kDelta0Tag = 0x6d6f64656c2d3030ULL;
constexpr std::uint64_t kDelta2Tag = 0x7370726561642d32ULL;
constexpr std::uint64_t kHoldoutTag = 0x686f6c646f757431ULL;

long step_count(const CalibrationConfig& cfg) {
  if (!(cfg.dt > 0) || !(cfg.duration > cfg.dt))
    throw std::invalid_argument("calibration needs dt > 0 and duration > dt");
  return static_cast<long>(std::llround(cfg.duration / cfg.dt));
}

void check(const CalibrationConfig& cfg) {
  if (cfg.runs < 1) throw std::invalid_argument("runs must be >= 1");
  if (!(cfg.inflation >= 1.0)) throw std::invalid_argument("inflation must be >= 1");
  (void)step_count(cfg);
}

struct GapStats {
  double sup = 0;
  long samplesWithin = 0;
  long samplesTotal = 0;
};

/// |y - y~| between the nonlinear patient under the group controller and the
/// linearized loop the governor predicts with, both driven by the same
/// reference profile: the supremum, plus per-sample counts against `bound`.
GapStats model_gap(const PatientModel& patient, const ControllerConfig& ctrl,
                   const LinearClosedLoop& loop, const DiscretePropagator& prop,
                   const StepProfile& profile, const CalibrationConfig& cfg, double bound) {
  const long steps = step_count(cfg);
  PlantSimulator plant(patient, cfg.dt);
  ControllerState cs;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(loop.n()), tmp(loop.n());
  GapStats g;
  auto sample = [&](double y, double yTilde) {
    const double gap = std::abs(y - yTilde);
    g.sup = std::max(g.sup, gap);
    ++g.samplesTotal;
    if (gap <= bound) ++g.samplesWithin;
  };
  for (long k = 0; k < steps; ++k) {
    const double rK = profile_value(profile, static_cast<double>(k) * cfg.dt);
    const double y = plant.y();
    sample(y, loop.C.dot(x));
    const double u = two_dof_pid_step(cs, rK, y, ctrl.pid, ctrl.sat, cfg.dt).uSat;
    plant.step(u, 0.0);
    tmp.noalias() = prop.Ad * x + prop.Bd * rK;
    x.swap(tmp);
  }
  sample(plant.y(), loop.C.dot(x));
  return g;
}

GapStats group_gap(const std::vector<PatientModel>& cohort, int group,
                   const CalibrationConfig& cfg, std::uint64_t tag, double bound) {
  const ControllerConfig ctrl = controller_defaults(group);
  const LinearClosedLoop loop =
      build_closed_loop(nominal_model(group), ctrl.pid, cfg.padeOrder);
  const DiscretePropagator prop = DiscretePropagator::make(loop, cfg.dt);

  GapStats total;
  for (const auto& patient : cohort) {
    if (patient.group != group) continue;
    for (int run = 0; run < cfg.runs; ++run) {
      auto eng = rng::make_engine(cfg.seed, rng::fnv1a64(patient.id) ^ tag,
                                  static_cast<std::uint64_t>(run));
      const StepProfile profile = random_step_profile(eng, cfg.duration);
      const GapStats g = model_gap(patient, ctrl, loop, prop, profile, cfg, bound);
      total.sup = std::max(total.sup, g.sup);
      total.samplesWithin += g.samplesWithin;
      total.samplesTotal += g.samplesTotal;
    }
  }
  return total;
}

}  // namespace

double profile_value(const StepProfile& p, double t) {
  if (p.times.empty() || p.times.size() != p.levels.size())
    throw std::invalid_argument("malformed step profile");
  double v = p.levels.front();
  for (std::size_t i = 0; i < p.times.size(); ++i)
    if (p.times[i] <= t) v = p.levels[i];
  return v;
}

StepProfile random_step_profile(std::mt19937_64& eng, double duration) {
  const int nSteps = rng::uniform_int(eng, 2, 5);
  StepProfile p;
  double t = 0;
  double level = 0;
  for (int i = 0; i < nSteps && t < duration; ++i) {
    // Successive targets rise by bounded increments, mirroring how the
    // governor raises the applied reference during an induction: it never
    // commands a decrease, and each move is capped by the remaining headroom.
    level = std::min(level + rng::uniform(eng, 0.0, 0.25), 0.5);
    p.times.push_back(t);
    p.levels.push_back(level);
    t += rng::uniform(eng, 240.0, 600.0);
  }
  return p;
}

double estimate_delta0(const std::vector<PatientModel>& cohort, int group,
                       const CalibrationConfig& cfg) {
  check(cfg);
  return group_gap(cohort, group, cfg, kDelta0Tag, 0.0).sup;
}

double delta0_holdout_fraction(const std::vector<PatientModel>& cohort, int group,
                               double bound, const CalibrationConfig& cfg) {
  check(cfg);
  const GapStats g = group_gap(cohort, group, cfg, kHoldoutTag, bound);
  return g.samplesTotal > 0
             ? static_cast<double>(g.samplesWithin) / static_cast<double>(g.samplesTotal)
             : 1.0;
}

double estimate_delta2(const std::vector<PatientModel>& cohort,
                       const CalibrationConfig& cfg) {
  check(cfg);
  const long steps = step_count(cfg);

  struct GroupRef {
    LinearClosedLoop loop;
    DiscretePropagator prop;
  };
  std::map<int, GroupRef> anchors;

  double worst = 0;
  for (const auto& patient : cohort) {
    const ControllerConfig ctrl = controller_defaults(patient.group);
    auto it = anchors.find(patient.group);
    if (it == anchors.end()) {
      LinearClosedLoop loop = build_patient_closed_loop(anchor_patient(patient.group),
                                                        ctrl.pid, cfg.padeOrder);
      DiscretePropagator prop = DiscretePropagator::make(loop, cfg.dt);
      it = anchors.emplace(patient.group, GroupRef{std::move(loop), std::move(prop)}).first;
    }
    const GroupRef& anchor = it->second;

    const LinearClosedLoop loopP =
        build_patient_closed_loop(patient, ctrl.pid, cfg.padeOrder);
    const DiscretePropagator propP = DiscretePropagator::make(loopP, cfg.dt);

    Eigen::VectorXd xP(loopP.n()), xA(anchor.loop.n()), tP(loopP.n()), tA(anchor.loop.n());
    for (int run = 0; run < cfg.runs; ++run) {
      auto eng = rng::make_engine(cfg.seed, rng::fnv1a64(patient.id) ^ kDelta2Tag,
                                  static_cast<std::uint64_t>(run));
      const StepProfile profile = random_step_profile(eng, cfg.duration);
      xP.setZero();
      xA.setZero();
      for (long k = 0; k < steps; ++k) {
        const double rK = profile_value(profile, static_cast<double>(k) * cfg.dt);
        worst = std::max(worst, std::abs(loopP.C.dot(xP) - anchor.loop.C.dot(xA)));
        tP.noalias() = propP.Ad * xP + propP.Bd * rK;
        xP.swap(tP);
        tA.noalias() = anchor.prop.Ad * xA + anchor.prop.Bd * rK;
        xA.swap(tA);
      }
      worst = std::max(worst, std::abs(loopP.C.dot(xP) - anchor.loop.C.dot(xA)));
    }
  }
  return worst;
}

CalibrationBounds calibrate(const std::vector<PatientModel>& cohort,
                            const CalibrationConfig& cfg) {
  check(cfg);
  CalibrationBounds b;
  b.inflation = cfg.inflation;
  b.seed = cfg.seed;
  b.runs = cfg.runs;
  for (int g = 1; g <= kNumGroups; ++g)
    b.delta0[g - 1] = cfg.inflation * estimate_delta0(cohort, g, cfg);
  b.delta2 = cfg.inflation * estimate_delta2(cohort, cfg);
  return b;
}

void write_bounds(std::ostream& os, const CalibrationBounds& b) {
  char buf[64];
  os << "# reference governor safety bounds\n";
  os << "seed " << b.seed << '\n';
  os << "runs " << b.runs << '\n';
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  os << "inflation " << num(b.inflation) << '\n';
  for (int g = 1; g <= kNumGroups; ++g)
    os << "delta0.group" << g << ' ' << num(b.delta0[g - 1]) << '\n';
  os << "delta2 " << num(b.delta2) << '\n';
}

CalibrationBounds read_bounds(std::istream& is, const std::string& name) {
  CalibrationBounds b;
  std::map<std::string, bool> seen;
  std::string line;
  int lineNo = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(name + ":" + std::to_string(lineNo) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineNo;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (seen[key]) fail("duplicate key '" + key + "'");
    seen[key] = true;

    auto parse = [&](auto& target) {
      if (!(ls >> target)) fail("missing or bad value for '" + key + "'");
      std::string rest;
      if (ls >> rest) fail("trailing content after '" + key + "'");
    };
    if (key == "seed")
      parse(b.seed);
    else if (key == "runs")
      parse(b.runs);
    else if (key == "inflation")
      parse(b.inflation);
    else if (key == "delta2")
      parse(b.delta2);
    else if (key.rfind("delta0.group", 0) == 0 && key.size() == 13 && key[12] >= '1' &&
             key[12] <= '4')
      parse(b.delta0[key[12] - '1']);
    else
      fail("unknown key '" + key + "'");
  }
  const char* required[] = {"seed",          "runs",          "inflation",
                            "delta2",        "delta0.group1", "delta0.group2",
                            "delta0.group3", "delta0.group4"};
  for (const char* key : required)
    if (!seen[key]) {
      lineNo = 0;
      fail(std::string("missing key '") + key + "'");
    }
  for (double d : b.delta0)
    if (!(d >= 0)) {
      lineNo = 0;
      fail("delta0 must be >= 0");
    }
  if (!(b.delta2 >= 0)) {
    lineNo = 0;
    fail("delta2 must be >= 0");
  }
  return b;
}

CalibrationBounds load_bounds(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open bounds file: " + path);
  return read_bounds(f, path);
}

void save_bounds(const std::string& path, const CalibrationBounds& b) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write bounds file: " + path);
  write_bounds(f, b);
}

}  // namespace doh
