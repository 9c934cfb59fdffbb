#include "doh/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "doh/rng.hpp"

namespace doh {

namespace {

using rng::fnv1a64;

struct Recorder {
  Trajectory traj;

  void reserve(std::size_t n) {
    for (auto* v : {&traj.t, &traj.r, &traj.v, &traj.uSat, &traj.c1, &traj.er, &traj.eo,
                    &traj.y, &traj.doh, &traj.delta})
      v->reserve(n);
  }

  void push(double t, double r, double v, double u, const PlantSimulator& plant,
            double delta) {
    traj.t.push_back(t);
    traj.r.push_back(r);
    traj.v.push_back(v);
    traj.uSat.push_back(u);
    traj.c1.push_back(plant.state().c[0]);
    traj.er.push_back(plant.state().er);
    traj.eo.push_back(plant.effect());
    traj.y.push_back(plant.y());
    traj.doh.push_back(100.0 * (1.0 - plant.y()));
    traj.delta.push_back(delta);
  }
};

Trajectory decimate(const Trajectory& full, int stride) {
  if (stride <= 1) return full;
  Trajectory out;
  out.hasDelta = full.hasDelta;
  const std::size_t n = full.size();
  for (std::size_t k = 0; k < n; ++k) {
    if (k % static_cast<std::size_t>(stride) != 0 && k + 1 != n) continue;
    out.t.push_back(full.t[k]);
    out.r.push_back(full.r[k]);
    out.v.push_back(full.v[k]);
    out.uSat.push_back(full.uSat[k]);
    out.c1.push_back(full.c1[k]);
    out.er.push_back(full.er[k]);
    out.eo.push_back(full.eo[k]);
    out.y.push_back(full.y[k]);
    out.doh.push_back(full.doh[k]);
    out.delta.push_back(full.delta[k]);
  }
  return out;
}

long step_count(const SimConfig& sim) {
  if (!(sim.dt > 0) || !(sim.duration >= sim.dt))
    throw std::invalid_argument("need dt > 0 and duration >= dt");
  if (!(sim.r >= 0.0 && sim.r < 1.0)) throw std::invalid_argument("r must lie in [0, 1)");
  if (sim.plantSubsteps < 1) throw std::invalid_argument("plantSubsteps must be >= 1");
  const auto steps = static_cast<long>(std::llround(sim.duration / sim.dt));
  if (steps < 1) throw std::invalid_argument("duration shorter than one step");
  return steps;
}

}  // namespace

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::noPrefilter: return "no-prefilter";
    case Mode::passivePrefilter: return "passive";
    case Mode::erg: return "erg";
  }
  return "?";
}

std::optional<Mode> mode_from_name(std::string_view name) {
  if (name == "no-prefilter" || name == "noprefilter" || name == "none")
    return Mode::noPrefilter;
  if (name == "passive" || name == "passive-prefilter") return Mode::passivePrefilter;
  if (name == "erg") return Mode::erg;
  return std::nullopt;
}

InductionMetrics compute_metrics(const Trajectory& traj, double r) {
  if (traj.size() < 2) throw std::invalid_argument("trajectory too short for metrics");
  InductionMetrics m;

  double peak = traj.y[0];
  for (double y : traj.y) peak = std::max(peak, y);
  m.peakY = peak;
  m.overshootPct = r > 0 ? std::max(0.0, 100.0 * (peak - r) / r) : 0.0;
  m.overdosed = std::any_of(traj.y.begin(), traj.y.end(),
                            [](double y) { return y > kOverdoseY; });

  std::optional<double> t10, t90;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    if (!t10 && traj.y[k] >= 0.1 * r) t10 = traj.t[k];
    if (!t90 && traj.y[k] >= 0.9 * r) {
      t90 = traj.t[k];
      break;
    }
  }
  if (t10 && t90 && r > 0) m.riseTimeS = *t90 - *t10;

  // Settling time: last sample outside the +-5% band; unsettled if that is
  // the final sample, 0 if the band is never left.
  const double band = 0.05 * r;
  std::ptrdiff_t lastOut = -1;
  for (std::size_t k = 0; k < traj.size(); ++k)
    if (std::abs(traj.y[k] - r) > band) lastOut = static_cast<std::ptrdiff_t>(k);
  if (lastOut < 0)
    m.settleTimeS = traj.t.front();
  else if (lastOut + 1 < static_cast<std::ptrdiff_t>(traj.size()))
    m.settleTimeS = traj.t[static_cast<std::size_t>(lastOut)];

  double mg = 0;
  for (std::size_t k = 0; k + 1 < traj.size(); ++k)
    if (traj.t[k] < 480.0) mg += traj.uSat[k] * (traj.t[k + 1] - traj.t[k]);
  m.drugMl8Min = mg / 10.0;  // 10 mg/ml propofol

  return m;
}

SimResult run_induction(const PatientModel& patient, const ControllerConfig& ctrl,
                        const SimConfig& sim, const ErgConfig* ergCfg) {
  if ((sim.mode == Mode::erg) != (ergCfg != nullptr))
    throw std::invalid_argument("governor config must be given exactly for erg mode");
  const long steps = step_count(sim);

  PlantSimulator plant(patient, sim.dt / sim.plantSubsteps);
  ControllerState cs;
  std::optional<ReferenceGovernor> gov;
  if (ergCfg) {
    const LinearClosedLoop loop =
        build_closed_loop(nominal_model(patient.group), ctrl.pid, ergCfg->padeOrder);
    gov.emplace(loop, *ergCfg, patient.group, sim.dt);
  }

  auto eng = rng::make_engine(sim.seed, fnv1a64(patient.id));
  const double noiseSd = sim.noiseVariance ? std::sqrt(*sim.noiseVariance) : 0.0;

  Recorder rec;
  rec.reserve(static_cast<std::size_t>(steps) + 1);
  rec.traj.hasDelta = (sim.mode == Mode::erg);

  double v = 0, u = 0;
  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * sim.dt;
    const double y = plant.y();
    switch (sim.mode) {
      case Mode::noPrefilter: v = sim.r; break;
      case Mode::passivePrefilter:
        v = prefilter_step(cs, sim.r, ctrl.prefilter, sim.dt);
        break;
      case Mode::erg: v = gov->step(t, sim.r); break;
    }
    u = two_dof_pid_step(cs, v, y, ctrl.pid, ctrl.sat, sim.dt).uSat;
    rec.push(t, sim.r, v, u, plant, gov ? gov->lastMargin() : 0.0);

    const double noise = noiseSd > 0 ? noiseSd * rng::normal(eng) : 0.0;
    for (int s = 0; s < sim.plantSubsteps; ++s) plant.step(u, noise);
  }
  rec.push(static_cast<double>(steps) * sim.dt, sim.r, v, u, plant,
           gov ? gov->lastMargin() : 0.0);

  SimResult res;
  res.metrics = compute_metrics(rec.traj, sim.r);
  res.metrics.id = patient.id;
  res.metrics.group = patient.group;
  res.metrics.mode = sim.mode;
  res.traj = decimate(rec.traj, sim.trajStride);
  return res;
}

std::vector<double> hill_linearization_error(const PatientModel& patient, GainMode gainMode,
                                             const SimConfig& sim) {
  if (sim.mode == Mode::erg)
    throw std::invalid_argument("linearization study runs without the governor");
  const long steps = step_count(sim);
  const ControllerConfig ctrl = controller_defaults(patient.group);
  // unity keeps the identity map; halfGamma is the tangent at the half-effect
  // point, which matches both the local slope and the equilibrium state of the
  // saturating curve (a through-origin gain would shift the settling point).
  const LinearEffect eff =
      gainMode == GainMode::unity
          ? LinearEffect{1.0, 0.0}
          : LinearEffect{patient.pd.gamma / 2.0, (2.0 - patient.pd.gamma) / 4.0};

  auto run = [&](std::optional<LinearEffect> staticEffect) {
    PlantSimulator plant(patient, sim.dt / sim.plantSubsteps, staticEffect);
    ControllerState cs;
    auto eng = rng::make_engine(sim.seed, fnv1a64(patient.id));
    const double noiseSd = sim.noiseVariance ? std::sqrt(*sim.noiseVariance) : 0.0;
    std::vector<double> ys;
    ys.reserve(static_cast<std::size_t>(steps) + 1);
    for (long k = 0; k < steps; ++k) {
      const double y = plant.y();
      double v = sim.r;
      if (sim.mode == Mode::passivePrefilter)
        v = prefilter_step(cs, sim.r, ctrl.prefilter, sim.dt);
      const double u = two_dof_pid_step(cs, v, y, ctrl.pid, ctrl.sat, sim.dt).uSat;
      ys.push_back(y);
      const double noise = noiseSd > 0 ? noiseSd * rng::normal(eng) : 0.0;
      for (int s = 0; s < sim.plantSubsteps; ++s) plant.step(u, noise);
    }
    ys.push_back(plant.y());
    return ys;
  };

  const std::vector<double> nonlinear = run(std::nullopt);
  const std::vector<double> linear = run(eff);
  std::vector<double> err(nonlinear.size());
  for (std::size_t k = 0; k < nonlinear.size(); ++k) err[k] = nonlinear[k] - linear[k];
  return err;
}

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  s.n = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  s.lo = *std::min_element(xs.begin(), xs.end());
  s.hi = *std::max_element(xs.begin(), xs.end());
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / s.n;
  double ss = 0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.sd = s.n > 1 ? std::sqrt(ss / (s.n - 1)) : 0.0;
  return s;
}

std::vector<ModeAggregate> aggregate_metrics(const std::vector<InductionMetrics>& metrics) {
  std::vector<ModeAggregate> out;
  for (Mode mode : {Mode::noPrefilter, Mode::passivePrefilter, Mode::erg}) {
    ModeAggregate a;
    a.mode = mode;
    std::vector<double> rise, settle, overshoot, peak, drug;
    for (const auto& m : metrics) {
      if (m.mode != mode) continue;
      ++a.n;
      if (m.riseTimeS) rise.push_back(*m.riseTimeS);
      if (m.settleTimeS) settle.push_back(*m.settleTimeS);
      overshoot.push_back(m.overshootPct);
      peak.push_back(m.peakY);
      drug.push_back(m.drugMl8Min);
      if (m.overdosed) ++a.overdosed;
    }
    if (a.n == 0) continue;
    a.rise = stats_of(rise);
    a.settle = stats_of(settle);
    a.overshoot = stats_of(overshoot);
    a.peak = stats_of(peak);
    a.drug = stats_of(drug);
    out.push_back(std::move(a));
  }
  return out;
}

CohortExperimentResult run_cohort_experiment(
    const std::vector<PatientModel>& cohort, const std::vector<Mode>& modes,
    const SimConfig& sim, const ErgConfig* ergCfg, int workers, const ResultSink& sink,
    const std::function<ControllerConfig(int group)>& controllerFor) {
  if (cohort.empty()) throw std::invalid_argument("empty cohort");
  const bool wantsErg = std::find(modes.begin(), modes.end(), Mode::erg) != modes.end();
  if (wantsErg && !ergCfg)
    throw std::invalid_argument("erg mode requested without governor config");

  // Merge order is by patient id however the jobs are scheduled.
  std::vector<std::size_t> order(cohort.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cohort[a].id < cohort[b].id; });

  struct Job {
    std::optional<SimResult> result;
    std::string failure;
  };
  const std::size_t nJobs = cohort.size() * modes.size();
  std::vector<Job> jobs(nJobs);

  auto runJob = [&](std::size_t j) {
    const PatientModel& patient = cohort[order[j / modes.size()]];
    const Mode mode = modes[j % modes.size()];
    SimConfig c = sim;
    c.mode = mode;
    try {
      const ControllerConfig ctrl =
          controllerFor ? controllerFor(patient.group) : controller_defaults(patient.group);
      jobs[j].result =
          run_induction(patient, ctrl, c, mode == Mode::erg ? ergCfg : nullptr);
    } catch (const std::exception& e) {
      jobs[j].failure = e.what();
    }
  };

  workers = std::clamp<int>(workers, 1, static_cast<int>(nJobs));
  if (workers <= 1) {
    for (std::size_t j = 0; j < nJobs; ++j) runJob(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t j = next.fetch_add(1); j < nJobs; j = next.fetch_add(1)) runJob(j);
      });
    for (auto& th : pool) th.join();
  }

  CohortExperimentResult out;
  for (std::size_t j = 0; j < nJobs; ++j) {
    const PatientModel& patient = cohort[order[j / modes.size()]];
    if (jobs[j].result) {
      if (sink) sink(patient, *jobs[j].result);
      out.metrics.push_back(jobs[j].result->metrics);
    } else {
      out.failures.push_back({patient.id, modes[j % modes.size()], jobs[j].failure});
    }
  }
  out.aggregates = aggregate_metrics(out.metrics);
  return out;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t_s,r,v,u_mgps,u_mlph,C1_ugml,Er,Eo,y,DOH,Delta\n";
  char buf[320];
  for (std::size_t k = 0; k < traj.size(); ++k) {
    std::snprintf(buf, sizeof buf,
                  "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g",
                  traj.t[k], traj.r[k], traj.v[k], traj.uSat[k], traj.uSat[k] * 360.0,
                  traj.c1[k], traj.er[k], traj.eo[k], traj.y[k], traj.doh[k]);
    os << buf << ',';
    if (traj.hasDelta) {
      std::snprintf(buf, sizeof buf, "%.10g", traj.delta[k]);
      os << buf;
    }
    os << '\n';
  }
}

void write_metrics_csv(std::ostream& os, const std::vector<InductionMetrics>& metrics) {
  os << "id,group,mode,rise_s,settle_s,overshoot_pct,peak_y,drug_8min_ml,overdosed\n";
  char buf[128];
  for (const auto& m : metrics) {
    os << m.id << ',' << m.group << ',' << mode_name(m.mode) << ',';
    if (m.riseTimeS) {
      std::snprintf(buf, sizeof buf, "%.6g", *m.riseTimeS);
      os << buf;
    }
    os << ',';
    if (m.settleTimeS) {
      std::snprintf(buf, sizeof buf, "%.6g", *m.settleTimeS);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6g,%.8g,%.8g,%d", m.overshootPct, m.peakY,
                  m.drugMl8Min, m.overdosed ? 1 : 0);
    os << buf << '\n';
  }
}

namespace {

void print_stat_line(std::ostream& os, const char* label, const Stats& s, int total,
                     const char* missingWord) {
  char buf[256];
  if (s.n == 0) {
    std::snprintf(buf, sizeof buf, "  %-20s: none %s\n", label, missingWord);
    os << buf;
    return;
  }
  std::snprintf(buf, sizeof buf, "  %-20s: mean %.4g +- %.3g, range [%.4g, %.4g]", label,
                s.mean, s.sd, s.lo, s.hi);
  os << buf;
  if (s.n < total) {
    std::snprintf(buf, sizeof buf, "  (%d of %d %s)", total - s.n, total, missingWord);
    os << buf;
  }
  os << '\n';
}

}  // namespace

void write_summary_report(std::ostream& os, const CohortExperimentResult& result,
                          const SimConfig& sim) {
  char buf[256];
  os << "Closed-loop induction summary\n";
  std::snprintf(buf, sizeof buf,
                "  target %.3g, duration %.6g s, dt %.3g s, hard bound y <= %.3g\n", sim.r,
                sim.duration, sim.dt, kOverdoseY);
  os << buf;
  if (sim.noiseVariance)
    std::snprintf(buf, sizeof buf, "  effect noise variance %.4g, seed %llu\n",
                  *sim.noiseVariance, static_cast<unsigned long long>(sim.seed));
  else
    std::snprintf(buf, sizeof buf, "  noise-free\n");
  os << buf;

  for (const ModeAggregate& a : result.aggregates) {
    std::snprintf(buf, sizeof buf, "\nmode %s (n = %d)\n",
                  std::string(mode_name(a.mode)).c_str(), a.n);
    os << buf;
    print_stat_line(os, "rise time [s]", a.rise, a.n, "did not rise");
    print_stat_line(os, "settling time [s]", a.settle, a.n, "did not settle");
    print_stat_line(os, "overshoot [%]", a.overshoot, a.n, "");
    print_stat_line(os, "peak y", a.peak, a.n, "");
    print_stat_line(os, "drug at 8 min [ml]", a.drug, a.n, "");
    std::snprintf(buf, sizeof buf, "  %-20s: %d of %d\n", "overdosed (y > 0.6)", a.overdosed,
                  a.n);
    os << buf;
  }

  if (!result.failures.empty()) {
    os << "\nfailed runs (excluded from the aggregates above):\n";
    for (const auto& f : result.failures)
      os << "  " << f.id << '/' << mode_name(f.mode) << ": " << f.what << '\n';
  }
}

}  // namespace doh
