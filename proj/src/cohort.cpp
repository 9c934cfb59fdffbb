#include "doh/cohort.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "doh/rng.hpp"

namespace doh {

std::vector<PatientModel> generate_cohort(const CohortSpec& spec) {
  if (spec.n < 0) throw std::invalid_argument("cohort size must be >= 0");
  if (!(spec.spread >= 0.0) || spec.spread > 2.0)
    throw std::invalid_argument("spread must lie in [0, 2]");

  std::vector<PatientModel> cohort;
  cohort.reserve(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    const int group = i % kNumGroups + 1;
    const auto& a = anchor_patient(group);
    auto g = rng::make_engine(spec.seed, 0x636F686FULL, static_cast<std::uint64_t>(i));

    // spread 0 must yield per-group identical rows, so the age collapses to
    // the anchor's as well.
    const int lo = (group == 1) ? 18 : (group == 2) ? 30 : (group == 3) ? 40 : 50;
    const int hi = (group == 4) ? 60 : lo + 9;
    const double age =
        spec.spread == 0.0 ? a.age : rng::uniform_int(g, lo, hi);

    const double s = spec.spread;
    auto draw = [&](double median) { return rng::lognormal(g, median, s); };
    auto pk = PkParams::from_volumes_clearances(draw(a.pk.V1), draw(a.pk.V2), draw(a.pk.V3),
                                                draw(a.pk.Cl1), draw(a.pk.Cl2),
                                                draw(a.pk.Cl3));
    auto pd = PdParams::make(draw(a.pd.Td), draw(a.pd.kd), draw(a.pd.EC50),
                             draw(a.pd.gamma));

    char id[16];
    std::snprintf(id, sizeof id, "p%03d", i + 1);
    cohort.push_back(PatientModel::make(id, age, pk, pd));
  }
  return cohort;
}

namespace {

constexpr const char* kColumns[12] = {"id",  "age", "V1", "V2",   "V3",   "Cl1",
                                      "Cl2", "Cl3", "Td", "kd", "EC50", "gamma"};

[[noreturn]] void fail(const std::string& name, int line, const std::string& what) {
  throw CohortFormatError(name + ":" + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

std::vector<PatientModel> load_cohort(std::istream& in, const std::string& name) {
  std::vector<PatientModel> cohort;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;

    std::vector<std::string> cols;
    std::stringstream ss(t);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(trim(cell));
    if (cols.size() != 12)
      fail(name, lineNo,
           "expected 12 columns (id, age, V1, V2, V3, Cl1, Cl2, Cl3, Td, kd, EC50, gamma), got " +
               std::to_string(cols.size()));

    const std::string& id = cols[0];
    if (id.empty()) fail(name, lineNo, "empty id");

    double vals[11];
    for (int i = 1; i < 12; ++i) {
      try {
        std::size_t pos = 0;
        vals[i - 1] = std::stod(cols[i], &pos);
        if (pos != cols[i].size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        fail(name, lineNo, std::string("column ") + kColumns[i] + ": not a number: '" +
                               cols[i] + "'");
      }
    }
    const double age = vals[0];
    // Strictly positive physical parameters at the file boundary; Td may be 0.
    for (int i = 2; i < 12; ++i) {
      const bool ok = (i == 8) ? vals[i - 1] >= 0 : vals[i - 1] > 0;
      if (!ok)
        fail(name, lineNo, std::string("column ") + kColumns[i] + " must be " +
                               (i == 8 ? ">= 0" : "> 0") + " for patient " + id);
    }
    try {
      auto pk = PkParams::from_volumes_clearances(vals[1], vals[2], vals[3], vals[4],
                                                  vals[5], vals[6]);
      auto pd = PdParams::make(vals[7], vals[8], vals[9], vals[10]);
      cohort.push_back(PatientModel::make(id, age, pk, pd));
    } catch (const std::invalid_argument& e) {
      fail(name, lineNo, std::string(e.what()) + " for patient " + id);
    }
  }
  return cohort;
}

std::vector<PatientModel> load_cohort(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw CohortFormatError("cannot open cohort file: " + file.string());
  return load_cohort(in, file.filename().string());
}

void save_cohort(std::ostream& out, const std::vector<PatientModel>& cohort,
                 const std::string& headerComment) {
  out << "# id, age, V1[l], V2[l], V3[l], Cl1[l/s], Cl2[l/s], Cl3[l/s], Td[s], kd[1/s], "
         "EC50[ug/ml], gamma\n";
  if (!headerComment.empty()) {
    std::stringstream ss(headerComment);
    std::string l;
    while (std::getline(ss, l)) out << "# " << l << "\n";
  }
  char buf[512];
  for (const auto& p : cohort) {
    std::snprintf(buf, sizeof buf,
                  "%s, %g, %.12g, %.12g, %.12g, %.12g, %.12g, %.12g, %.12g, %.12g, %.12g, "
                  "%.12g\n",
                  p.id.c_str(), p.age, p.pk.V1, p.pk.V2, p.pk.V3, p.pk.Cl1, p.pk.Cl2,
                  p.pk.Cl3, p.pd.Td, p.pd.kd, p.pd.EC50, p.pd.gamma);
    out << buf;
  }
}

void save_cohort(const std::filesystem::path& file, const std::vector<PatientModel>& cohort,
                 const std::string& headerComment) {
  std::ofstream out(file);
  if (!out) throw CohortFormatError("cannot write cohort file: " + file.string());
  save_cohort(out, cohort, headerComment);
}

}  // namespace doh
