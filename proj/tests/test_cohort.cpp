#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "doh/cohort.hpp"
#include "doh/patient.hpp"

using namespace doh;

namespace {

bool same_patient(const PatientModel& a, const PatientModel& b) {
  return a.id == b.id && a.age == b.age && a.group == b.group &&
         a.pk.V1 == b.pk.V1 && a.pk.V2 == b.pk.V2 && a.pk.V3 == b.pk.V3 &&
         a.pk.Cl1 == b.pk.Cl1 && a.pk.Cl2 == b.pk.Cl2 && a.pk.Cl3 == b.pk.Cl3 &&
         a.pd.Td == b.pd.Td && a.pd.kd == b.pd.kd && a.pd.EC50 == b.pd.EC50 &&
         a.pd.gamma == b.pd.gamma;
}

}  // namespace

TEST_CASE("default cohort is 44 patients cycling through the four groups") {
  const auto cohort = generate_cohort(CohortSpec{});
  REQUIRE(cohort.size() == 44);
  int perGroup[5] = {0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& p = cohort[i];
    CHECK(p.group == static_cast<int>(i) % 4 + 1);
    ++perGroup[p.group];
    char want[8];
    std::snprintf(want, sizeof want, "p%03zu", i + 1);
    CHECK(p.id == want);
  }
  for (int g = 1; g <= 4; ++g) CHECK(perGroup[g] == 11);
}

TEST_CASE("ages stay inside their group's bracket") {
  CohortSpec spec;
  spec.n = 400;
  spec.seed = 9;
  spec.spread = 0.3;
  const auto cohort = generate_cohort(spec);
  for (const auto& p : cohort) {
    switch (p.group) {
      case 1: CHECK(p.age >= 18); CHECK(p.age <= 29); break;
      case 2: CHECK(p.age >= 30); CHECK(p.age <= 39); break;
      case 3: CHECK(p.age >= 40); CHECK(p.age <= 49); break;
      default: CHECK(p.age >= 50); CHECK(p.age <= 60); break;
    }
  }
}

TEST_CASE("zero spread reproduces the group anchors exactly") {
  CohortSpec spec;
  spec.spread = 0.0;
  const auto cohort = generate_cohort(spec);
  for (const auto& p : cohort) {
    const auto& a = anchor_patient(p.group);
    CHECK(p.age == a.age);
    CHECK(p.pk.V1 == a.pk.V1);
    CHECK(p.pk.Cl1 == a.pk.Cl1);
    CHECK(p.pd.Td == a.pd.Td);
    CHECK(p.pd.kd == a.pd.kd);
    CHECK(p.pd.EC50 == a.pd.EC50);
    CHECK(p.pd.gamma == a.pd.gamma);
  }
}

TEST_CASE("generation is bit-reproducible and seed-sensitive") {
  CohortSpec spec;
  spec.seed = 123;
  spec.spread = 0.15;
  const auto a = generate_cohort(spec);
  const auto b = generate_cohort(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_patient(a[i], b[i]));

  spec.seed = 124;
  const auto c = generate_cohort(spec);
  int differing = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_patient(a[i], c[i])) ++differing;
  CHECK(differing == static_cast<int>(a.size()));
}

TEST_CASE("draws are centered on the anchors") {
  CohortSpec spec;
  spec.n = 2000;
  spec.seed = 5;
  spec.spread = 0.3;
  const auto cohort = generate_cohort(spec);
  std::vector<double> ec50;
  ec50.reserve(cohort.size() / 4);
  for (const auto& p : cohort)
    if (p.group == 2) ec50.push_back(p.pd.EC50);
  std::sort(ec50.begin(), ec50.end());
  const double median = ec50[ec50.size() / 2];
  const double anchor = anchor_patient(2).pd.EC50;
  CHECK(median == doctest::Approx(anchor).epsilon(0.10));
}

TEST_CASE("spec validation") {
  CohortSpec bad;
  bad.n = -1;
  CHECK_THROWS_AS(generate_cohort(bad), std::invalid_argument);
  bad.n = 4;
  bad.spread = -0.1;
  CHECK_THROWS_AS(generate_cohort(bad), std::invalid_argument);
  bad.spread = 2.5;
  CHECK_THROWS_AS(generate_cohort(bad), std::invalid_argument);
  bad.spread = std::nan("");
  CHECK_THROWS_AS(generate_cohort(bad), std::invalid_argument);
}

TEST_CASE("save and load round-trip preserves the cohort") {
  CohortSpec spec;
  spec.n = 12;
  spec.seed = 77;
  spec.spread = 0.2;
  const auto cohort = generate_cohort(spec);

  std::ostringstream out;
  save_cohort(out, cohort, "round-trip check\nsecond line");
  const std::string text = out.str();
  CHECK(text.rfind("# id, age,", 0) == 0);
  CHECK(text.find("# round-trip check\n") != std::string::npos);
  CHECK(text.find("# second line\n") != std::string::npos);

  std::istringstream in(text);
  const auto back = load_cohort(in, "mem.csv");
  REQUIRE(back.size() == cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    CHECK(back[i].id == cohort[i].id);
    CHECK(back[i].group == cohort[i].group);
    CHECK(back[i].pk.V1 == doctest::Approx(cohort[i].pk.V1).epsilon(1e-10));
    CHECK(back[i].pk.Cl3 == doctest::Approx(cohort[i].pk.Cl3).epsilon(1e-10));
    CHECK(back[i].pd.Td == doctest::Approx(cohort[i].pd.Td).epsilon(1e-10));
    CHECK(back[i].pd.gamma == doctest::Approx(cohort[i].pd.gamma).epsilon(1e-10));
  }
}

TEST_CASE("loader errors carry file, line, and column context") {
  auto load = [](const std::string& text) {
    std::istringstream in(text);
    return load_cohort(in, "bad.csv");
  };

  // wrong column count
  CHECK_THROWS_WITH_AS(load("p001, 25, 7.0\n"),
                       doctest::Contains("bad.csv:1: expected 12 columns"),
                       CohortFormatError);
  // non-numeric cell names the column
  CHECK_THROWS_WITH_AS(
      load("p001, 25, seven, 120, 30, 0.05, 0.2, 0.001, 20, 0.007, 3.0, 2.2\n"),
      doctest::Contains("column V1: not a number: 'seven'"), CohortFormatError);
  // nonpositive parameter names the column and the patient
  CHECK_THROWS_WITH_AS(
      load("p009, 25, -7, 120, 30, 0.05, 0.2, 0.001, 20, 0.007, 3.0, 2.2\n"),
      doctest::Contains("column V1 must be > 0 for patient p009"), CohortFormatError);
  // Td may be zero but not negative
  CHECK_NOTHROW(load("p001, 25, 7, 120, 30, 0.05, 0.2, 0.001, 0, 0.007, 3.0, 2.2\n"));
  CHECK_THROWS_WITH_AS(
      load("p001, 25, 7, 120, 30, 0.05, 0.2, 0.001, -1, 0.007, 3.0, 2.2\n"),
      doctest::Contains("column Td must be >= 0"), CohortFormatError);
  // empty id
  CHECK_THROWS_WITH_AS(load(", 25, 7, 120, 30, 0.05, 0.2, 0.001, 20, 0.007, 3.0, 2.2\n"),
                       doctest::Contains("bad.csv:1: empty id"), CohortFormatError);
  // line numbers count comments and blanks
  CHECK_THROWS_WITH_AS(load("# header\n\np001, 25, 7.0\n"),
                       doctest::Contains("bad.csv:3:"), CohortFormatError);
}

TEST_CASE("missing cohort file reports its path") {
  CHECK_THROWS_WITH_AS(load_cohort(std::filesystem::path("/nonexistent/x.csv")),
                       doctest::Contains("cannot open cohort file"), CohortFormatError);
}

TEST_CASE("comments and blank lines are skipped when loading") {
  std::istringstream in(
      "# comment\n"
      "\n"
      "p001, 25, 7, 120, 30, 0.05, 0.2, 0.001, 20, 0.007, 3.0, 2.2\n"
      "  # indented comment\n"
      "p002, 35, 8, 110, 25, 0.06, 0.2, 0.001, 18, 0.008, 3.1, 2.1\n");
  const auto cohort = load_cohort(in, "ok.csv");
  REQUIRE(cohort.size() == 2);
  CHECK(cohort[0].id == "p001");
  CHECK(cohort[0].group == 1);
  CHECK(cohort[1].id == "p002");
  CHECK(cohort[1].group == 2);
}
