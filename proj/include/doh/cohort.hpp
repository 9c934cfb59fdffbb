#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "doh/patient.hpp"

namespace doh {

struct CohortSpec {
  int n = 44;
  std::uint64_t seed = 1;
  double spread = 0.1;  // relative std per parameter (log-normal)
};

/// Deterministically draws `n` synthetic patients around the group anchors.
/// Groups are assigned round-robin so sizes differ by at most one; every PK/PD
/// parameter is drawn log-normally with median at the anchor value and the
/// requested relative spread. spread == 0 reproduces the anchors exactly.
std::vector<PatientModel> generate_cohort(const CohortSpec& spec);

/// Cohort file: one patient per line,
///   id, age, V1, V2, V3, Cl1, Cl2, Cl3, Td, kd, EC50, gamma
/// with '#' comment lines. The age group is derived, never stored.
/// Throws CohortFormatError with line number and field name on bad input.
std::vector<PatientModel> load_cohort(const std::filesystem::path& file);
std::vector<PatientModel> load_cohort(std::istream& in, const std::string& name);

void save_cohort(const std::filesystem::path& file, const std::vector<PatientModel>& cohort,
                 const std::string& headerComment = "");
void save_cohort(std::ostream& out, const std::vector<PatientModel>& cohort,
                 const std::string& headerComment = "");

struct CohortFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace doh
