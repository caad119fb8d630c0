#pragma once

// Synthetic EHR cohort: a parametric logistic-hazard transition model that
// generates monthly patient trajectories, exact analytic expectations of its
// own infection rates, exact tabulation of the induced booster MDP, and the
// conditional rate tables used for calibration reporting.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "booster/core_types.hpp"
#include "booster/oracle.hpp"
#include "booster/rng.hpp"

namespace booster {

enum class Gender : std::uint8_t { F = 0, M };
enum class Race : std::uint8_t { Caucasian = 0, AfricanAmerican, Other };
enum class VisitsBand : std::uint8_t { V0_4 = 0, V5_9, V10_19, V20_49, V50plus };
enum class ComorbidityBand : std::uint8_t { C0 = 0, C1_2, C3_4, C5plus };
enum class Variant : std::uint8_t { Alpha = 0, Delta, Omicron };
enum class Outcome : std::uint8_t { Severe = 0, General };

const char* to_string(Gender g);
const char* to_string(Race r);
const char* to_string(VisitsBand v);
const char* to_string(ComorbidityBand c);
const char* to_string(Variant v);
Gender gender_from_string(const std::string& s);
Race race_from_string(const std::string& s);
VisitsBand visits_band_from_string(const std::string& s);
ComorbidityBand comorbidity_band_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

struct Baseline {
  int age_years = 30;
  Gender gender = Gender::F;
  Race race = Race::Caucasian;
  VisitsBand visits = VisitsBand::V0_4;
  ComorbidityBand comorbidity = ComorbidityBand::C0;
  bool imm = false;

  AgeBand age_band() const { return age_band_from_years(age_years); }
};

struct MonthRecord {
  int month = 1;  // 1..27
  Variant variant = Variant::Alpha;
  int num_vaccines = 0;           // 0..4
  int months_since_last_vax = -1; // -1 = never vaccinated
  Action action = Action::NoBooster;  // dose administered this month
  int general_infection = 0;
  int severe_infection = 0;
};

struct Trajectory {
  int patient_id = 0;
  Baseline baseline;
  int second_dose_month = -1;      // T_i, -1 if fewer than two doses
  int observed_booster_month = -1; // month of the third dose, -1 if none
  std::vector<MonthRecord> records;

  bool has_second_dose() const { return second_dose_month >= 1; }
  bool ended_by_severe() const {
    return !records.empty() && records.back().severe_infection == 1;
  }
};

// Logistic hazard coefficients for one outcome.
struct HazardCoeffs {
  double intercept = 0.0;
  std::array<double, kNumAgeBands> age{};
  double male = 0.0;
  double imm = 0.0;
  std::array<double, 4> comorbidity{};
  std::array<double, 5> visits{};
  std::array<double, 3> race{};
  std::array<double, 3> variant{};
  std::array<double, 5> num_vaccines{};
  std::array<double, kNumRecencyBands> recency{};  // applies once vaccinated
  double prior_general = 0.0;
};

// Behavioral vaccination process ("policy from data" stand-in).
struct UptakeModel {
  int dose1_start_month = 10;
  double dose1_monthly_prob_adult = 0.10;
  double dose1_monthly_prob_child = 0.04;
  double dose2_prob = 0.95;  // exactly one month after dose 1, else never
  int booster_min_gap = 5;   // CDC-consistent gap after the second dose
  double booster_monthly_prob = 0.13;
  int dose4_min_gap = 5;
  double dose4_monthly_prob = 0.05;
};

// Population mix the generator samples baselines from.
struct BaselineMix {
  std::array<double, kNumAgeBands> age_band{0.18, 0.16, 0.28, 0.20, 0.18};
  double male = 0.46;
  std::array<double, 3> race{0.72, 0.14, 0.14};
  std::array<double, 5> visits{0.35, 0.25, 0.20, 0.15, 0.05};
  std::array<double, 4> comorbidity{0.50, 0.28, 0.14, 0.08};
  double imm = 0.07;
};

struct GroundTruthModel {
  HazardCoeffs severe;
  HazardCoeffs general;
  std::array<Variant, kHorizonMonths> variant_calendar{};
  UptakeModel uptake;
  BaselineMix mix;

  // Coefficients chosen so rate orderings qualitatively track the reference
  // tables (risk rises with age, comorbidity, visits, imm; Delta worst;
  // vaccines protective; protection wanes with recency).
  static GroundTruthModel defaults();
  Variant variant_at(int month) const { return variant_calendar[month - 1]; }
};

struct HazardCovariates {
  AgeBand age = AgeBand::A18_29;
  Gender gender = Gender::F;
  Race race = Race::Caucasian;
  VisitsBand visits = VisitsBand::V0_4;
  ComorbidityBand comorbidity = ComorbidityBand::C0;
  bool imm = false;
  Variant variant = Variant::Alpha;
  int num_vaccines = 0;
  int months_since_last_vax = -1;
  int prior_general = 0;
};

// sigmoid(linear predictor); deterministic.
double hazard(const GroundTruthModel& gt, const HazardCovariates& cov, Outcome outcome);

// n synthetic trajectories; deterministic given seed and independent of
// thread count (per-patient rng streams keyed by patient id).
std::vector<Trajectory> generate_cohort(const GroundTruthModel& gt, int n, std::uint64_t seed,
                                        int threads = 1);

// Patients usable for booster-policy learning: adults with a second dose,
// at least one decision month left, and no severe infection up to T_i.
bool eligible_for_policy(const Trajectory& traj);
std::vector<int> eligible_indices(const std::vector<Trajectory>& trajs);

// --- exact expectations -------------------------------------------------------

// Analytic rates implied by the generator, by exact forward propagation of
// the per-cell Markov state (dose phase, recency, prior infection).
struct ExpectedRates {
  std::array<double, kHorizonMonths> severe_permille{};
  std::array<double, kHorizonMonths> general_permille{};
  std::array<double, kHorizonMonths> alive_mass{};  // expected person-months, per patient
  double overall_severe_permille = 0.0;
  double overall_general_permille = 0.0;
};

ExpectedRates expected_rates(const GroundTruthModel& gt);

// --- MDP tabulation -----------------------------------------------------------

// Distribution over the non-state covariates used to marginalize the hazards
// into an exact 24(+terminal)-state MDP.
struct MarginalProfile {
  std::array<double, kNumStates> start_state{};  // start weights, M0_4 states only
  double male = 0.46;
  std::array<double, 3> race{0.72, 0.14, 0.14};
  std::array<double, 5> visits{0.35, 0.25, 0.20, 0.15, 0.05};
  std::array<double, 4> comorbidity{0.50, 0.28, 0.14, 0.08};
  std::array<double, 3> variant{0.5, 0.25, 0.25};
  std::array<double, 5> num_vaccines{0.0, 0.0, 0.6, 0.35, 0.05};
  double prior_general = 0.006;

  // Empirical profile over the eligible patients' post-second-dose months.
  static MarginalProfile from_cohort(const std::vector<Trajectory>& trajs);
};

// Exact MDP over StateKey under the deterministic band dynamics
// (M0_4 -> M5_6 -> M7plus absorbing under NoBooster; Booster -> M0_4), with
// Booster infeasible in M0_4 states (the band-space image of the CDC mask).
// Terminal is the last state index.
TabularMdp tabulate_mdp(const GroundTruthModel& gt, const MarginalProfile& profile,
                        const RewardParams& params);

// --- rate tables ---------------------------------------------------------------

enum class GroupVar : std::uint8_t {
  Age = 0, NumVaccines, Visits, Comorbidity, Gender, Race, Imm, Variant, Month
};
const char* to_string(GroupVar v);

struct RateRow {
  std::string label;
  long long person_months = 0;
  long long severe = 0;
  long long general = 0;

  std::optional<double> severe_permille() const;
  std::optional<double> general_permille() const;
};

struct RateTable {
  std::string grouping;
  std::vector<RateRow> rows;
};

// Person-month infection rates overall, or conditional on one variable or a
// pair of variables. Empty categories keep their row with a missing rate.
RateTable summarize_rates(const std::vector<Trajectory>& trajs,
                          std::optional<GroupVar> by = std::nullopt,
                          std::optional<GroupVar> by2 = std::nullopt);

}  // namespace booster
