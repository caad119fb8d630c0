#include "booster/cohort.hpp"

#include <cmath>
#include <stdexcept>

#include "booster/neural.hpp"  // sigmoid
#include "booster/parallel.hpp"

namespace booster {

const char* to_string(Gender g) { return g == Gender::M ? "M" : "F"; }

const char* to_string(Race r) {
  switch (r) {
    case Race::Caucasian: return "Caucasian";
    case Race::AfricanAmerican: return "AfricanAmerican";
    case Race::Other: return "Other";
  }
  throw std::domain_error("to_string: bad Race");
}

const char* to_string(VisitsBand v) {
  switch (v) {
    case VisitsBand::V0_4: return "V0_4";
    case VisitsBand::V5_9: return "V5_9";
    case VisitsBand::V10_19: return "V10_19";
    case VisitsBand::V20_49: return "V20_49";
    case VisitsBand::V50plus: return "V50plus";
  }
  throw std::domain_error("to_string: bad VisitsBand");
}

const char* to_string(ComorbidityBand c) {
  switch (c) {
    case ComorbidityBand::C0: return "C0";
    case ComorbidityBand::C1_2: return "C1_2";
    case ComorbidityBand::C3_4: return "C3_4";
    case ComorbidityBand::C5plus: return "C5plus";
  }
  throw std::domain_error("to_string: bad ComorbidityBand");
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::Alpha: return "Alpha";
    case Variant::Delta: return "Delta";
    case Variant::Omicron: return "Omicron";
  }
  throw std::domain_error("to_string: bad Variant");
}

namespace {

template <typename E>
E enum_from_string(const std::string& s, int count, const char* what) {
  for (int i = 0; i < count; ++i) {
    E e = static_cast<E>(i);
    if (s == to_string(e)) return e;
  }
  throw std::domain_error(std::string(what) + ": unknown value '" + s + "'");
}

}  // namespace

Gender gender_from_string(const std::string& s) {
  return enum_from_string<Gender>(s, 2, "gender_from_string");
}
Race race_from_string(const std::string& s) {
  return enum_from_string<Race>(s, 3, "race_from_string");
}
VisitsBand visits_band_from_string(const std::string& s) {
  return enum_from_string<VisitsBand>(s, 5, "visits_band_from_string");
}
ComorbidityBand comorbidity_band_from_string(const std::string& s) {
  return enum_from_string<ComorbidityBand>(s, 4, "comorbidity_band_from_string");
}
Variant variant_from_string(const std::string& s) {
  return enum_from_string<Variant>(s, 3, "variant_from_string");
}

GroundTruthModel GroundTruthModel::defaults() {
  GroundTruthModel gt;

  gt.severe.intercept = -6.6;
  gt.severe.age = {-0.45, 0.0, 0.18, 0.30, 0.45};
  gt.severe.male = 0.10;
  gt.severe.imm = 0.55;
  gt.severe.comorbidity = {0.0, 0.60, 1.05, 1.40};
  gt.severe.visits = {0.0, -0.05, 0.30, 0.80, 1.40};
  gt.severe.race = {0.0, 0.75, 0.0};
  gt.severe.variant = {0.0, 0.70, -0.05};
  gt.severe.num_vaccines = {0.0, -0.20, -0.50, -0.70, -0.90};
  gt.severe.recency = {0.0, 0.50, 0.90};
  gt.severe.prior_general = 0.80;

  gt.general.intercept = -5.1;
  gt.general.age = {-0.10, 0.0, 0.05, 0.05, 0.0};
  gt.general.male = 0.05;
  gt.general.imm = 0.30;
  gt.general.comorbidity = {0.0, 0.20, 0.35, 0.50};
  gt.general.visits = {0.0, 0.0, 0.15, 0.30, 0.50};
  gt.general.race = {0.0, 0.40, 0.0};
  gt.general.variant = {0.0, 0.50, 0.90};
  gt.general.num_vaccines = {0.0, -0.15, -0.40, -0.50, -0.60};
  gt.general.recency = {0.0, 0.25, 0.45};
  gt.general.prior_general = -0.50;

  for (int m = 1; m <= kHorizonMonths; ++m)
    gt.variant_calendar[m - 1] = m <= 15 ? Variant::Alpha : (m <= 21 ? Variant::Delta : Variant::Omicron);
  return gt;
}

double hazard(const GroundTruthModel& gt, const HazardCovariates& cov, Outcome outcome) {
  const HazardCoeffs& c = outcome == Outcome::Severe ? gt.severe : gt.general;
  double z = c.intercept;
  z += c.age[static_cast<int>(cov.age)];
  if (cov.gender == Gender::M) z += c.male;
  if (cov.imm) z += c.imm;
  z += c.comorbidity[static_cast<int>(cov.comorbidity)];
  z += c.visits[static_cast<int>(cov.visits)];
  z += c.race[static_cast<int>(cov.race)];
  z += c.variant[static_cast<int>(cov.variant)];
  z += c.num_vaccines[cov.num_vaccines];
  if (cov.months_since_last_vax >= 0)
    z += c.recency[static_cast<int>(recency_band(cov.months_since_last_vax))];
  if (cov.prior_general) z += c.prior_general;
  return sigmoid(z);
}

namespace {

Baseline sample_baseline(const BaselineMix& mix, Rng& rng) {
  Baseline b;
  int band = static_cast<int>(rng.categorical({mix.age_band.begin(), mix.age_band.end()}));
  static constexpr int lo[] = {0, 18, 30, 50, 65};
  static constexpr int hi[] = {17, 29, 49, 64, 90};
  b.age_years = lo[band] + static_cast<int>(rng.uniform_int(hi[band] - lo[band] + 1));
  b.gender = rng.bernoulli(mix.male) ? Gender::M : Gender::F;
  b.race = static_cast<Race>(rng.categorical({mix.race.begin(), mix.race.end()}));
  b.visits = static_cast<VisitsBand>(rng.categorical({mix.visits.begin(), mix.visits.end()}));
  b.comorbidity =
      static_cast<ComorbidityBand>(rng.categorical({mix.comorbidity.begin(), mix.comorbidity.end()}));
  b.imm = rng.bernoulli(mix.imm);
  return b;
}

// Monthly dose probability given the pre-dose phase. Mirrored exactly by the
// analytic propagation in expected_rates.
double dose_prob(const UptakeModel& u, AgeBand age, int num_vaccines, int msl_candidate,
                 int month) {
  switch (num_vaccines) {
    case 0:
      if (month < u.dose1_start_month) return 0.0;
      return age == AgeBand::Child0_17 ? u.dose1_monthly_prob_child : u.dose1_monthly_prob_adult;
    case 1:
      return msl_candidate == 1 ? u.dose2_prob : 0.0;
    case 2:
      return msl_candidate >= u.booster_min_gap ? u.booster_monthly_prob : 0.0;
    case 3:
      return msl_candidate >= u.dose4_min_gap ? u.dose4_monthly_prob : 0.0;
    default:
      return 0.0;
  }
}

Trajectory simulate_patient(const GroundTruthModel& gt, int id, Rng rng) {
  Trajectory traj;
  traj.patient_id = id;
  traj.baseline = sample_baseline(gt.mix, rng);

  int nv = 0, msl = -1, gprev = 0;
  for (int m = 1; m <= kHorizonMonths; ++m) {
    int msl_cand = nv >= 1 ? msl + 1 : -1;
    double dp = dose_prob(gt.uptake, traj.baseline.age_band(), nv, msl_cand, m);
    bool dose = dp > 0.0 && rng.bernoulli(dp);
    if (dose) {
      ++nv;
      msl = 0;
      if (nv == 2) traj.second_dose_month = m;
      if (nv == 3) traj.observed_booster_month = m;
    } else {
      msl = msl_cand;
    }

    HazardCovariates cov;
    cov.age = traj.baseline.age_band();
    cov.gender = traj.baseline.gender;
    cov.race = traj.baseline.race;
    cov.visits = traj.baseline.visits;
    cov.comorbidity = traj.baseline.comorbidity;
    cov.imm = traj.baseline.imm;
    cov.variant = gt.variant_at(m);
    cov.num_vaccines = nv;
    cov.months_since_last_vax = msl;
    cov.prior_general = gprev;
    double hs = hazard(gt, cov, Outcome::Severe);
    double hg = hazard(gt, cov, Outcome::General);
    int severe = rng.bernoulli(hs) ? 1 : 0;
    int general = rng.bernoulli(hg) ? 1 : 0;

    MonthRecord rec;
    rec.month = m;
    rec.variant = cov.variant;
    rec.num_vaccines = nv;
    rec.months_since_last_vax = msl;
    rec.action = dose ? Action::Booster : Action::NoBooster;
    rec.general_infection = general;
    rec.severe_infection = severe;
    traj.records.push_back(rec);

    if (severe) break;
    gprev = general;
  }
  return traj;
}

}  // namespace

std::vector<Trajectory> generate_cohort(const GroundTruthModel& gt, int n, std::uint64_t seed,
                                        int threads) {
  if (n < 1) throw std::invalid_argument("generate_cohort: n must be >= 1");
  std::vector<Trajectory> out(n);
  Rng root(seed);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    out[i] = simulate_patient(gt, static_cast<int>(i), root.child(i));
  });
  return out;
}

bool eligible_for_policy(const Trajectory& traj) {
  if (!traj.has_second_dose()) return false;
  if (traj.second_dose_month > kHorizonMonths - 1) return false;
  if (traj.baseline.age_band() == AgeBand::Child0_17) return false;
  if (traj.ended_by_severe() && traj.records.back().month <= traj.second_dose_month) return false;
  return true;
}

std::vector<int> eligible_indices(const std::vector<Trajectory>& trajs) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    if (eligible_for_policy(trajs[i])) idx.push_back(static_cast<int>(i));
  return idx;
}

// --- exact expectations ---------------------------------------------------------

ExpectedRates expected_rates(const GroundTruthModel& gt) {
  ExpectedRates out;
  std::array<double, kHorizonMonths> pm{}, sev{}, gen{};

  // cell = fixed baseline category combination; inner state = (num_vaccines,
  // months-since-last-vax + 1, prior general infection)
  constexpr int kMslSlots = kHorizonMonths + 1;  // msl -1..26 stored at msl+1
  auto slot = [](int nv, int msl, int g) { return (nv * kMslSlots + msl + 1) * 2 + g; };

  for (int age = 0; age < kNumAgeBands; ++age)
    for (int gender = 0; gender < 2; ++gender)
      for (int race = 0; race < 3; ++race)
        for (int visits = 0; visits < 5; ++visits)
          for (int com = 0; com < 4; ++com)
            for (int imm = 0; imm < 2; ++imm) {
              double w = gt.mix.age_band[age] * (gender ? gt.mix.male : 1.0 - gt.mix.male) *
                         gt.mix.race[race] * gt.mix.visits[visits] * gt.mix.comorbidity[com] *
                         (imm ? gt.mix.imm : 1.0 - gt.mix.imm);
              if (w == 0.0) continue;

              HazardCovariates cov;
              cov.age = static_cast<AgeBand>(age);
              cov.gender = static_cast<Gender>(gender);
              cov.race = static_cast<Race>(race);
              cov.visits = static_cast<VisitsBand>(visits);
              cov.comorbidity = static_cast<ComorbidityBand>(com);
              cov.imm = imm == 1;

              std::vector<double> mass(5 * kMslSlots * 2, 0.0);
              mass[slot(0, -1, 0)] = 1.0;

              for (int m = 1; m <= kHorizonMonths; ++m) {
                cov.variant = gt.variant_at(m);
                // hazard lookup per (nv, recency slot, gprev); recency slot 0 = never
                double hs_tab[5][kMslSlots][2], hg_tab[5][kMslSlots][2];
                for (int nv = 0; nv < 5; ++nv)
                  for (int ms = -1; ms < kHorizonMonths; ++ms)
                    for (int g = 0; g < 2; ++g) {
                      cov.num_vaccines = nv;
                      cov.months_since_last_vax = ms;
                      cov.prior_general = g;
                      hs_tab[nv][ms + 1][g] = hazard(gt, cov, Outcome::Severe);
                      hg_tab[nv][ms + 1][g] = hazard(gt, cov, Outcome::General);
                    }

                std::vector<double> next(mass.size(), 0.0);
                for (int nv = 0; nv < 5; ++nv)
                  for (int ms = -1; ms < kHorizonMonths; ++ms)
                    for (int g = 0; g < 2; ++g) {
                      double cur = mass[slot(nv, ms, g)];
                      if (cur == 0.0) continue;
                      int msl_cand = nv >= 1 ? ms + 1 : -1;
                      double dp =
                          dose_prob(gt.uptake, cov.age, nv, msl_cand, m);
                      // branch 0: dose taken; branch 1: no dose
                      const double branch_p[2] = {dp, 1.0 - dp};
                      const int branch_nv[2] = {nv + 1, nv};
                      const int branch_ms[2] = {0, msl_cand};
                      for (int br = 0; br < 2; ++br) {
                        double wb = cur * branch_p[br];
                        if (wb == 0.0) continue;
                        int bnv = branch_nv[br], bms = branch_ms[br];
                        double hs = hs_tab[bnv][bms + 1][g];
                        double hg = hg_tab[bnv][bms + 1][g];
                        pm[m - 1] += w * wb;
                        sev[m - 1] += w * wb * hs;
                        gen[m - 1] += w * wb * hg;
                        double alive = wb * (1.0 - hs);
                        next[slot(bnv, bms, 1)] += alive * hg;
                        next[slot(bnv, bms, 0)] += alive * (1.0 - hg);
                      }
                    }
                mass.swap(next);
              }
            }

  double tot_pm = 0.0, tot_sev = 0.0, tot_gen = 0.0;
  for (int m = 0; m < kHorizonMonths; ++m) {
    out.alive_mass[m] = pm[m];
    out.severe_permille[m] = 1000.0 * sev[m] / pm[m];
    out.general_permille[m] = 1000.0 * gen[m] / pm[m];
    tot_pm += pm[m];
    tot_sev += sev[m];
    tot_gen += gen[m];
  }
  out.overall_severe_permille = 1000.0 * tot_sev / tot_pm;
  out.overall_general_permille = 1000.0 * tot_gen / tot_pm;
  return out;
}

// --- MDP tabulation ---------------------------------------------------------------

MarginalProfile MarginalProfile::from_cohort(const std::vector<Trajectory>& trajs) {
  MarginalProfile p;
  p.start_state.fill(0.0);
  p.male = 0.0;
  p.race.fill(0.0);
  p.visits.fill(0.0);
  p.comorbidity.fill(0.0);
  p.variant.fill(0.0);
  p.num_vaccines.fill(0.0);
  p.prior_general = 0.0;

  auto idx = eligible_indices(trajs);
  if (idx.empty()) throw std::domain_error("MarginalProfile: no eligible patients");

  double patients = 0.0, months = 0.0, gmonths = 0.0;
  for (int i : idx) {
    const Trajectory& t = trajs[i];
    patients += 1.0;
    StateKey start = StateKey::make(t.baseline.age_band(), t.baseline.imm, VaxRecencyBand::M0_4);
    p.start_state[state_index(start)] += 1.0;
    if (t.baseline.gender == Gender::M) p.male += 1.0;
    p.race[static_cast<int>(t.baseline.race)] += 1.0;
    p.visits[static_cast<int>(t.baseline.visits)] += 1.0;
    p.comorbidity[static_cast<int>(t.baseline.comorbidity)] += 1.0;
    for (std::size_t k = 0; k < t.records.size(); ++k) {
      const MonthRecord& r = t.records[k];
      if (r.month <= t.second_dose_month) continue;
      months += 1.0;
      p.variant[static_cast<int>(r.variant)] += 1.0;
      p.num_vaccines[r.num_vaccines] += 1.0;
      gmonths += t.records[k - 1].general_infection;  // k >= 1: month > T_i >= 1
    }
  }
  if (months == 0.0)
    throw std::domain_error("MarginalProfile: eligible patients have no post-second-dose months");

  for (auto& v : p.start_state) v /= patients;
  p.male /= patients;
  for (auto& v : p.race) v /= patients;
  for (auto& v : p.visits) v /= patients;
  for (auto& v : p.comorbidity) v /= patients;
  for (auto& v : p.variant) v /= months;
  for (auto& v : p.num_vaccines) v /= months;
  p.prior_general = gmonths / months;
  return p;
}

TabularMdp tabulate_mdp(const GroundTruthModel& gt, const MarginalProfile& profile,
                        const RewardParams& params) {
  TabularMdp mdp;
  mdp.resize(kNumStates + 1);
  mdp.terminal = kNumStates;

  auto next_band = [](VaxRecencyBand b) {
    switch (b) {
      case VaxRecencyBand::M0_4: return VaxRecencyBand::M5_6;
      case VaxRecencyBand::M5_6: return VaxRecencyBand::M7plus;
      default: return VaxRecencyBand::M7plus;
    }
  };

  for (int s = 0; s < kNumStates; ++s) {
    StateKey key = state_from_index(s);
    for (int a = 0; a < kNumActions; ++a) {
      Action act = static_cast<Action>(a);
      bool feasible = act == Action::NoBooster || key.recency != VaxRecencyBand::M0_4;
      mdp.feasible[s][a] = feasible;
      if (!feasible) continue;

      VaxRecencyBand band_next =
          act == Action::Booster ? VaxRecencyBand::M0_4 : next_band(key.recency);

      // marginalize the severe hazard over the profile's covariate mix
      double p_sev = 0.0;
      HazardCovariates cov;
      cov.age = key.age;
      cov.imm = key.imm;
      // recency enters through the band; any month count inside the band works
      cov.months_since_last_vax =
          band_next == VaxRecencyBand::M0_4 ? 0 : (band_next == VaxRecencyBand::M5_6 ? 5 : 7);
      for (int gender = 0; gender < 2; ++gender)
        for (int race = 0; race < 3; ++race)
          for (int visits = 0; visits < 5; ++visits)
            for (int com = 0; com < 4; ++com)
              for (int variant = 0; variant < 3; ++variant)
                for (int nv = 0; nv < 5; ++nv)
                  for (int g = 0; g < 2; ++g) {
                    double w = (gender ? profile.male : 1.0 - profile.male) *
                               profile.race[race] * profile.visits[visits] *
                               profile.comorbidity[com] * profile.variant[variant] *
                               profile.num_vaccines[nv] *
                               (g ? profile.prior_general : 1.0 - profile.prior_general);
                    if (w == 0.0) continue;
                    cov.gender = static_cast<Gender>(gender);
                    cov.race = static_cast<Race>(race);
                    cov.visits = static_cast<VisitsBand>(visits);
                    cov.comorbidity = static_cast<ComorbidityBand>(com);
                    cov.variant = static_cast<Variant>(variant);
                    cov.num_vaccines = act == Action::Booster ? std::min(nv + 1, 4) : nv;
                    cov.prior_general = g;
                    p_sev += w * hazard(gt, cov, Outcome::Severe);
                  }

      StateKey next_key = StateKey::make(key.age, key.imm, band_next);
      mdp.P[s][a][mdp.terminal] = p_sev;
      mdp.P[s][a][state_index(next_key)] = 1.0 - p_sev;
      double dose = act == Action::Booster ? 1.0 : 0.0;
      mdp.R[s][a] = params.form == RewardForm::Additive
                        ? -p_sev - params.alpha * dose
                        : -p_sev * (1.0 + params.alpha * dose);
    }
  }
  mdp.feasible[mdp.terminal] = {true, false};
  mdp.P[mdp.terminal][0][mdp.terminal] = 1.0;
  mdp.R[mdp.terminal][0] = 0.0;
  for (int s = 0; s < kNumStates; ++s) mdp.start_dist[s] = profile.start_state[s];
  mdp.start_dist[mdp.terminal] = 0.0;
  return mdp;
}

// --- rate tables ---------------------------------------------------------------------

const char* to_string(GroupVar v) {
  switch (v) {
    case GroupVar::Age: return "age";
    case GroupVar::NumVaccines: return "num_vaccines";
    case GroupVar::Visits: return "visits";
    case GroupVar::Comorbidity: return "comorbidity";
    case GroupVar::Gender: return "gender";
    case GroupVar::Race: return "race";
    case GroupVar::Imm: return "imm";
    case GroupVar::Variant: return "variant";
    case GroupVar::Month: return "month";
  }
  throw std::domain_error("to_string: bad GroupVar");
}

namespace {

int category_count(GroupVar v) {
  switch (v) {
    case GroupVar::Age: return kNumAgeBands;
    case GroupVar::NumVaccines: return 5;
    case GroupVar::Visits: return 5;
    case GroupVar::Comorbidity: return 4;
    case GroupVar::Gender: return 2;
    case GroupVar::Race: return 3;
    case GroupVar::Imm: return 2;
    case GroupVar::Variant: return 3;
    case GroupVar::Month: return kHorizonMonths;
  }
  throw std::domain_error("category_count: bad GroupVar");
}

int category_of(GroupVar v, const Trajectory& t, const MonthRecord& r) {
  switch (v) {
    case GroupVar::Age: return static_cast<int>(t.baseline.age_band());
    case GroupVar::NumVaccines: return r.num_vaccines;
    case GroupVar::Visits: return static_cast<int>(t.baseline.visits);
    case GroupVar::Comorbidity: return static_cast<int>(t.baseline.comorbidity);
    case GroupVar::Gender: return static_cast<int>(t.baseline.gender);
    case GroupVar::Race: return static_cast<int>(t.baseline.race);
    case GroupVar::Imm: return t.baseline.imm ? 1 : 0;
    case GroupVar::Variant: return static_cast<int>(r.variant);
    case GroupVar::Month: return r.month - 1;
  }
  throw std::domain_error("category_of: bad GroupVar");
}

std::string category_label(GroupVar v, int idx) {
  switch (v) {
    case GroupVar::Age: return to_string(static_cast<AgeBand>(idx));
    case GroupVar::NumVaccines: return std::to_string(idx);
    case GroupVar::Visits: return to_string(static_cast<VisitsBand>(idx));
    case GroupVar::Comorbidity: return to_string(static_cast<ComorbidityBand>(idx));
    case GroupVar::Gender: return to_string(static_cast<Gender>(idx));
    case GroupVar::Race: return to_string(static_cast<Race>(idx));
    case GroupVar::Imm: return idx ? "imm1" : "imm0";
    case GroupVar::Variant: return to_string(static_cast<Variant>(idx));
    case GroupVar::Month: return std::to_string(idx + 1);
  }
  throw std::domain_error("category_label: bad GroupVar");
}

}  // namespace

std::optional<double> RateRow::severe_permille() const {
  if (person_months == 0) return std::nullopt;
  return 1000.0 * static_cast<double>(severe) / static_cast<double>(person_months);
}

std::optional<double> RateRow::general_permille() const {
  if (person_months == 0) return std::nullopt;
  return 1000.0 * static_cast<double>(general) / static_cast<double>(person_months);
}

RateTable summarize_rates(const std::vector<Trajectory>& trajs, std::optional<GroupVar> by,
                          std::optional<GroupVar> by2) {
  if (trajs.empty()) throw std::domain_error("summarize_rates: empty cohort");
  if (by2 && !by) throw std::invalid_argument("summarize_rates: pair grouping needs both variables");

  RateTable table;
  int n1 = by ? category_count(*by) : 1;
  int n2 = by2 ? category_count(*by2) : 1;
  table.grouping = !by ? "overall"
                       : (by2 ? std::string(to_string(*by)) + " x " + to_string(*by2)
                              : to_string(*by));
  table.rows.resize(static_cast<std::size_t>(n1) * n2);
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j) {
      std::string label = !by ? "overall" : category_label(*by, i);
      if (by2) label += " x " + category_label(*by2, j);
      table.rows[static_cast<std::size_t>(i) * n2 + j].label = label;
    }

  for (const Trajectory& t : trajs)
    for (const MonthRecord& r : t.records) {
      int i = by ? category_of(*by, t, r) : 0;
      int j = by2 ? category_of(*by2, t, r) : 0;
      RateRow& row = table.rows[static_cast<std::size_t>(i) * n2 + j];
      row.person_months += 1;
      row.severe += r.severe_infection;
      row.general += r.general_infection;
    }
  return table;
}

}  // namespace booster
