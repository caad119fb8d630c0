#include "booster/core_types.hpp"

#include <stdexcept>

namespace booster {

AgeBand age_band_from_years(int age_years) {
  if (age_years < 0) throw std::domain_error("age_band_from_years: negative age");
  if (age_years < 18) return AgeBand::Child0_17;
  if (age_years < 30) return AgeBand::A18_29;
  if (age_years < 50) return AgeBand::A30_49;
  if (age_years < 65) return AgeBand::A50_64;
  return AgeBand::A65plus;
}

VaxRecencyBand recency_band(int months_since_last_vax) {
  if (months_since_last_vax < 0)
    throw std::domain_error("recency_band: months since last vaccination must be >= 0");
  if (months_since_last_vax <= 4) return VaxRecencyBand::M0_4;
  if (months_since_last_vax <= 6) return VaxRecencyBand::M5_6;
  return VaxRecencyBand::M7plus;
}

const char* to_string(AgeBand b) {
  switch (b) {
    case AgeBand::Child0_17: return "A0_17";
    case AgeBand::A18_29: return "A18_29";
    case AgeBand::A30_49: return "A30_49";
    case AgeBand::A50_64: return "A50_64";
    case AgeBand::A65plus: return "A65plus";
  }
  throw std::domain_error("to_string: bad AgeBand");
}

const char* to_string(VaxRecencyBand b) {
  switch (b) {
    case VaxRecencyBand::M0_4: return "M0_4";
    case VaxRecencyBand::M5_6: return "M5_6";
    case VaxRecencyBand::M7plus: return "M7plus";
  }
  throw std::domain_error("to_string: bad VaxRecencyBand");
}

const char* to_string(Action a) { return a == Action::Booster ? "B" : "N"; }

AgeBand age_band_from_string(const std::string& s) {
  for (int i = 0; i < kNumAgeBands; ++i) {
    AgeBand b = static_cast<AgeBand>(i);
    if (s == to_string(b)) return b;
  }
  throw std::domain_error("age_band_from_string: unknown band '" + s + "'");
}

VaxRecencyBand recency_band_from_string(const std::string& s) {
  for (int i = 0; i < kNumRecencyBands; ++i) {
    VaxRecencyBand b = static_cast<VaxRecencyBand>(i);
    if (s == to_string(b)) return b;
  }
  throw std::domain_error("recency_band_from_string: unknown band '" + s + "'");
}

Action action_from_string(const std::string& s) {
  if (s == "B") return Action::Booster;
  if (s == "N") return Action::NoBooster;
  throw std::domain_error("action_from_string: unknown action '" + s + "'");
}

StateKey StateKey::make(AgeBand age, bool imm, VaxRecencyBand recency) {
  if (age == AgeBand::Child0_17)
    throw std::domain_error("StateKey: age band 0-17 is outside the policy state space");
  StateKey k;
  k.age = age;
  k.imm = imm;
  k.recency = recency;
  return k;
}

int state_index(const StateKey& key) {
  if (key.terminal) throw std::domain_error("state_index: Terminal has no dense index");
  if (key.age == AgeBand::Child0_17)
    throw std::domain_error("state_index: age band 0-17 is outside the policy state space");
  int age_idx = static_cast<int>(key.age) - 1;  // adults start at A18_29
  int imm_idx = key.imm ? 1 : 0;
  int rec_idx = static_cast<int>(key.recency);
  return 6 * age_idx + 3 * imm_idx + rec_idx;
}

StateKey state_from_index(int index) {
  if (index < 0 || index >= kNumStates)
    throw std::domain_error("state_from_index: index out of range 0..23");
  StateKey k;
  k.age = static_cast<AgeBand>(1 + index / 6);
  k.imm = (index / 3) % 2 == 1;
  k.recency = static_cast<VaxRecencyBand>(index % 3);
  return k;
}

std::string to_string(const StateKey& key) {
  if (key.terminal) return "TERMINAL";
  std::string s = to_string(key.age);
  s += key.imm ? "/imm1/" : "/imm0/";
  s += to_string(key.recency);
  return s;
}

StateKey state_from_string(const std::string& s) {
  if (s == "TERMINAL") return StateKey::make_terminal();
  auto p1 = s.find('/');
  auto p2 = s.rfind('/');
  if (p1 == std::string::npos || p2 == p1)
    throw std::domain_error("state_from_string: malformed key '" + s + "'");
  AgeBand age = age_band_from_string(s.substr(0, p1));
  std::string imm = s.substr(p1 + 1, p2 - p1 - 1);
  if (imm != "imm0" && imm != "imm1")
    throw std::domain_error("state_from_string: malformed imm field in '" + s + "'");
  VaxRecencyBand rec = recency_band_from_string(s.substr(p2 + 1));
  return StateKey::make(age, imm == "imm1", rec);
}

double reward(int i_next, Action a, const RewardParams& params) {
  double i = i_next != 0 ? 1.0 : 0.0;
  double dose = a == Action::Booster ? 1.0 : 0.0;
  if (params.form == RewardForm::Additive) return -i - params.alpha * dose;
  return -i * (1.0 + params.alpha * dose);
}

ActionMask allowed_actions(int months_since_second_vax, bool already_boosted) {
  ActionMask mask;
  mask.allow_booster = months_since_second_vax > 4 && !already_boosted;
  return mask;
}

}  // namespace booster
