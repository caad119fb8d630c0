#pragma once

// MDP vocabulary shared by the whole pipeline: discrete states, the two
// actions, the reward, and the CDC eligibility mask.

#include <cstdint>
#include <string>

namespace booster {

enum class AgeBand : std::uint8_t { Child0_17 = 0, A18_29, A30_49, A50_64, A65plus };
enum class VaxRecencyBand : std::uint8_t { M0_4 = 0, M5_6, M7plus };
enum class Action : std::uint8_t { NoBooster = 0, Booster = 1 };

inline constexpr int kNumAgeBands = 5;       // incl. children (cohort only)
inline constexpr int kNumAdultAgeBands = 4;  // Q-learning states are adults-only
inline constexpr int kNumRecencyBands = 3;
inline constexpr int kNumActions = 2;
inline constexpr int kNumStates = kNumAdultAgeBands * 2 * kNumRecencyBands;  // 24
inline constexpr int kHorizonMonths = 27;    // study span, March 2020 .. June 2022

AgeBand age_band_from_years(int age_years);
VaxRecencyBand recency_band(int months_since_last_vax);

const char* to_string(AgeBand b);
const char* to_string(VaxRecencyBand b);
const char* to_string(Action a);
AgeBand age_band_from_string(const std::string& s);
VaxRecencyBand recency_band_from_string(const std::string& s);
Action action_from_string(const std::string& s);

// Discrete Q-learning state: adult age band x immunosuppressant flag x
// vaccine-recency band, or the absorbing Terminal (severe infection).
struct StateKey {
  AgeBand age = AgeBand::A18_29;
  bool imm = false;
  VaxRecencyBand recency = VaxRecencyBand::M0_4;
  bool terminal = false;

  static StateKey make(AgeBand age, bool imm, VaxRecencyBand recency);
  static StateKey make_terminal() {
    StateKey k;
    k.terminal = true;
    return k;
  }

  friend bool operator==(const StateKey&, const StateKey&) = default;
};

// Dense index in 0..23, lexicographic over (age, imm, recency).
int state_index(const StateKey& key);
StateKey state_from_index(int index);

// Canonical short form, e.g. "A30_49/imm1/M5_6" or "TERMINAL"; round-trips.
std::string to_string(const StateKey& key);
StateKey state_from_string(const std::string& s);

enum class RewardForm : std::uint8_t { Multiplicative = 0, Additive };

struct RewardParams {
  double alpha = 0.04;   // relative cost of a booster
  double gamma = 0.99;   // discount factor
  RewardForm form = RewardForm::Multiplicative;
};

// Reward for the sampled next-month severe-infection indicator.
// Multiplicative: -i * (1 + alpha*a).  Additive: -i - alpha*a.
double reward(int i_next, Action a, const RewardParams& params);

// Feasible actions under the CDC guideline (no booster within 4 months of
// the previous dose) and the first-booster-only study design.
struct ActionMask {
  bool allow_booster = false;

  bool contains(Action a) const { return a == Action::NoBooster || allow_booster; }
  int size() const { return allow_booster ? 2 : 1; }
};

ActionMask allowed_actions(int months_since_second_vax, bool already_boosted);

}  // namespace booster
