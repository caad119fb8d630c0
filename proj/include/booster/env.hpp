#pragma once

// RNN-backed microsimulation environment: trains the stacked-LSTM transition
// model on cohort trajectories, exposes step/reset sessions for the
// Q-learning agent, and calibrates simulated rates against a reference
// cohort. Also provides the exact-MDP environment used for oracle-grounded
// training runs.

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "booster/cohort.hpp"
#include "booster/core_types.hpp"
#include "booster/neural.hpp"
#include "booster/oracle.hpp"
#include "booster/rng.hpp"

namespace booster {

struct PolicyViolationError : std::domain_error {
  using std::domain_error::domain_error;
};

// Fixed one-hot feature layout, versioned with the serialized model.
struct FeatureEncoder {
  static constexpr int kVersion = 1;

  static int dim();
  static std::vector<std::string> field_names();
  static Vec encode(const Baseline& base, int month, Variant variant, int num_vaccines,
                    int months_since_last_vax, int general_this_month, bool dose_this_month);
};

struct EnvTrainConfig {
  std::vector<int> hidden_dims{128, 128};
  double dropout = 0.2;
  double lr = 1e-4;
  int epochs = 2000;
  int batch = 64;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct EnvModel {
  SeqModel net;
  EnvTrainConfig config;            // configuration the model was trained with
  int encoder_version = FeatureEncoder::kVersion;
  double final_loss = 0.0;          // inference-mode mean BCE on the training data
  std::vector<double> epoch_loss;   // mean training loss per epoch
  // calendar observed in the training data; drives w_t during simulation
  std::array<Variant, kHorizonMonths> variant_calendar{};
};

// Trains predictors x_t = [state, w_t, a_t] against targets
// y_{t+1} = (severe_{t+1}, general_{t+1}). Warns on stderr when the data has
// no positive labels but still returns the model.
EnvModel train_env(const std::vector<Trajectory>& trajs, const EnvTrainConfig& cfg);

struct StepOutcome {
  StateKey next_state;     // Terminal iff a severe infection was sampled
  double reward = 0.0;
  int i_next = 0;          // severe indicator for the next month
  int general_next = 0;
  bool episode_over = false;  // severe infection or study horizon reached
};

// One patient's episode against the trained model. Single-owner, not safe
// for concurrent mutation; many sessions may share one immutable EnvModel.
class EnvSession {
 public:
  // Positions the session at T_i with the hidden state warmed up by
  // replaying months 1..T_i of the trajectory. Throws std::domain_error if
  // the trajectory has no second dose.
  EnvSession(const EnvModel& model, const Trajectory& traj);

  StateKey state() const;                 // pre-action state of the pending decision
  ActionMask feasible() const;
  bool done() const;
  int next_decision_month() const { return month_; }
  int months_since_second_dose() const { return month_ - second_dose_month_; }
  int warmup_steps() const { return warmup_steps_; }
  int num_vaccines() const { return num_vaccines_; }

  // Advances one month. Enforces the CDC mask defensively
  // (PolicyViolationError on a masked action).
  StepOutcome step(Action a, const RewardParams& params, Rng& rng);

 private:
  const EnvModel* model_;
  Baseline baseline_;
  int second_dose_month_ = 0;
  int month_ = 0;  // next decision month
  int last_dose_month_ = 0;
  int num_vaccines_ = 2;
  bool boosted_ = false;
  bool terminated_ = false;
  bool severe_ = false;
  int general_cur_ = -1;           // general status of the pending month, -1 = unsampled
  double pending_general_prob_ = 0.0;  // model's p_general for the first decision month
  int warmup_steps_ = 0;
  std::vector<Vec> h_, c_;

  std::array<double, 2> advance(const Vec& x);
};

// --- calibration -----------------------------------------------------------------

// Re-simulates reference patients under their observed dose schedules; the
// first month is the initial condition taken from the reference record.
std::vector<Trajectory> resimulate(const EnvModel& model,
                                   const std::vector<Trajectory>& reference, int n_sim,
                                   std::uint64_t seed, int threads = 1);

struct CalibrationReport {
  RateRow sim_overall, ref_overall;
  RateTable sim_monthly, ref_monthly;
  // (simulated, reference) pairs for the standard conditional groupings
  std::vector<std::pair<RateTable, RateTable>> conditionals;
  double overall_gap_severe_permille = 0.0;
  double overall_gap_general_permille = 0.0;
  double max_month_gap_severe_permille = 0.0;
  double max_month_gap_general_permille = 0.0;
};

CalibrationReport make_calibration_report(const std::vector<Trajectory>& sim,
                                          const std::vector<Trajectory>& ref);

CalibrationReport validate_env(const EnvModel& model, const std::vector<Trajectory>& reference,
                               int n_sim, std::uint64_t seed, int threads = 1);

// --- environments the Q-learning loop drives ---------------------------------------

class Environment {
 public:
  virtual ~Environment() = default;
  virtual int num_patients() const = 0;
  virtual StateKey reset(int patient) = 0;
  virtual StateKey state() const = 0;
  virtual ActionMask feasible() const = 0;
  virtual bool done() const = 0;
  virtual StepOutcome step(Action a, Rng& rng) = 0;
  virtual int months_since_second_dose() const = 0;
};

// Microsimulation environment over the eligible patients of a cohort.
class RnnEnvironment : public Environment {
 public:
  RnnEnvironment(const EnvModel& model, const std::vector<Trajectory>& trajs,
                 RewardParams params);

  int num_patients() const override { return static_cast<int>(eligible_.size()); }
  StateKey reset(int patient) override;
  StateKey state() const override;
  ActionMask feasible() const override;
  bool done() const override;
  StepOutcome step(Action a, Rng& rng) override;
  int months_since_second_dose() const override;
  const Trajectory& current_trajectory() const;

 private:
  const EnvModel* model_;
  const std::vector<Trajectory>* trajs_;
  std::vector<int> eligible_;
  RewardParams params_;
  std::unique_ptr<EnvSession> session_;
  int current_ = -1;
};

// Samples transitions from the rows of the exact tabulated MDP. Episode start
// states and lengths mirror the cohort's post-second-dose spans.
class MdpEnvironment : public Environment {
 public:
  MdpEnvironment(const TabularMdp& mdp, const std::vector<Trajectory>& trajs,
                 RewardParams params);
  // explicit episode list: (start state index, max steps)
  MdpEnvironment(const TabularMdp& mdp, std::vector<std::pair<int, int>> episodes,
                 RewardParams params);

  int num_patients() const override { return static_cast<int>(episodes_.size()); }
  StateKey reset(int patient) override;
  StateKey state() const override;
  ActionMask feasible() const override;
  bool done() const override;
  StepOutcome step(Action a, Rng& rng) override;
  int months_since_second_dose() const override { return steps_taken_ + 1; }

 private:
  const TabularMdp* mdp_;
  std::vector<std::pair<int, int>> episodes_;
  RewardParams params_;
  int state_ = 0;
  int steps_taken_ = 0;
  int max_steps_ = 0;
  bool terminated_ = true;
};

}  // namespace booster
