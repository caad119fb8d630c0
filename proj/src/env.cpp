#include "booster/env.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "booster/parallel.hpp"

namespace booster {

// --- feature encoding -----------------------------------------------------------

int FeatureEncoder::dim() { return 34; }

std::vector<std::string> FeatureEncoder::field_names() {
  std::vector<std::string> names;
  for (int i = 0; i < kNumAgeBands; ++i)
    names.push_back(std::string("age.") + to_string(static_cast<AgeBand>(i)));
  names.push_back("male");
  for (int i = 0; i < 3; ++i) names.push_back(std::string("race.") + to_string(static_cast<Race>(i)));
  for (int i = 0; i < 5; ++i)
    names.push_back(std::string("visits.") + to_string(static_cast<VisitsBand>(i)));
  for (int i = 0; i < 4; ++i)
    names.push_back(std::string("comorbidity.") + to_string(static_cast<ComorbidityBand>(i)));
  names.push_back("imm");
  for (int i = 0; i < 3; ++i)
    names.push_back(std::string("variant.") + to_string(static_cast<Variant>(i)));
  for (int i = 0; i < 5; ++i) names.push_back("num_vaccines." + std::to_string(i));
  names.push_back("vaccinated");
  for (int i = 0; i < kNumRecencyBands; ++i)
    names.push_back(std::string("recency.") + to_string(static_cast<VaxRecencyBand>(i)));
  names.push_back("general_infection");
  names.push_back("dose_this_month");
  names.push_back("month_frac");
  return names;
}

Vec FeatureEncoder::encode(const Baseline& base, int month, Variant variant, int num_vaccines,
                           int months_since_last_vax, int general_this_month,
                           bool dose_this_month) {
  Vec x = Vec::Zero(dim());
  int k = 0;
  x(k + static_cast<int>(base.age_band())) = 1.0;
  k += kNumAgeBands;
  x(k++) = base.gender == Gender::M ? 1.0 : 0.0;
  x(k + static_cast<int>(base.race)) = 1.0;
  k += 3;
  x(k + static_cast<int>(base.visits)) = 1.0;
  k += 5;
  x(k + static_cast<int>(base.comorbidity)) = 1.0;
  k += 4;
  x(k++) = base.imm ? 1.0 : 0.0;
  x(k + static_cast<int>(variant)) = 1.0;
  k += 3;
  x(k + num_vaccines) = 1.0;
  k += 5;
  if (months_since_last_vax >= 0) {
    x(k) = 1.0;
    x(k + 1 + static_cast<int>(recency_band(months_since_last_vax))) = 1.0;
  }
  k += 1 + kNumRecencyBands;
  x(k++) = general_this_month ? 1.0 : 0.0;
  x(k++) = dose_this_month ? 1.0 : 0.0;
  x(k++) = static_cast<double>(month) / kHorizonMonths;
  return x;
}

// --- training -------------------------------------------------------------------

namespace {

Vec encode_record(const Baseline& base, const MonthRecord& r) {
  return FeatureEncoder::encode(base, r.month, r.variant, r.num_vaccines,
                                r.months_since_last_vax, r.general_infection,
                                r.action == Action::Booster);
}

PaddedBatch encode_batch(const std::vector<Trajectory>& trajs, const std::vector<int>& ids,
                         std::size_t lo, std::size_t hi) {
  int steps = 0;
  for (std::size_t i = lo; i < hi; ++i)
    steps = std::max(steps, static_cast<int>(trajs[ids[i]].records.size()) - 1);
  const int b = static_cast<int>(hi - lo);
  PaddedBatch batch;
  batch.x.assign(steps, Mat::Zero(FeatureEncoder::dim(), b));
  batch.y.assign(steps, Mat::Zero(2, b));
  batch.valid.assign(steps, std::vector<char>(b, 0));
  for (std::size_t i = lo; i < hi; ++i) {
    const Trajectory& traj = trajs[ids[i]];
    const int col = static_cast<int>(i - lo);
    for (std::size_t t = 0; t + 1 < traj.records.size(); ++t) {
      batch.x[t].col(col) = encode_record(traj.baseline, traj.records[t]);
      batch.y[t](0, col) = traj.records[t + 1].severe_infection;
      batch.y[t](1, col) = traj.records[t + 1].general_infection;
      batch.valid[t][col] = 1;
    }
  }
  return batch;
}

std::array<Variant, kHorizonMonths> calendar_from_data(const std::vector<Trajectory>& trajs) {
  auto cal = GroundTruthModel::defaults().variant_calendar;
  std::array<bool, kHorizonMonths> seen{};
  for (const auto& t : trajs) {
    for (const auto& r : t.records)
      if (!seen[r.month - 1]) {
        cal[r.month - 1] = r.variant;
        seen[r.month - 1] = true;
      }
    if (std::all_of(seen.begin(), seen.end(), [](bool s) { return s; })) break;
  }
  return cal;
}

}  // namespace

EnvModel train_env(const std::vector<Trajectory>& trajs, const EnvTrainConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch < 1 || cfg.lr <= 0.0 || cfg.hidden_dims.empty() ||
      cfg.dropout < 0.0 || cfg.dropout >= 1.0)
    throw std::invalid_argument("train_env: bad training configuration");

  std::vector<int> ids;
  long long positives = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (trajs[i].records.size() < 2) continue;
    ids.push_back(static_cast<int>(i));
    for (const auto& r : trajs[i].records)
      positives += r.severe_infection + r.general_infection;
  }
  if (ids.empty())
    throw std::domain_error("train_env: need at least one trajectory with two months");
  if (positives == 0)
    std::fprintf(stderr, "train_env: warning: no positive infection labels in the data\n");

  EnvModel model;
  model.config = cfg;
  model.variant_calendar = calendar_from_data(trajs);
  Rng rng(cfg.seed);
  model.net = SeqModel::make(FeatureEncoder::dim(), cfg.hidden_dims, 2, rng);
  auto refs = param_tensors(model.net);
  AdamState adam = AdamState::zeros_like(refs);

  const int threads = std::max(1, cfg.threads);
  std::vector<int> order = ids;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss_sum = 0.0;
    long long epoch_valid = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch) {
      const std::size_t end = std::min(order.size(), pos + cfg.batch);
      const std::size_t bsz = end - pos;
      const int chunks = static_cast<int>(std::min<std::size_t>(threads, bsz));
      std::vector<LossSums> partial(chunks);
      std::vector<std::uint64_t> keys(chunks);
      for (int ch = 0; ch < chunks; ++ch)
        keys[ch] = (static_cast<std::uint64_t>(epoch) << 32) ^ (pos * 16 + ch);
      parallel_for(chunks, threads, [&](std::size_t ch) {
        std::size_t chunk_size = (bsz + chunks - 1) / chunks;
        std::size_t lo = pos + ch * chunk_size;
        std::size_t hi = std::min(end, lo + chunk_size);
        if (lo >= hi) {
          partial[ch].valid = 0;
          return;
        }
        PaddedBatch pb = encode_batch(trajs, order, lo, hi);
        Rng drop_rng = Rng(cfg.seed ^ 0x5eedULL).child(keys[ch]);
        partial[ch] = bptt_loss_sums(pb, model.net, cfg.dropout, drop_rng);
      });
      GradBundle grads = GradBundle::zeros_like(refs);
      double loss_sum = 0.0;
      long long valid = 0;
      for (int ch = 0; ch < chunks; ++ch) {
        if (partial[ch].valid == 0) continue;
        grads.add_scaled(partial[ch].grads, 1.0);
        loss_sum += partial[ch].loss_sum;
        valid += partial[ch].valid;
      }
      grads.scale(1.0 / static_cast<double>(valid));
      adam_update(refs, grads, adam, cfg.lr);
      epoch_loss_sum += loss_sum;
      epoch_valid += valid;
    }
    model.epoch_loss.push_back(epoch_loss_sum / static_cast<double>(epoch_valid));
  }

  // inference-mode loss on the full training data
  double loss_sum = 0.0;
  long long valid = 0;
  for (std::size_t pos = 0; pos < ids.size(); pos += 512) {
    std::size_t end = std::min(ids.size(), pos + 512);
    PaddedBatch pb = encode_batch(trajs, ids, pos, end);
    int v = pb.valid_count();
    loss_sum += sequence_loss(pb, model.net) * v;
    valid += v;
  }
  model.final_loss = loss_sum / static_cast<double>(valid);
  return model;
}

// --- session -------------------------------------------------------------------

EnvSession::EnvSession(const EnvModel& model, const Trajectory& traj)
    : model_(&model), baseline_(traj.baseline) {
  if (!traj.has_second_dose())
    throw std::domain_error("EnvSession: trajectory has no second vaccination");
  if (baseline_.age_band() == AgeBand::Child0_17)
    throw std::domain_error("EnvSession: policy sessions are adults-only");
  second_dose_month_ = traj.second_dose_month;
  month_ = second_dose_month_ + 1;
  last_dose_month_ = second_dose_month_;
  num_vaccines_ = 2;

  h_.clear();
  c_.clear();
  for (const auto& layer : model.net.layers) {
    h_.push_back(Vec::Zero(layer.hidden_dim));
    c_.push_back(Vec::Zero(layer.hidden_dim));
  }
  std::array<double, 2> probs{0.0, 0.0};
  for (int m = 1; m <= second_dose_month_; ++m) {
    probs = advance(encode_record(baseline_, traj.records[m - 1]));
    ++warmup_steps_;
  }
  pending_general_prob_ = probs[1];
}

std::array<double, 2> EnvSession::advance(const Vec& x) {
  Vec in = x;
  for (std::size_t l = 0; l < model_->net.layers.size(); ++l) {
    Vec hn, cn;
    lstm_step(in, h_[l], c_[l], model_->net.layers[l], hn, cn);
    h_[l] = std::move(hn);
    c_[l] = std::move(cn);
    in = h_[l];
  }
  Mat probs = mlp_forward(model_->net.head, in, nullptr);
  return {probs(0, 0), probs(1, 0)};
}

StateKey EnvSession::state() const {
  if (severe_) return StateKey::make_terminal();
  return StateKey::make(baseline_.age_band(), baseline_.imm,
                        recency_band(month_ - last_dose_month_));
}

ActionMask EnvSession::feasible() const {
  return allowed_actions(month_ - second_dose_month_, boosted_);
}

bool EnvSession::done() const { return terminated_ || month_ > kHorizonMonths; }

StepOutcome EnvSession::step(Action a, const RewardParams& params, Rng& rng) {
  if (done()) throw std::logic_error("EnvSession::step: episode is over");
  if (!feasible().contains(a))
    throw PolicyViolationError("EnvSession::step: booster masked at month " +
                               std::to_string(month_));
  const int t = month_;
  const int g_t =
      general_cur_ >= 0 ? general_cur_ : (rng.bernoulli(pending_general_prob_) ? 1 : 0);
  if (a == Action::Booster) {
    num_vaccines_ = std::min(num_vaccines_ + 1, 4);
    last_dose_month_ = t;
    boosted_ = true;
  }
  Vec x = FeatureEncoder::encode(baseline_, t, model_->variant_calendar[t - 1], num_vaccines_,
                                 t - last_dose_month_, g_t, a == Action::Booster);
  auto probs = advance(x);
  const int i_next = rng.bernoulli(probs[0]) ? 1 : 0;
  const int g_next = rng.bernoulli(probs[1]) ? 1 : 0;

  StepOutcome out;
  out.reward = reward(i_next, a, params);
  out.i_next = i_next;
  out.general_next = g_next;
  month_ = t + 1;
  general_cur_ = g_next;
  if (i_next == 1) {
    terminated_ = true;
    severe_ = true;
    out.next_state = StateKey::make_terminal();
  } else {
    out.next_state = state();
  }
  out.episode_over = i_next == 1 || t == kHorizonMonths;
  return out;
}

// --- calibration ------------------------------------------------------------------

namespace {

Trajectory resimulate_one(const EnvModel& model, const Trajectory& ref, int sim_id, Rng rng) {
  Trajectory sim;
  sim.patient_id = sim_id;
  sim.baseline = ref.baseline;

  const MonthRecord& first = ref.records.front();
  sim.records.push_back(first);
  if (first.num_vaccines == 2 && first.months_since_last_vax == 0) sim.second_dose_month = 1;
  if (first.severe_infection == 1) return sim;

  std::vector<Vec> h, c;
  for (const auto& layer : model.net.layers) {
    h.push_back(Vec::Zero(layer.hidden_dim));
    c.push_back(Vec::Zero(layer.hidden_dim));
  }
  auto advance = [&](const Vec& x) -> std::array<double, 2> {
    Vec in = x;
    for (std::size_t l = 0; l < model.net.layers.size(); ++l) {
      Vec hn, cn;
      lstm_step(in, h[l], c[l], model.net.layers[l], hn, cn);
      h[l] = std::move(hn);
      c[l] = std::move(cn);
      in = h[l];
    }
    Mat probs = mlp_forward(model.net.head, in, nullptr);
    return {probs(0, 0), probs(1, 0)};
  };

  int nv = first.num_vaccines;
  int msl = first.months_since_last_vax;
  auto probs = advance(encode_record(sim.baseline, first));
  for (int m = 2; m <= kHorizonMonths; ++m) {
    const int severe = rng.bernoulli(probs[0]) ? 1 : 0;
    const int general = rng.bernoulli(probs[1]) ? 1 : 0;
    // observed dose schedule; no further doses past the observed record
    const bool dose = static_cast<int>(ref.records.size()) >= m &&
                      ref.records[m - 1].action == Action::Booster;
    if (dose) {
      nv = std::min(nv + 1, 4);
      msl = 0;
    } else if (msl >= 0) {
      ++msl;
    }
    MonthRecord rec;
    rec.month = m;
    rec.variant = model.variant_calendar[m - 1];
    rec.num_vaccines = nv;
    rec.months_since_last_vax = msl;
    rec.action = dose ? Action::Booster : Action::NoBooster;
    rec.general_infection = general;
    rec.severe_infection = severe;
    sim.records.push_back(rec);
    if (dose && nv == 2) sim.second_dose_month = m;
    if (dose && nv == 3) sim.observed_booster_month = m;
    if (severe) break;
    probs = advance(encode_record(sim.baseline, rec));
  }
  return sim;
}

}  // namespace

std::vector<Trajectory> resimulate(const EnvModel& model,
                                   const std::vector<Trajectory>& reference, int n_sim,
                                   std::uint64_t seed, int threads) {
  if (reference.empty()) throw std::domain_error("resimulate: empty reference cohort");
  std::vector<Trajectory> out(n_sim);
  Rng root(seed);
  parallel_for(static_cast<std::size_t>(n_sim), threads, [&](std::size_t i) {
    out[i] = resimulate_one(model, reference[i % reference.size()], static_cast<int>(i),
                            root.child(i));
  });
  return out;
}

CalibrationReport make_calibration_report(const std::vector<Trajectory>& sim,
                                          const std::vector<Trajectory>& ref) {
  CalibrationReport rep;
  rep.sim_overall = summarize_rates(sim).rows[0];
  rep.ref_overall = summarize_rates(ref).rows[0];
  rep.sim_monthly = summarize_rates(sim, GroupVar::Month);
  rep.ref_monthly = summarize_rates(ref, GroupVar::Month);

  const std::vector<std::pair<GroupVar, std::optional<GroupVar>>> groupings = {
      {GroupVar::Age, std::nullopt},        {GroupVar::NumVaccines, std::nullopt},
      {GroupVar::Visits, std::nullopt},     {GroupVar::Comorbidity, std::nullopt},
      {GroupVar::Imm, GroupVar::Gender},    {GroupVar::Variant, GroupVar::Race}};
  for (auto [a, b] : groupings)
    rep.conditionals.push_back({summarize_rates(sim, a, b), summarize_rates(ref, a, b)});

  auto gap = [](std::optional<double> x, std::optional<double> y) {
    if (!x || !y) return 0.0;
    return std::abs(*x - *y);
  };
  rep.overall_gap_severe_permille =
      gap(rep.sim_overall.severe_permille(), rep.ref_overall.severe_permille());
  rep.overall_gap_general_permille =
      gap(rep.sim_overall.general_permille(), rep.ref_overall.general_permille());
  for (int m = 0; m < kHorizonMonths; ++m) {
    rep.max_month_gap_severe_permille =
        std::max(rep.max_month_gap_severe_permille,
                 gap(rep.sim_monthly.rows[m].severe_permille(),
                     rep.ref_monthly.rows[m].severe_permille()));
    rep.max_month_gap_general_permille =
        std::max(rep.max_month_gap_general_permille,
                 gap(rep.sim_monthly.rows[m].general_permille(),
                     rep.ref_monthly.rows[m].general_permille()));
  }
  return rep;
}

CalibrationReport validate_env(const EnvModel& model, const std::vector<Trajectory>& reference,
                               int n_sim, std::uint64_t seed, int threads) {
  return make_calibration_report(resimulate(model, reference, n_sim, seed, threads), reference);
}

// --- environments -----------------------------------------------------------------

RnnEnvironment::RnnEnvironment(const EnvModel& model, const std::vector<Trajectory>& trajs,
                               RewardParams params)
    : model_(&model), trajs_(&trajs), eligible_(eligible_indices(trajs)), params_(params) {
  if (eligible_.empty()) throw std::domain_error("RnnEnvironment: no eligible patients");
}

StateKey RnnEnvironment::reset(int patient) {
  current_ = patient;
  session_ = std::make_unique<EnvSession>(*model_, (*trajs_)[eligible_.at(patient)]);
  return session_->state();
}

StateKey RnnEnvironment::state() const { return session_->state(); }
ActionMask RnnEnvironment::feasible() const { return session_->feasible(); }
bool RnnEnvironment::done() const { return session_->done(); }

StepOutcome RnnEnvironment::step(Action a, Rng& rng) {
  return session_->step(a, params_, rng);
}

int RnnEnvironment::months_since_second_dose() const {
  return session_->months_since_second_dose();
}

const Trajectory& RnnEnvironment::current_trajectory() const {
  return (*trajs_)[eligible_.at(current_)];
}

MdpEnvironment::MdpEnvironment(const TabularMdp& mdp, const std::vector<Trajectory>& trajs,
                               RewardParams params)
    : mdp_(&mdp), params_(params) {
  if (mdp.terminal < 0) throw std::invalid_argument("MdpEnvironment: needs a terminal state");
  for (int i : eligible_indices(trajs)) {
    const Trajectory& t = trajs[i];
    StateKey start = StateKey::make(t.baseline.age_band(), t.baseline.imm, VaxRecencyBand::M0_4);
    episodes_.push_back({state_index(start), kHorizonMonths - t.second_dose_month});
  }
  if (episodes_.empty()) throw std::domain_error("MdpEnvironment: no eligible patients");
}

MdpEnvironment::MdpEnvironment(const TabularMdp& mdp, std::vector<std::pair<int, int>> episodes,
                               RewardParams params)
    : mdp_(&mdp), episodes_(std::move(episodes)), params_(params) {
  if (mdp.terminal < 0) throw std::invalid_argument("MdpEnvironment: needs a terminal state");
  if (episodes_.empty()) throw std::domain_error("MdpEnvironment: no episodes");
}

StateKey MdpEnvironment::reset(int patient) {
  state_ = episodes_.at(patient).first;
  max_steps_ = episodes_.at(patient).second;
  steps_taken_ = 0;
  terminated_ = max_steps_ <= 0;
  return state();
}

StateKey MdpEnvironment::state() const {
  return state_ == mdp_->terminal ? StateKey::make_terminal() : state_from_index(state_);
}

ActionMask MdpEnvironment::feasible() const {
  ActionMask m;
  m.allow_booster = mdp_->feasible[state_][1];
  return m;
}

bool MdpEnvironment::done() const { return terminated_; }

StepOutcome MdpEnvironment::step(Action a, Rng& rng) {
  if (terminated_) throw std::logic_error("MdpEnvironment::step: episode is over");
  if (!mdp_->feasible[state_][static_cast<int>(a)])
    throw PolicyViolationError("MdpEnvironment::step: masked action");
  const auto& row = mdp_->P[state_][static_cast<int>(a)];
  double u = rng.uniform();
  int next = mdp_->n_states - 1;
  double acc = 0.0;
  for (int t = 0; t < mdp_->n_states; ++t) {
    acc += row[t];
    if (u < acc) {
      next = t;
      break;
    }
  }
  const int i_next = next == mdp_->terminal ? 1 : 0;
  ++steps_taken_;
  state_ = next;
  terminated_ = i_next == 1 || steps_taken_ >= max_steps_;

  StepOutcome out;
  out.i_next = i_next;
  out.general_next = 0;
  out.reward = reward(i_next, a, params_);
  out.next_state = i_next ? StateKey::make_terminal() : state_from_index(next);
  out.episode_over = terminated_;
  return out;
}

}  // namespace booster
