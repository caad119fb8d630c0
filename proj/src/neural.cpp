#include "booster/neural.hpp"

#include <cmath>
#include <stdexcept>

namespace booster {

Arr sigmoid_arr(const Arr& z) {
  // one exp per element, stable on both tails
  Arr e = (-z.abs()).exp();
  return (z >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e));
}

Arr tanh_arr(const Arr& z) { return 2.0 * sigmoid_arr(2.0 * z) - 1.0; }

double sigmoid(double z) {
  double e = std::exp(-std::abs(z));
  return z >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
}

namespace {

Mat glorot_matrix(int rows, int cols, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = rng.uniform(-limit, limit);
  return m;
}

}  // namespace

LstmLayerParams LstmLayerParams::glorot(int input_dim, int hidden_dim, Rng& rng) {
  if (input_dim <= 0 || hidden_dim <= 0)
    throw std::invalid_argument("LstmLayerParams: dimensions must be positive");
  LstmLayerParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.wx = glorot_matrix(4 * hidden_dim, input_dim, rng);
  p.wh = glorot_matrix(4 * hidden_dim, hidden_dim, rng);
  p.b = Mat::Zero(4 * hidden_dim, 1);
  // forget-gate bias starts at 1 so early training does not flush the cell
  p.b.block(hidden_dim, 0, hidden_dim, 1).setOnes();
  return p;
}

namespace {

// In-place stable activations on matrix blocks (one exp-sized temporary).
template <typename Block>
void sigmoid_inplace(Block&& m) {
  Arr e = (-m.array().abs()).exp();
  m = (m.array() >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e)).matrix();
}

template <typename Block>
void tanh_inplace(Block&& m) {
  m *= 2.0;
  sigmoid_inplace(m);
  m = (2.0 * m.array() - 1.0).matrix();
}

}  // namespace

MlpParams MlpParams::glorot(std::vector<int> sizes, Activation hidden, OutputKind output,
                            Rng& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("MlpParams: need at least in/out sizes");
  MlpParams mlp;
  mlp.sizes = std::move(sizes);
  mlp.hidden = hidden;
  mlp.output = output;
  for (std::size_t l = 0; l + 1 < mlp.sizes.size(); ++l) {
    mlp.w.push_back(glorot_matrix(mlp.sizes[l + 1], mlp.sizes[l], rng));
    mlp.b.push_back(Mat::Zero(mlp.sizes[l + 1], 1));
  }
  return mlp;
}

SeqModel SeqModel::make(int input_dim, const std::vector<int>& hidden_dims, int out_dim,
                        Rng& rng) {
  if (hidden_dims.empty()) throw std::invalid_argument("SeqModel: need at least one LSTM layer");
  SeqModel m;
  int in = input_dim;
  for (int h : hidden_dims) {
    m.layers.push_back(LstmLayerParams::glorot(in, h, rng));
    in = h;
  }
  m.head = MlpParams::glorot({in, out_dim}, Activation::ReLU, OutputKind::SigmoidProb, rng);
  return m;
}

std::vector<TensorRef> param_tensors(SeqModel& model) {
  std::vector<TensorRef> refs;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    std::string prefix = "lstm" + std::to_string(l) + ".";
    refs.push_back({prefix + "wx", &model.layers[l].wx});
    refs.push_back({prefix + "wh", &model.layers[l].wh});
    refs.push_back({prefix + "b", &model.layers[l].b});
  }
  auto head = param_tensors(model.head);
  for (auto& r : head) refs.push_back({"head." + r.name, r.tensor});
  return refs;
}

std::vector<TensorRef> param_tensors(MlpParams& mlp) {
  std::vector<TensorRef> refs;
  for (std::size_t l = 0; l < mlp.w.size(); ++l) {
    refs.push_back({"w" + std::to_string(l), &mlp.w[l]});
    refs.push_back({"b" + std::to_string(l), &mlp.b[l]});
  }
  return refs;
}

GradBundle GradBundle::zeros_like(const std::vector<TensorRef>& params) {
  GradBundle g;
  g.g.reserve(params.size());
  for (const auto& p : params) g.g.push_back(Mat::Zero(p.tensor->rows(), p.tensor->cols()));
  return g;
}

void GradBundle::add_scaled(const GradBundle& other, double s) {
  if (other.g.size() != g.size()) throw std::invalid_argument("GradBundle: shape mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * other.g[i];
}

void GradBundle::scale(double s) {
  for (auto& m : g) m *= s;
}

bool GradBundle::finite() const {
  for (const auto& m : g)
    if (!m.allFinite()) return false;
  return true;
}

// --- LSTM core ---------------------------------------------------------------

namespace {

// One cell step for the inference paths. Gate row blocks are ordered
// [input; forget; output; cell].
void lstm_forward_step(const LstmLayerParams& p, const Mat& in, const Mat& h_prev,
                       const Mat& c_prev, Mat& h_out, Mat& c_out) {
  const int H = p.hidden_dim;
  Mat z(4 * H, in.cols());
  z.noalias() = p.wx * in;
  z.noalias() += p.wh * h_prev;
  z.colwise() += p.b.col(0);
  sigmoid_inplace(z.topRows(3 * H));
  tanh_inplace(z.bottomRows(H));
  auto gi = z.topRows(H).array();
  auto gf = z.middleRows(H, H).array();
  auto go = z.middleRows(2 * H, H).array();
  auto gg = z.bottomRows(H).array();
  c_out = (gf * c_prev.array() + gi * gg).matrix();
  Mat tc = c_out;
  tanh_inplace(tc);
  h_out = (go * tc.array()).matrix();
}

}  // namespace

void lstm_step(const Vec& x, const Vec& h, const Vec& c, const LstmLayerParams& p, Vec& h_out,
               Vec& c_out) {
  if (x.size() != p.input_dim || h.size() != p.hidden_dim || c.size() != p.hidden_dim)
    throw std::invalid_argument("lstm_step: dimension mismatch");
  Mat ho, co;
  lstm_forward_step(p, x, h, c, ho, co);
  h_out = ho.col(0);
  c_out = co.col(0);
}

std::vector<std::array<double, 2>> stacked_forward(const std::vector<Vec>& seq,
                                                   const std::vector<LstmLayerParams>& layers,
                                                   const MlpParams& head, double dropout_rate,
                                                   Rng& rng, bool training) {
  if (seq.empty()) throw std::invalid_argument("stacked_forward: empty sequence");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("stacked_forward: dropout rate must be in [0,1)");
  const std::size_t L = layers.size();
  std::vector<Mat> h(L), c(L);
  for (std::size_t l = 0; l < L; ++l) {
    h[l] = Mat::Zero(layers[l].hidden_dim, 1);
    c[l] = Mat::Zero(layers[l].hidden_dim, 1);
  }
  std::vector<std::array<double, 2>> out;
  out.reserve(seq.size());
  const double keep = 1.0 - dropout_rate;
  for (const Vec& x : seq) {
    if (x.size() != layers[0].input_dim)
      throw std::invalid_argument("stacked_forward: input dimension mismatch");
    Mat in = x;
    for (std::size_t l = 0; l < L; ++l) {
      Mat hn, cn;
      lstm_forward_step(layers[l], in, h[l], c[l], hn, cn);
      h[l] = std::move(hn);
      c[l] = std::move(cn);
      in = h[l];
      if (training && dropout_rate > 0.0 && l + 1 < L) {
        for (int r = 0; r < in.rows(); ++r)
          in(r, 0) = rng.uniform() < dropout_rate ? 0.0 : in(r, 0) / keep;
      }
    }
    Mat probs = mlp_forward(head, in, nullptr);
    out.push_back({probs(0, 0), probs(1, 0)});
  }
  return out;
}

// --- MLP ---------------------------------------------------------------------

Mat mlp_forward(const MlpParams& mlp, const Mat& x, MlpCache* cache) {
  if (x.rows() != mlp.in_dim()) throw std::invalid_argument("mlp_forward: input dim mismatch");
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
    cache->post.push_back(x);
  }
  Mat cur = x;
  const std::size_t L = mlp.w.size();
  for (std::size_t l = 0; l < L; ++l) {
    Mat pre = mlp.w[l] * cur;
    pre.colwise() += mlp.b[l].col(0);
    if (l + 1 < L) {
      if (mlp.hidden == Activation::ReLU)
        cur = pre.array().max(0.0).matrix();
      else
        cur = tanh_arr(pre.array()).matrix();
    } else {
      if (mlp.output == OutputKind::SigmoidProb)
        cur = sigmoid_arr(pre.array()).matrix();
      else
        cur = pre;
    }
    if (cache) {
      cache->pre.push_back(std::move(pre));
      cache->post.push_back(cur);
    }
  }
  return cur;
}

Mat mlp_backward(const MlpParams& mlp, const MlpCache& cache, const Mat& dout,
                 GradBundle& grads) {
  // dout is w.r.t. the final *linear* pre-activation (logits for a sigmoid
  // head; the raw output for a linear head).
  const std::size_t L = mlp.w.size();
  if (grads.g.size() != 2 * L) throw std::invalid_argument("mlp_backward: grad bundle mismatch");
  Mat dpre = dout;
  for (std::size_t l = L; l-- > 0;) {
    grads.g[2 * l] += dpre * cache.post[l].transpose();
    grads.g[2 * l + 1] += dpre.rowwise().sum();
    Mat dpost = mlp.w[l].transpose() * dpre;
    if (l == 0) return dpost;
    if (mlp.hidden == Activation::ReLU) {
      dpre = (cache.pre[l - 1].array() > 0.0).select(dpost.array(), 0.0).matrix();
    } else {
      Arr t = cache.post[l].array();  // tanh(pre[l-1])
      dpre = (dpost.array() * (1.0 - t * t)).matrix();
    }
  }
  return Mat();
}

// --- BPTT ---------------------------------------------------------------------

int PaddedBatch::valid_count() const {
  int n = 0;
  for (const auto& row : valid)
    for (char v : row) n += v != 0;
  return n;
}

namespace {

// Activations and states stored time-concatenated: column t*B+b holds
// (step t, sequence b). The input and recurrent weight products then run as
// a few large GEMMs per layer instead of ~T small ones.
struct ForwardCaches {
  Mat x_concat;               // (D x B*T)
  std::vector<Mat> gates;     // per layer: activated [i; f; o; g], (4H x B*T)
  std::vector<Mat> c;         // per layer (H x B*T)
  std::vector<Mat> tanh_c;    // per layer (H x B*T)
  std::vector<Mat> h;         // per layer (H x B*T)
  std::vector<Mat> dropped;   // per layer below the top: h after dropout
  std::vector<Arr> drop;      // dropout masks matching `dropped`
  MlpCache head;              // head forward over the whole concat
  Mat probs;                  // (out_dim x B*T)
};

void forward_batch(const PaddedBatch& batch, const SeqModel& model, double dropout_rate,
                   Rng* drop_rng, ForwardCaches& fc) {
  const int T = batch.steps();
  const int B = batch.batch();
  const int BT = B * T;
  const std::size_t L = model.layers.size();
  const double keep = 1.0 - dropout_rate;
  const bool dropping = drop_rng != nullptr && dropout_rate > 0.0;

  fc.x_concat.resize(model.layers[0].input_dim, BT);
  for (int t = 0; t < T; ++t) fc.x_concat.middleCols(t * B, B) = batch.x[t];

  fc.gates.assign(L, {});
  fc.c.assign(L, {});
  fc.tanh_c.assign(L, {});
  fc.h.assign(L, {});
  fc.dropped.assign(L, {});
  fc.drop.assign(L, {});

  const Mat* in_concat = &fc.x_concat;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& p = model.layers[l];
    const int H = p.hidden_dim;
    Mat& z = fc.gates[l];
    z.resize(4 * H, BT);
    z.noalias() = p.wx * (*in_concat);  // input contribution, all steps at once
    z.colwise() += p.b.col(0);
    fc.c[l].resize(H, BT);
    fc.tanh_c[l].resize(H, BT);
    fc.h[l].resize(H, BT);
    for (int t = 0; t < T; ++t) {
      auto zt = z.middleCols(t * B, B);
      if (t > 0) zt.noalias() += p.wh * fc.h[l].middleCols((t - 1) * B, B);
      sigmoid_inplace(zt.topRows(3 * H));
      tanh_inplace(zt.bottomRows(H));
      auto gi = zt.topRows(H).array();
      auto gf = zt.middleRows(H, H).array();
      auto go = zt.middleRows(2 * H, H).array();
      auto gg = zt.bottomRows(H).array();
      auto ct = fc.c[l].middleCols(t * B, B);
      if (t > 0)
        ct = (gf * fc.c[l].middleCols((t - 1) * B, B).array() + gi * gg).matrix();
      else
        ct = (gi * gg).matrix();
      auto tct = fc.tanh_c[l].middleCols(t * B, B);
      tct = ct;
      tanh_inplace(tct);
      fc.h[l].middleCols(t * B, B) = (go * tct.array()).matrix();
    }
    if (l + 1 < L && dropping) {
      Arr& mask = fc.drop[l];
      mask.resize(H, BT);
      for (int cc = 0; cc < BT; ++cc)
        for (int rr = 0; rr < H; ++rr)
          mask(rr, cc) = drop_rng->uniform() < dropout_rate ? 0.0 : 1.0 / keep;
      fc.dropped[l] = (fc.h[l].array() * mask).matrix();
      in_concat = &fc.dropped[l];
    } else {
      in_concat = &fc.h[l];
    }
  }
  fc.probs = mlp_forward(model.head, *in_concat, &fc.head);
}

}  // namespace

LossSums bptt_loss_sums(const PaddedBatch& batch, SeqModel& model, double dropout_rate,
                        Rng& rng) {
  const int T = batch.steps();
  const int B = batch.batch();
  if (T == 0 || B == 0) throw std::domain_error("bptt: empty batch");
  const int out_dim = model.head.out_dim();
  const std::size_t L = model.layers.size();

  ForwardCaches fc;
  forward_batch(batch, model, dropout_rate, dropout_rate > 0.0 ? &rng : nullptr, fc);

  LossSums result;
  auto refs = param_tensors(model);
  result.grads = GradBundle::zeros_like(refs);
  result.valid = batch.valid_count();
  if (result.valid == 0) throw std::domain_error("bptt: batch has no valid steps");

  const double lo = kProbClamp, hi = 1.0 - kProbClamp;

  Mat dlogits = Mat::Zero(out_dim, B * T);
  for (int t = 0; t < T; ++t) {
    for (int b = 0; b < B; ++b) {
      if (!batch.valid[t][b]) continue;
      for (int j = 0; j < out_dim; ++j) {
        double p = fc.probs(j, t * B + b);
        double y = batch.y[t](j, b);
        double pc = std::min(std::max(p, lo), hi);
        result.loss_sum += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
        if (p > lo && p < hi) dlogits(j, t * B + b) = p - y;  // clamped probs are constants
      }
    }
  }

  GradBundle head_grads = GradBundle::zeros_like(param_tensors(model.head));
  Mat dext = mlp_backward(model.head, fc.head, dlogits, head_grads);

  for (std::size_t l = L; l-- > 0;) {
    const auto& p = model.layers[l];
    const int H = p.hidden_dim;
    if (l + 1 < L && fc.drop[l].size() > 0) dext = (dext.array() * fc.drop[l]).matrix();

    Mat dz(4 * H, B * T);
    Mat dh(H, B), dc_next(H, B);
    dh.setZero();
    dc_next.setZero();
    for (int t = T - 1; t >= 0; --t) {
      auto zt = fc.gates[l].middleCols(t * B, B);
      auto gi = zt.topRows(H).array();
      auto gf = zt.middleRows(H, H).array();
      auto go = zt.middleRows(2 * H, H).array();
      auto gg = zt.bottomRows(H).array();
      auto tct = fc.tanh_c[l].middleCols(t * B, B).array();
      dh += dext.middleCols(t * B, B);

      auto dzt = dz.middleCols(t * B, B);
      Arr dc = dh.array() * go * (1.0 - tct * tct) + dc_next.array();
      dzt.topRows(H) = (dc * gg * gi * (1.0 - gi)).matrix();            // input gate
      if (t > 0) {
        auto c_prev = fc.c[l].middleCols((t - 1) * B, B).array();
        dzt.middleRows(H, H) = (dc * c_prev * gf * (1.0 - gf)).matrix();  // forget gate
      } else {
        dzt.middleRows(H, H).setZero();
      }
      dzt.middleRows(2 * H, H) = (dh.array() * tct * go * (1.0 - go)).matrix();  // output gate
      dzt.bottomRows(H) = (dc * gi * (1.0 - gg * gg)).matrix();                  // cell gate
      dc_next = (dc * gf).matrix();
      dh.noalias() = p.wh.transpose() * dzt;
    }

    result.grads.g[3 * l].noalias() +=
        dz * (l == 0 ? fc.x_concat
                     : (fc.drop[l - 1].size() > 0 ? fc.dropped[l - 1] : fc.h[l - 1]))
                 .transpose();
    if (T > 1)
      result.grads.g[3 * l + 1].noalias() +=
          dz.rightCols((T - 1) * B) * fc.h[l].leftCols((T - 1) * B).transpose();
    result.grads.g[3 * l + 2] += dz.rowwise().sum();
    if (l > 0) {
      dext.resize(p.input_dim, B * T);
      dext.noalias() = p.wx.transpose() * dz;
    }
  }
  for (std::size_t i = 0; i < head_grads.g.size(); ++i)
    result.grads.g[3 * L + i] = std::move(head_grads.g[i]);
  return result;
}

LossGrads bptt_loss_and_grads(const PaddedBatch& batch, SeqModel& model, double dropout_rate,
                              Rng& rng) {
  LossSums sums = bptt_loss_sums(batch, model, dropout_rate, rng);
  LossGrads out;
  out.loss = sums.loss_sum / sums.valid;
  out.grads = std::move(sums.grads);
  out.grads.scale(1.0 / sums.valid);
  return out;
}

double sequence_loss(const PaddedBatch& batch, const SeqModel& model) {
  ForwardCaches fc;
  forward_batch(batch, model, 0.0, nullptr, fc);
  const double lo = kProbClamp, hi = 1.0 - kProbClamp;
  const int B = batch.batch();
  double loss = 0.0;
  int valid = 0;
  for (int t = 0; t < batch.steps(); ++t)
    for (int b = 0; b < B; ++b) {
      if (!batch.valid[t][b]) continue;
      ++valid;
      for (int j = 0; j < batch.y[t].rows(); ++j) {
        double pc = std::min(std::max(fc.probs(j, t * B + b), lo), hi);
        double y = batch.y[t](j, b);
        loss += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
      }
    }
  if (valid == 0) throw std::domain_error("sequence_loss: no valid steps");
  return loss / valid;
}

// --- Adam ---------------------------------------------------------------------

AdamState AdamState::zeros_like(const std::vector<TensorRef>& params) {
  AdamState st;
  for (const auto& p : params) {
    st.m.push_back(Mat::Zero(p.tensor->rows(), p.tensor->cols()));
    st.v.push_back(Mat::Zero(p.tensor->rows(), p.tensor->cols()));
  }
  return st;
}

void adam_update(const std::vector<TensorRef>& params, const GradBundle& grads, AdamState& st,
                 double lr) {
  if (params.size() != grads.g.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_update: shape mismatch");
  if (lr <= 0.0) throw std::invalid_argument("adam_update: lr must be positive");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!grads.g[i].allFinite())
      throw std::runtime_error("adam_update: non-finite gradient in " + params[i].name);
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads.g[i];
    st.v[i] = (st.beta2 * st.v[i].array() +
               (1.0 - st.beta2) * grads.g[i].array().square()).matrix();
    Arr mhat = st.m[i].array() / bc1;
    Arr vhat = st.v[i].array() / bc2;
    params[i].tensor->array() -= lr * mhat / (vhat.sqrt() + st.eps);
  }
}

// --- gradient check -------------------------------------------------------------

double grad_check(const std::function<double()>& loss_fn,
                  const std::function<GradBundle()>& grad_fn,
                  const std::vector<TensorRef>& params, int probes, double h, Rng& rng) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
  GradBundle analytic = grad_fn();
  long long total = 0;
  for (const auto& p : params) total += p.tensor->size();
  double worst = 0.0;
  for (int k = 0; k < probes; ++k) {
    long long flat = static_cast<long long>(rng.uniform_int(static_cast<std::uint64_t>(total)));
    std::size_t ti = 0;
    while (flat >= params[ti].tensor->size()) {
      flat -= params[ti].tensor->size();
      ++ti;
    }
    double* slot = params[ti].tensor->data() + flat;
    const double saved = *slot;
    *slot = saved + h;
    double fp = loss_fn();
    *slot = saved - h;
    double fm = loss_fn();
    *slot = saved;
    double numeric = (fp - fm) / (2.0 * h);
    double a = analytic.g[ti].data()[flat];
    double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace booster
