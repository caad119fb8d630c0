#include <doctest.h>

#include <cmath>
#include <vector>

#include "booster/neural.hpp"

using namespace booster;

namespace {

// Independent scalar-by-scalar LSTM cell, used as an oracle for the
// vectorized implementation. Plain loops, libm transcendentals. Gate row
// blocks are ordered [input; forget; output; cell].
void naive_lstm_cell(const LstmLayerParams& p, const std::vector<double>& x,
                     const std::vector<double>& h, const std::vector<double>& c,
                     std::vector<double>& h_out, std::vector<double>& c_out) {
  const int H = p.hidden_dim, D = p.input_dim;
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  h_out.assign(H, 0.0);
  c_out.assign(H, 0.0);
  for (int r = 0; r < H; ++r) {
    double zi = p.b(r, 0), zf = p.b(H + r, 0), zo = p.b(2 * H + r, 0), zg = p.b(3 * H + r, 0);
    for (int d = 0; d < D; ++d) {
      zi += p.wx(r, d) * x[d];
      zf += p.wx(H + r, d) * x[d];
      zo += p.wx(2 * H + r, d) * x[d];
      zg += p.wx(3 * H + r, d) * x[d];
    }
    for (int d = 0; d < H; ++d) {
      zi += p.wh(r, d) * h[d];
      zf += p.wh(H + r, d) * h[d];
      zo += p.wh(2 * H + r, d) * h[d];
      zg += p.wh(3 * H + r, d) * h[d];
    }
    double gi = sig(zi), gf = sig(zf), go = sig(zo), gg = std::tanh(zg);
    c_out[r] = gf * c[r] + gi * gg;
    h_out[r] = go * std::tanh(c_out[r]);
  }
}

PaddedBatch make_random_batch(Rng& rng, int batch, int steps, int input_dim, int out_dim) {
  PaddedBatch b;
  b.x.assign(steps, Mat::Zero(input_dim, batch));
  b.y.assign(steps, Mat::Zero(out_dim, batch));
  b.valid.assign(steps, std::vector<char>(batch, 0));
  for (int col = 0; col < batch; ++col) {
    int len = 2 + static_cast<int>(rng.uniform_int(steps - 1));
    for (int t = 0; t < steps; ++t) {
      if (t >= len) continue;
      b.valid[t][col] = 1;
      for (int d = 0; d < input_dim; ++d) b.x[t](d, col) = rng.uniform(-1.0, 1.0);
      for (int j = 0; j < out_dim; ++j) b.y[t](j, col) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
  }
  return b;
}

}  // namespace

TEST_CASE("lstm_step closed form with all-zero parameters") {
  // sigma(0) = 0.5 and tanh(0) = 0, so c' = 0.5*c0 and h' = 0.5*tanh(0.5*c0).
  Rng rng(1);
  LstmLayerParams p = LstmLayerParams::glorot(3, 4, rng);
  p.wx.setZero();
  p.wh.setZero();
  p.b.setZero();
  Vec x = Vec::Zero(3), h = Vec::Zero(4), c(4);
  c << -1.0, 0.25, 2.0, 0.0;
  Vec ho, co;
  lstm_step(x, h, c, p, ho, co);
  for (int r = 0; r < 4; ++r) {
    CHECK(co(r) == doctest::Approx(0.5 * c(r)).epsilon(1e-12));
    CHECK(ho(r) == doctest::Approx(0.5 * std::tanh(0.5 * c(r))).scale(1).epsilon(1e-12));
  }
}

TEST_CASE("lstm_step supports the 128-node configuration and checks shapes") {
  Rng rng(2);
  LstmLayerParams p = LstmLayerParams::glorot(20, 128, rng);
  Vec x = Vec::Zero(20), h = Vec::Zero(128), c = Vec::Zero(128), ho, co;
  lstm_step(x, h, c, p, ho, co);
  CHECK(ho.size() == 128);
  CHECK(co.size() == 128);
  Vec bad = Vec::Zero(21);
  CHECK_THROWS_AS(lstm_step(bad, h, c, p, ho, co), std::invalid_argument);
}

TEST_CASE("lstm_step matches the independent scalar reimplementation") {
  Rng rng(3);
  LstmLayerParams p = LstmLayerParams::glorot(5, 7, rng);
  std::vector<double> x(5), h(7), c(7);
  for (auto& v : x) v = rng.uniform(-2.0, 2.0);
  for (auto& v : h) v = rng.uniform(-1.0, 1.0);
  for (auto& v : c) v = rng.uniform(-1.5, 1.5);
  Vec xe(5), he(7), ce(7);
  for (int i = 0; i < 5; ++i) xe(i) = x[i];
  for (int i = 0; i < 7; ++i) he(i) = h[i];
  for (int i = 0; i < 7; ++i) ce(i) = c[i];
  Vec ho, co;
  lstm_step(xe, he, ce, p, ho, co);
  std::vector<double> hn, cn;
  naive_lstm_cell(p, x, h, c, hn, cn);
  for (int i = 0; i < 7; ++i) {
    CHECK(ho(i) == doctest::Approx(hn[i]).scale(1).epsilon(1e-12));
    CHECK(co(i) == doctest::Approx(cn[i]).scale(1).epsilon(1e-12));
  }
}

TEST_CASE("stacked_forward: inference is deterministic, dropout config accepted") {
  Rng rng(4);
  SeqModel m = SeqModel::make(6, {8, 8}, 2, rng);
  std::vector<Vec> seq;
  for (int t = 0; t < 5; ++t) {
    Vec x(6);
    for (int i = 0; i < 6; ++i) x(i) = rng.uniform(-1.0, 1.0);
    seq.push_back(x);
  }
  Rng r1(9), r2(9);
  auto a = stacked_forward(seq, m.layers, m.head, 0.2, r1, false);
  auto b = stacked_forward(seq, m.layers, m.head, 0.2, r2, false);
  REQUIRE(a.size() == 5);
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t][0] == b[t][0]);
    CHECK(a[t][1] == b[t][1]);
    CHECK(a[t][0] > 0.0);
    CHECK(a[t][0] < 1.0);
    CHECK(a[t][1] > 0.0);
    CHECK(a[t][1] < 1.0);
  }
  // training mode with dropout draws from the rng but still yields probabilities
  Rng r3(1);
  auto c = stacked_forward(seq, m.layers, m.head, 0.2, r3, true);
  for (auto& pr : c) {
    CHECK(pr[0] > 0.0);
    CHECK(pr[0] < 1.0);
  }
}

TEST_CASE("stacked_forward on a single step equals manual cell composition") {
  Rng rng(5);
  SeqModel m = SeqModel::make(4, {6, 5}, 2, rng);
  Vec x(4);
  for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-1.0, 1.0);
  Rng r(0);
  auto out = stacked_forward({x}, m.layers, m.head, 0.0, r, false);

  Vec h1, c1, h2, c2;
  lstm_step(x, Vec::Zero(6), Vec::Zero(6), m.layers[0], h1, c1);
  lstm_step(h1, Vec::Zero(5), Vec::Zero(5), m.layers[1], h2, c2);
  Vec logits = m.head.w[0] * h2 + m.head.b[0].col(0);
  CHECK(out[0][0] == doctest::Approx(sigmoid(logits(0))).epsilon(1e-12));
  CHECK(out[0][1] == doctest::Approx(sigmoid(logits(1))).epsilon(1e-12));
}

TEST_CASE("bptt loss of a perfectly certain correct prediction sits at the clamp floor") {
  Rng rng(6);
  SeqModel m = SeqModel::make(3, {4}, 2, rng);
  // zero the head weights and force saturated logits toward the targets
  m.head.w[0].setZero();
  PaddedBatch b;
  b.x.assign(3, Mat::Zero(3, 2));
  b.y.assign(3, Mat::Zero(2, 2));
  b.valid.assign(3, std::vector<char>(2, 1));
  m.head.b[0](0, 0) = 40.0;   // p ~ 1, target 1
  m.head.b[0](1, 0) = -40.0;  // p ~ 0, target 0
  for (int t = 0; t < 3; ++t)
    for (int col = 0; col < 2; ++col) b.y[t](0, col) = 1.0;
  Rng r(0);
  auto lg = bptt_loss_and_grads(b, m, 0.0, r);
  // two heads, each clamped BCE is -log(1 - 1e-7) ~ 1e-7
  CHECK(lg.loss <= 3e-7);
  CHECK(lg.loss >= 0.0);
}

TEST_CASE("bptt rejects an all-masked batch") {
  Rng rng(7);
  SeqModel m = SeqModel::make(3, {4}, 2, rng);
  PaddedBatch b;
  b.x.assign(2, Mat::Zero(3, 2));
  b.y.assign(2, Mat::Zero(2, 2));
  b.valid.assign(2, std::vector<char>(2, 0));
  Rng r(0);
  CHECK_THROWS_AS(bptt_loss_and_grads(b, m, 0.0, r), std::domain_error);
}

TEST_CASE("bptt gradients match central finite differences") {
  Rng rng(8);
  SeqModel m = SeqModel::make(5, {6, 4}, 2, rng);
  PaddedBatch batch = make_random_batch(rng, 3, 6, 5, 2);
  auto refs = param_tensors(m);
  Rng probe_rng(42);
  auto loss_fn = [&]() { return sequence_loss(batch, m); };
  auto grad_fn = [&]() {
    Rng r(0);
    return bptt_loss_and_grads(batch, m, 0.0, r).grads;
  };
  double err = grad_check(loss_fn, grad_fn, refs, 60, 1e-5, probe_rng);
  CHECK(err <= 1e-4);
}

TEST_CASE("bptt gradients with dropout active match finite differences of the same masks") {
  Rng rng(9);
  SeqModel m = SeqModel::make(4, {5, 5}, 2, rng);
  PaddedBatch batch = make_random_batch(rng, 2, 5, 4, 2);
  auto refs = param_tensors(m);
  auto loss_fn = [&]() {
    Rng r(1234);
    return bptt_loss_and_grads(batch, m, 0.2, r).loss;
  };
  auto grad_fn = [&]() {
    Rng r(1234);
    return bptt_loss_and_grads(batch, m, 0.2, r).grads;
  };
  Rng probe_rng(43);
  double err = grad_check(loss_fn, grad_fn, refs, 40, 1e-5, probe_rng);
  CHECK(err <= 1e-4);
}

TEST_CASE("duplicating every sequence leaves the mean loss unchanged") {
  Rng rng(10);
  SeqModel m = SeqModel::make(4, {5}, 2, rng);
  PaddedBatch b1 = make_random_batch(rng, 3, 5, 4, 2);
  PaddedBatch b2;
  b2.x.assign(5, Mat::Zero(4, 6));
  b2.y.assign(5, Mat::Zero(2, 6));
  b2.valid.assign(5, std::vector<char>(6, 0));
  for (int t = 0; t < 5; ++t)
    for (int col = 0; col < 3; ++col) {
      for (int rep = 0; rep < 2; ++rep) {
        b2.x[t].col(3 * rep + col) = b1.x[t].col(col);
        b2.y[t].col(3 * rep + col) = b1.y[t].col(col);
        b2.valid[t][3 * rep + col] = b1.valid[t][col];
      }
    }
  Rng r1(0), r2(0);
  double l1 = bptt_loss_and_grads(b1, m, 0.0, r1).loss;
  double l2 = bptt_loss_and_grads(b2, m, 0.0, r2).loss;
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
}

TEST_CASE("adam first step has magnitude ~ lr in every coordinate") {
  Rng rng(11);
  SeqModel m = SeqModel::make(3, {4}, 2, rng);
  auto refs = param_tensors(m);
  Mat before = *refs[0].tensor;
  GradBundle g = GradBundle::zeros_like(refs);
  for (auto& t : g.g) t.setConstant(0.3);
  AdamState st = AdamState::zeros_like(refs);
  const double lr = 1e-4;  // default learning rate
  adam_update(refs, g, st, lr);
  CHECK(st.step == 1);
  Mat delta = *refs[0].tensor - before;
  // first bias-corrected step: -lr * g / (|g| + eps)
  for (int i = 0; i < delta.size(); ++i)
    CHECK(std::abs(delta.data()[i]) == doctest::Approx(lr).epsilon(1e-6));
}

TEST_CASE("adam with zero gradient leaves parameters and moments unchanged") {
  Rng rng(12);
  SeqModel m = SeqModel::make(3, {4}, 2, rng);
  auto refs = param_tensors(m);
  std::vector<Mat> before;
  for (auto& r : refs) before.push_back(*r.tensor);
  GradBundle g = GradBundle::zeros_like(refs);
  AdamState st = AdamState::zeros_like(refs);
  adam_update(refs, g, st, 0.01);
  CHECK(st.step == 1);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    CHECK((*refs[i].tensor - before[i]).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(st.m[i].lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(st.v[i].lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("adam rejects non-finite gradients with a diagnostic") {
  Rng rng(13);
  SeqModel m = SeqModel::make(3, {4}, 2, rng);
  auto refs = param_tensors(m);
  GradBundle g = GradBundle::zeros_like(refs);
  g.g[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
  AdamState st = AdamState::zeros_like(refs);
  CHECK_THROWS_WITH_AS(adam_update(refs, g, st, 0.01),
                       doctest::Contains("lstm0.wh"), std::runtime_error);
}

TEST_CASE("grad_check on a quadratic is near-exact") {
  Mat theta = Mat::Zero(3, 3);
  Mat center = Mat::Ones(3, 3) * 0.5;
  std::vector<TensorRef> refs{{"theta", &theta}};
  auto loss_fn = [&]() { return (theta - center).squaredNorm(); };
  auto grad_fn = [&]() {
    GradBundle g = GradBundle::zeros_like(refs);
    g.g[0] = 2.0 * (theta - center);
    return g;
  };
  Rng rng(14);
  CHECK(grad_check(loss_fn, grad_fn, refs, 9, 1e-5, rng) <= 1e-8);
}

TEST_CASE("grad_check validates a single LSTM layer independently") {
  Rng rng(15);
  SeqModel m = SeqModel::make(4, {6}, 2, rng);
  PaddedBatch batch = make_random_batch(rng, 2, 4, 4, 2);
  // restrict the probes to the LSTM tensors only
  auto all = param_tensors(m);
  std::vector<TensorRef> lstm_only(all.begin(), all.begin() + 3);
  auto loss_fn = [&]() { return sequence_loss(batch, m); };
  auto grad_fn = [&]() {
    Rng r(0);
    auto full = bptt_loss_and_grads(batch, m, 0.0, r).grads;
    GradBundle g;
    g.g.assign(full.g.begin(), full.g.begin() + 3);
    return g;
  };
  Rng probe_rng(16);
  CHECK(grad_check(loss_fn, grad_fn, lstm_only, 10, 1e-5, probe_rng) <= 1e-4);
}

TEST_CASE("grad_check validates a dense ReLU MLP away from kinks") {
  Rng rng(17);
  // resample until every ReLU pre-activation is far from zero relative to h
  for (int attempt = 0;; ++attempt) {
    REQUIRE(attempt < 50);
    MlpParams mlp = MlpParams::glorot({5, 8, 3}, Activation::ReLU, OutputKind::Linear, rng);
    Mat x(5, 4);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
    MlpCache cache;
    mlp_forward(mlp, x, &cache);
    if (cache.pre[0].array().abs().minCoeff() < 1e-3) continue;

    Mat target = Mat::Ones(3, 4) * 0.25;
    auto refs = param_tensors(mlp);
    auto loss_fn = [&]() {
      Mat out = mlp_forward(mlp, x, nullptr);
      return 0.5 * (out - target).squaredNorm();
    };
    auto grad_fn = [&]() {
      MlpCache c2;
      Mat out = mlp_forward(mlp, x, &c2);
      GradBundle g = GradBundle::zeros_like(refs);
      mlp_backward(mlp, c2, out - target, g);
      return g;
    };
    Rng probe_rng(18);
    CHECK(grad_check(loss_fn, grad_fn, refs, 25, 1e-5, probe_rng) <= 1e-4);
    break;
  }
}

TEST_CASE("grad_check validates the sigmoid head independently") {
  Rng rng(19);
  SeqModel m = SeqModel::make(4, {6}, 2, rng);
  PaddedBatch batch = make_random_batch(rng, 2, 4, 4, 2);
  auto all = param_tensors(m);
  std::vector<TensorRef> head_only(all.begin() + 3, all.end());
  auto loss_fn = [&]() { return sequence_loss(batch, m); };
  auto grad_fn = [&]() {
    Rng r(0);
    auto full = bptt_loss_and_grads(batch, m, 0.0, r).grads;
    GradBundle g;
    g.g.assign(full.g.begin() + 3, full.g.end());
    return g;
  };
  Rng probe_rng(20);
  CHECK(grad_check(loss_fn, grad_fn, head_only, 10, 1e-5, probe_rng) <= 1e-4);
}

TEST_CASE("BCE decreases over the first 50 Adam steps on a fixed batch") {
  Rng rng(21);
  SeqModel m = SeqModel::make(5, {8, 8}, 2, rng);
  PaddedBatch batch = make_random_batch(rng, 6, 6, 5, 2);
  auto refs = param_tensors(m);
  AdamState st = AdamState::zeros_like(refs);
  Rng train_rng(22);
  double prev = 1e300, first = 0.0;
  int non_monotone = 0;
  for (int step = 0; step < 50; ++step) {
    auto lg = bptt_loss_and_grads(batch, m, 0.0, train_rng);
    if (step == 0) first = lg.loss;
    if (lg.loss > prev) ++non_monotone;
    prev = lg.loss;
    adam_update(refs, lg.grads, st, 0.01);
  }
  double final_loss = sequence_loss(batch, m);
  CHECK(non_monotone <= 5);
  CHECK(final_loss < 0.8 * first);
}
