#pragma once

// Self-contained neural core: stacked LSTM cells, dense heads, masked BCE
// loss with backpropagation through time, Adam, and finite-difference
// gradient checking. Eigen supplies matrix storage and vectorized exp; all
// network math lives here. Double precision throughout.

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "booster/rng.hpp"

namespace booster {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Arr = Eigen::ArrayXXd;

inline constexpr double kProbClamp = 1e-7;  // BCE clamp floor, avoids log(0)

// Numerically stable elementwise sigmoid / tanh built on Eigen's vectorized
// exp (its vectorized tanh is float-only).
Arr sigmoid_arr(const Arr& z);
Arr tanh_arr(const Arr& z);
double sigmoid(double z);

// --- parameters ------------------------------------------------------------

// One LSTM layer. Gate weights are fused row blocks in order
// [input; forget; cell; output]: wx is (4H x D), wh is (4H x H), b is (4H x 1).
struct LstmLayerParams {
  int input_dim = 0;
  int hidden_dim = 0;
  Mat wx, wh, b;

  static LstmLayerParams glorot(int input_dim, int hidden_dim, Rng& rng);
};

enum class Activation : std::uint8_t { ReLU = 0, Tanh };
enum class OutputKind : std::uint8_t { SigmoidProb = 0, Linear };

// Fully connected stack; sizes = {in, hidden..., out}. The output layer is
// linear for Q-values or followed by elementwise sigmoid for probabilities.
struct MlpParams {
  std::vector<int> sizes;
  std::vector<Mat> w;  // w[l]: sizes[l+1] x sizes[l]
  std::vector<Mat> b;  // (sizes[l+1] x 1)
  Activation hidden = Activation::ReLU;
  OutputKind output = OutputKind::SigmoidProb;

  static MlpParams glorot(std::vector<int> sizes, Activation hidden, OutputKind output, Rng& rng);
  int in_dim() const { return sizes.front(); }
  int out_dim() const { return sizes.back(); }
};

// Stacked LSTM layers plus a dense head over the top hidden state.
struct SeqModel {
  std::vector<LstmLayerParams> layers;
  MlpParams head;

  static SeqModel make(int input_dim, const std::vector<int>& hidden_dims, int out_dim,
                       Rng& rng);
};

struct TensorRef {
  std::string name;
  Mat* tensor;
};

std::vector<TensorRef> param_tensors(SeqModel& model);
std::vector<TensorRef> param_tensors(MlpParams& mlp);

// Gradients isomorphic to a parameter list (same order and shapes).
struct GradBundle {
  std::vector<Mat> g;

  static GradBundle zeros_like(const std::vector<TensorRef>& params);
  void add_scaled(const GradBundle& other, double scale);
  void scale(double s);
  bool finite() const;
};

// --- forward / loss / backward ----------------------------------------------

// Single LSTM cell step; returns (h', c'). Throws std::invalid_argument on
// dimension mismatch.
void lstm_step(const Vec& x, const Vec& h, const Vec& c, const LstmLayerParams& p,
               Vec& h_out, Vec& c_out);

// Full stacked forward over one sequence; output is one (p_severe, p_general)
// pair per input step. Inverted dropout is applied between stacked layers
// only, and only when training=true.
std::vector<std::array<double, 2>> stacked_forward(const std::vector<Vec>& seq,
                                                   const std::vector<LstmLayerParams>& layers,
                                                   const MlpParams& head, double dropout_rate,
                                                   Rng& rng, bool training);

// Padded batch, time-major: x[t] is (input_dim x batch), y[t] is
// (out_dim x batch), valid[t][b] marks steps whose target exists.
struct PaddedBatch {
  std::vector<Mat> x;
  std::vector<Mat> y;
  std::vector<std::vector<char>> valid;

  int steps() const { return static_cast<int>(x.size()); }
  int batch() const { return x.empty() ? 0 : static_cast<int>(x[0].cols()); }
  int valid_count() const;
};

struct LossGrads {
  double loss = 0.0;
  GradBundle grads;
};

// Masked mean binary cross-entropy summed over the output heads, with full
// BPTT gradients for every parameter. Throws std::domain_error when the batch
// has no valid steps.
LossGrads bptt_loss_and_grads(const PaddedBatch& batch, SeqModel& model, double dropout_rate,
                              Rng& rng);

// Sum (not mean) variant used to combine chunks exactly across threads:
// returns summed loss and summed gradients over this chunk's valid steps.
struct LossSums {
  double loss_sum = 0.0;
  int valid = 0;
  GradBundle grads;
};
LossSums bptt_loss_sums(const PaddedBatch& batch, SeqModel& model, double dropout_rate,
                        Rng& rng);

// Inference-mode mean BCE of a model on a batch (no dropout, no gradients).
double sequence_loss(const PaddedBatch& batch, const SeqModel& model);

// --- MLP forward/backward (deep-Q baseline and head reuse) ------------------

struct MlpCache {
  std::vector<Mat> pre;   // pre-activations per layer
  std::vector<Mat> post;  // post-activations per layer (input at index 0)
};

Mat mlp_forward(const MlpParams& mlp, const Mat& x, MlpCache* cache = nullptr);

// Backpropagates d(out) through the cached forward pass; accumulates into
// grads (ordered as param_tensors(mlp)) and returns d(input).
Mat mlp_backward(const MlpParams& mlp, const MlpCache& cache, const Mat& dout,
                 GradBundle& grads);

// --- optimizer ---------------------------------------------------------------

struct AdamState {
  std::vector<Mat> m, v;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros_like(const std::vector<TensorRef>& params);
};

// Standard bias-corrected Adam step. Throws std::runtime_error with the
// offending tensor's name if a gradient is non-finite.
void adam_update(const std::vector<TensorRef>& params, const GradBundle& grads, AdamState& st,
                 double lr);

// --- verification -------------------------------------------------------------

// Max over `probes` random coordinates of
// |analytic - central_difference| / max(1e-12, |analytic| + |numeric|).
// loss_fn must evaluate the loss at the params' current values; grad_fn must
// return the analytic gradient at the current values.
double grad_check(const std::function<double()>& loss_fn,
                  const std::function<GradBundle()>& grad_fn,
                  const std::vector<TensorRef>& params, int probes, double h, Rng& rng);

}  // namespace booster
