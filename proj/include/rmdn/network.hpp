#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rmdn/density.hpp"

namespace rmdn {

// Architecture hyperparameters. Full-scale runs use hidden = 512 with
// seq_len = 70, layers = 2 and components = 3; the desk default shrinks
// the hidden size only.
struct ModelConfig {
  int input_dim = 8;
  int hidden = 64;
  int layers = 2;
  int seq_len = 70;
  int components = 3;
  Family family = Family::StudentT;
  bool multires = true;
  bool attention = true;
  int resolutions = 2;  // total streams when multires (native + conv chains)
  int conv_kernel = 10;
  int conv_stride = 3;
  int conv_padding = 0;
  double nu_lo = 1.0;
  double nu_hi = 10.0;

  int n_streams() const { return multires ? resolutions : 1; }
  // temporal length of stream s (stream 0 is the raw window)
  int stream_len(int s) const;
  NuBounds nu_bounds() const { return {nu_lo, nu_hi}; }
  void validate() const;
};

int conv_output_len(int input_len, int kernel, int stride, int padding);

using TensorMap = std::map<std::string, Eigen::MatrixXd>;

struct ModelWeights {
  TensorMap tensors;

  const Eigen::MatrixXd& at(const std::string& name) const;
  Eigen::MatrixXd& at(const std::string& name);
};

struct TensorShape {
  std::string name;
  int rows = 0;
  int cols = 0;
};

// Every trainable tensor of a configuration, in deterministic order.
std::vector<TensorShape> expected_shapes(const ModelConfig& config);
void validate_weights(const ModelWeights& weights, const ModelConfig& config);

// -------- resolved views over the weight map --------

struct GruLayerView {
  const Eigen::MatrixXd *W_u, *U_u, *b_u;
  const Eigen::MatrixXd *W_r, *U_r, *b_r;
  const Eigen::MatrixXd *W_h, *U_h, *b_h;
};
GruLayerView gru_view(const ModelWeights& weights, int stream, int layer);

struct AttentionView {
  const Eigen::MatrixXd *W_a, *b_a, *w_q, *b_q;
};
AttentionView attention_view(const ModelWeights& weights, int stream);

// -------- elementary forward operations --------

// One GRU step; note the update-gate convention h = u*h_prev + (1-u)*h_tilde with
// h_tilde = tanh(r*(W_h h_prev) + U_h x + b_h).
Eigen::VectorXd gru_step(const Eigen::VectorXd& h_prev, const Eigen::VectorXd& x_in,
                         const GruLayerView& layer);

struct AttentionResult {
  Eigen::VectorXd pooled;
  Eigen::VectorXd beta;  // simplex over the sequence steps
};
AttentionResult attention_pool(const Eigen::MatrixXd& h_seq /* L x hidden */,
                               const AttentionView& attn);

// Valid strided cross-correlation of one univariate series.
Eigen::VectorXd conv_stream(const Eigen::VectorXd& x, const Eigen::VectorXd& filter, int stride,
                            int padding = 0, double bias = 0.0);

// -------- whole-graph forward / backward --------

struct LayerTrace {
  // per step t (0-based): hidden x batch activations
  std::vector<Eigen::MatrixXd> h, u, r, htilde, wh;
};

struct StreamTrace {
  std::vector<Eigen::MatrixXd> inputs;  // layer-0 input per step, in_dim x batch
  std::vector<LayerTrace> layers;
  std::vector<Eigen::MatrixXd> q;  // attention embeddings per step
  Eigen::MatrixXd beta;            // steps x batch
  Eigen::MatrixXd pooled;          // hidden x batch
};

struct ForwardTrace {
  ModelConfig config;
  int batch = 0;
  std::uint64_t weights_tag = 0;
  std::vector<StreamTrace> streams;
  Eigen::MatrixXd concat;     // (n_streams*hidden) x batch
  Eigen::MatrixXd trunk_pre;  // hidden x batch
  Eigen::MatrixXd trunk;      // relu(trunk_pre)
  Eigen::MatrixXd mu_raw, nu_raw, alpha_raw, diag_raw, lower_raw;  // head outputs
};

struct BatchForward {
  std::vector<MixtureParams> params;  // one per window
  ForwardTrace trace;
};

BatchForward forward_batch(std::span<const Eigen::MatrixXd> windows, const ModelWeights& weights,
                           const ModelConfig& config);

std::pair<MixtureParams, ForwardTrace> forward(const Eigen::MatrixXd& window,
                                               const ModelWeights& weights,
                                               const ModelConfig& config);

// Upstream gradient w.r.t. the raw (pre-activation) head outputs.
struct HeadGradBatch {
  Eigen::MatrixXd mu, nu, alpha, diag, lower;
};
HeadGradBatch zero_head_grad(const ModelConfig& config, int batch);
// scatter one window's unconstrained-mixture gradient into column `col`
void pack_mixture_grad(const MixtureGrad& grad, double scale, int col, HeadGradBatch& out);

// Exact reverse-mode gradient of the scalar loss whose head-output gradient
// is `upstream`, w.r.t. every weight tensor. Throws std::logic_error if the
// trace does not match (weights mutated since forward, wrong config, ...).
TensorMap backward_batch(const ForwardTrace& trace, const HeadGradBatch& upstream,
                         const ModelWeights& weights, const ModelConfig& config);

TensorMap backward(const ForwardTrace& trace, const MixtureGrad& dloss_draw,
                   const ModelWeights& weights, const ModelConfig& config);

std::uint64_t weights_fingerprint(const ModelWeights& weights);

}  // namespace rmdn
