#pragma once

#include <span>

#include "rmdn/data.hpp"
#include "rmdn/network.hpp"

namespace rmdn {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double lr = 1e-5;
  double weight_decay = 1e-3;  // classic L2, added to the gradient
  double init_scale = 0.1;     // uniform [-0.1, 0.1]
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;       // global max-norm clip; 0 disables
  std::string checkpoint_path;  // final (or last-good) checkpoint when set

  void validate() const;
};

struct Window {
  Eigen::MatrixXd window;  // seq_len x P
  Eigen::VectorXd target;  // the frame right after the window
};

struct WindowSet {
  std::vector<Window> items;
  int skipped_recordings = 0;  // too short to yield a single window
};

// All stride-1 (window, next frame) pairs, never crossing recording
// boundaries; deterministic recording order then time order.
WindowSet make_windows(std::span<const FrameSequence> recordings, int seq_len);

struct AdamState {
  TensorMap m, v;
  std::int64_t step = 0;
};
AdamState init_adam(const ModelConfig& config);

// One bias-corrected Adam update; weight decay enters the gradient before
// the moments. A non-finite gradient rejects the whole step and names the
// offending tensor.
void adam_step(ModelWeights& weights, const TensorMap& grads, AdamState& state,
               const TrainConfig& cfg);

// Every tensor i.i.d. uniform on [-init_scale, init_scale] from a stream
// keyed by (seed, tensor name), so adding tensors never perturbs others.
ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed,
                          double init_scale = 0.1);

struct TrainResult {
  ModelWeights weights;
  std::vector<double> epoch_loss;  // mean NLL per epoch
  bool aborted = false;
  std::string abort_reason;
};

TrainResult train(const ModelConfig& config, const TrainConfig& tcfg, const WindowSet& data);

// loss history CSV: epoch,mean_nll
void write_loss_csv(const std::string& path, std::span<const double> epoch_loss);

}  // namespace rmdn
