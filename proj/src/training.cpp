#include "rmdn/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rmdn/checkpoint.hpp"

namespace rmdn {

void TrainConfig::validate() const {
  // lr = 0 is allowed; it must leave the initialization untouched
  if (lr < 0.0 || weight_decay < 0.0 || clip_norm < 0.0)
    throw std::invalid_argument("negative training rate or decay");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0))
    throw std::invalid_argument("bad Adam hyperparameters");
}

WindowSet make_windows(std::span<const FrameSequence> recordings, int seq_len) {
  if (seq_len < 1) throw std::invalid_argument("seq_len must be positive");
  WindowSet set;
  for (const auto& rec : recordings) {
    const int t_len = rec.frames();
    if (t_len < seq_len + 1) {
      set.skipped_recordings += 1;
      continue;
    }
    for (int t = 0; t + seq_len < t_len; ++t)
      set.items.push_back({rec.values.middleRows(t, seq_len), rec.values.row(t + seq_len)});
  }
  return set;
}

AdamState init_adam(const ModelConfig& config) {
  AdamState state;
  for (const auto& s : expected_shapes(config)) {
    state.m[s.name] = Eigen::MatrixXd::Zero(s.rows, s.cols);
    state.v[s.name] = Eigen::MatrixXd::Zero(s.rows, s.cols);
  }
  return state;
}

void adam_step(ModelWeights& weights, const TensorMap& grads, AdamState& state,
               const TrainConfig& cfg) {
  cfg.validate();
  if (grads.size() != weights.tensors.size())
    throw std::invalid_argument("gradient tensor set does not match the weights");

  // validate and assemble the decayed gradient before touching any state,
  // so a rejected step leaves weights and moments untouched
  TensorMap effective;
  for (const auto& [name, w] : weights.tensors) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("missing gradient for tensor: " + name);
    if (it->second.rows() != w.rows() || it->second.cols() != w.cols())
      throw std::invalid_argument("gradient shape mismatch for tensor: " + name);
    Eigen::MatrixXd g = it->second + cfg.weight_decay * w;
    if (!g.allFinite()) throw NumericalError("non-finite gradient for tensor: " + name);
    effective[name] = std::move(g);
  }
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : effective) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm)
      for (auto& [name, g] : effective) g *= cfg.clip_norm / norm;
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double m_corr = 1.0 - std::pow(cfg.beta1, t);
  const double v_corr = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, g] : effective) {
    Eigen::MatrixXd& m = state.m.at(name);
    Eigen::MatrixXd& v = state.v.at(name);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    weights.at(name).array() -=
        cfg.lr * (m.array() / m_corr) / ((v.array() / v_corr).sqrt() + cfg.eps);
  }
}

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed, double init_scale) {
  ModelWeights weights;
  for (const auto& s : expected_shapes(config)) {
    Rng rng = named_stream(seed, "init." + s.name);
    Eigen::MatrixXd t(s.rows, s.cols);
    for (int i = 0; i < s.rows; ++i)
      for (int j = 0; j < s.cols; ++j) t(i, j) = rng.uniform(-init_scale, init_scale);
    weights.tensors[s.name] = std::move(t);
  }
  return weights;
}

TrainResult train(const ModelConfig& config, const TrainConfig& tcfg, const WindowSet& data) {
  config.validate();
  tcfg.validate();
  if (data.items.empty()) throw std::invalid_argument("train: empty window set");
  for (const auto& item : data.items)
    if (item.window.rows() != config.seq_len || item.window.cols() != config.input_dim ||
        item.target.size() != config.input_dim)
      throw std::invalid_argument("train: window shape does not match the model");

  TrainResult result;
  result.weights = init_weights(config, tcfg.seed, tcfg.init_scale);
  AdamState adam = init_adam(config);
  Rng shuffle_rng = named_stream(tcfg.seed, "train.shuffle");

  const std::size_t n = data.items.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < tcfg.epochs && !result.aborted; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n && !result.aborted; start += tcfg.batch_size) {
      const std::size_t b = std::min<std::size_t>(tcfg.batch_size, n - start);
      std::vector<Eigen::MatrixXd> windows(b);
      for (std::size_t i = 0; i < b; ++i) windows[i] = data.items[order[start + i]].window;

      BatchForward bf = forward_batch(windows, result.weights, config);
      HeadGradBatch up = zero_head_grad(config, static_cast<int>(b));
      double batch_sum = 0.0;
      bool finite = true;
      for (std::size_t i = 0; i < b && finite; ++i) {
        const Eigen::VectorXd& y = data.items[order[start + i]].target;
        const double value = nll(y, bf.params[i]);
        if (!std::isfinite(value)) {
          finite = false;
          break;
        }
        batch_sum += value;
        pack_mixture_grad(grad_logpdf(y, bf.params[i], config.nu_bounds()),
                          -1.0 / static_cast<double>(b), static_cast<int>(i), up);
      }
      if (!finite) {
        // weights have not been updated for this batch; they are the
        // last-good state
        result.aborted = true;
        result.abort_reason = "non-finite loss in epoch " + std::to_string(epoch + 1);
        break;
      }
      loss_sum += batch_sum;
      try {
        TensorMap grads = backward_batch(bf.trace, up, result.weights, config);
        adam_step(result.weights, grads, adam, tcfg);
      } catch (const NumericalError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
        break;
      }
    }
    if (!result.aborted)
      result.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }

  if (!tcfg.checkpoint_path.empty())
    save_checkpoint(tcfg.checkpoint_path, config, result.weights);
  return result;
}

void write_loss_csv(const std::string& path, std::span<const double> epoch_loss) {
  std::ostringstream out;
  out << "epoch,mean_nll\n";
  for (std::size_t i = 0; i < epoch_loss.size(); ++i)
    out << (i + 1) << "," << format_full(epoch_loss[i]) << "\n";
  write_file(path, out.str());
}

}  // namespace rmdn
