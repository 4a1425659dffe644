#include "rmdn/network.hpp"

#include <cmath>
#include <cstring>

namespace rmdn {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd sigmoid(const MatrixXd& x) {
  return x.unaryExpr([](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
}

std::string gru_name(int stream, int layer, const std::string& part) {
  return "gru.s" + std::to_string(stream) + ".l" + std::to_string(layer) + "." + part;
}
std::string attn_name(int stream, const std::string& part) {
  return "attn.s" + std::to_string(stream) + "." + part;
}
std::string conv_name(int stream, const std::string& part) {
  return "conv.s" + std::to_string(stream) + "." + part;
}

int head_rows(const ModelConfig& cfg, const std::string& head) {
  const int c = cfg.components, p = cfg.input_dim;
  if (head == "mu" || head == "chol_diag") return c * p;
  if (head == "chol_lower") return c * strict_lower_count(p);
  return c;  // alpha, nu
}

}  // namespace

int conv_output_len(int input_len, int kernel, int stride, int padding) {
  const int padded = input_len + 2 * padding;
  if (padded < kernel) throw std::invalid_argument("sequence shorter than the filter");
  return (padded - kernel) / stride + 1;
}

int ModelConfig::stream_len(int s) const {
  int len = seq_len;
  for (int i = 0; i < s; ++i) len = conv_output_len(len, conv_kernel, conv_stride, conv_padding);
  return len;
}

void ModelConfig::validate() const {
  if (input_dim < 1 || hidden < 1 || layers < 1 || components < 1 || seq_len < 1)
    throw std::invalid_argument("model dimensions must be positive");
  if (!(nu_lo < nu_hi) || !(nu_lo > 0.0)) throw std::invalid_argument("need 0 < nu_lo < nu_hi");
  if (conv_kernel < 1 || conv_stride < 1 || conv_padding < 0)
    throw std::invalid_argument("bad convolution geometry");
  if (multires) {
    if (resolutions < 2) throw std::invalid_argument("multires needs at least two resolutions");
    if (seq_len <= conv_kernel)
      throw std::invalid_argument("multires requires seq_len > conv_kernel");
    for (int s = 1; s < resolutions; ++s)
      if (stream_len(s) < 1) throw std::invalid_argument("conv stream collapses to zero length");
  }
}

const MatrixXd& ModelWeights::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("missing weight tensor: " + name);
  return it->second;
}

MatrixXd& ModelWeights::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("missing weight tensor: " + name);
  return it->second;
}

std::vector<TensorShape> expected_shapes(const ModelConfig& cfg) {
  std::vector<TensorShape> shapes;
  const int h = cfg.hidden, p = cfg.input_dim;
  for (int s = 0; s < cfg.n_streams(); ++s) {
    if (s > 0) {
      shapes.push_back({conv_name(s, "filters"), p, cfg.conv_kernel});
      shapes.push_back({conv_name(s, "bias"), p, 1});
    }
    for (int l = 0; l < cfg.layers; ++l) {
      const int in = l == 0 ? p : h;
      for (const std::string gate : {"u", "r", "h"}) {
        shapes.push_back({gru_name(s, l, "W_" + gate), h, h});
        shapes.push_back({gru_name(s, l, "U_" + gate), h, in});
        shapes.push_back({gru_name(s, l, "b_" + gate), h, 1});
      }
    }
    if (cfg.attention) {
      shapes.push_back({attn_name(s, "W_a"), h, h});
      shapes.push_back({attn_name(s, "b_a"), h, 1});
      shapes.push_back({attn_name(s, "w_q"), h, 1});
      shapes.push_back({attn_name(s, "b_q"), 1, 1});
    }
  }
  shapes.push_back({"trunk.W1", h, cfg.n_streams() * h});
  shapes.push_back({"trunk.b1", h, 1});
  std::vector<std::string> heads = {"mu", "alpha", "chol_diag", "chol_lower"};
  if (cfg.family == Family::StudentT) heads.push_back("nu");
  for (const auto& head : heads) {
    shapes.push_back({"head." + head + ".W", head_rows(cfg, head), h});
    shapes.push_back({"head." + head + ".b", head_rows(cfg, head), 1});
  }
  return shapes;
}

void validate_weights(const ModelWeights& weights, const ModelConfig& cfg) {
  const auto shapes = expected_shapes(cfg);
  if (weights.tensors.size() != shapes.size())
    throw std::invalid_argument("weight tensor count does not match the configuration");
  for (const auto& s : shapes) {
    const auto& t = weights.at(s.name);
    if (t.rows() != s.rows || t.cols() != s.cols)
      throw std::invalid_argument("weight tensor has wrong shape: " + s.name);
  }
}

GruLayerView gru_view(const ModelWeights& w, int s, int l) {
  return {&w.at(gru_name(s, l, "W_u")), &w.at(gru_name(s, l, "U_u")), &w.at(gru_name(s, l, "b_u")),
          &w.at(gru_name(s, l, "W_r")), &w.at(gru_name(s, l, "U_r")), &w.at(gru_name(s, l, "b_r")),
          &w.at(gru_name(s, l, "W_h")), &w.at(gru_name(s, l, "U_h")), &w.at(gru_name(s, l, "b_h"))};
}

AttentionView attention_view(const ModelWeights& w, int s) {
  return {&w.at(attn_name(s, "W_a")), &w.at(attn_name(s, "b_a")), &w.at(attn_name(s, "w_q")),
          &w.at(attn_name(s, "b_q"))};
}

VectorXd gru_step(const VectorXd& h_prev, const VectorXd& x_in, const GruLayerView& g) {
  if (g.W_u->cols() != h_prev.size() || g.U_u->cols() != x_in.size())
    throw std::invalid_argument("gru_step: shape mismatch");
  const VectorXd u = sigmoid(*g.W_u * h_prev + *g.U_u * x_in + *g.b_u);
  const VectorXd r = sigmoid(*g.W_r * h_prev + *g.U_r * x_in + *g.b_r);
  const VectorXd htilde = (r.cwiseProduct(*g.W_h * h_prev) + *g.U_h * x_in + *g.b_h).array().tanh();
  return u.cwiseProduct(h_prev) + (VectorXd::Ones(u.size()) - u).cwiseProduct(htilde);
}

AttentionResult attention_pool(const MatrixXd& h_seq, const AttentionView& attn) {
  const auto steps = h_seq.rows();
  if (steps < 1) throw std::invalid_argument("attention_pool: empty sequence");
  VectorXd scores(steps);
  for (Eigen::Index l = 0; l < steps; ++l) {
    const VectorXd q = (*attn.W_a * h_seq.row(l).transpose() + *attn.b_a).array().tanh();
    scores[l] = attn.w_q->col(0).dot(q) + (*attn.b_q)(0, 0);
  }
  AttentionResult res;
  res.beta = simplex_softmax(scores);
  res.pooled = h_seq.transpose() * res.beta;
  return res;
}

VectorXd conv_stream(const VectorXd& x, const VectorXd& filter, int stride, int padding,
                     double bias) {
  const int t = static_cast<int>(x.size());
  const int k = static_cast<int>(filter.size());
  const int out_len = conv_output_len(t, k, stride, padding);
  VectorXd out(out_len);
  for (int j = 0; j < out_len; ++j) {
    double acc = bias;
    for (int i = 0; i < k; ++i) {
      const int idx = j * stride + i - padding;
      if (idx >= 0 && idx < t) acc += filter[i] * x[idx];
    }
    out[j] = acc;
  }
  return out;
}

namespace {

// batched GRU layer over a full sequence
LayerTrace run_gru_layer(const std::vector<MatrixXd>& inputs, const GruLayerView& g, int hidden,
                         int batch) {
  const int steps = static_cast<int>(inputs.size());
  LayerTrace tr;
  tr.h.resize(steps);
  tr.u.resize(steps);
  tr.r.resize(steps);
  tr.htilde.resize(steps);
  tr.wh.resize(steps);
  MatrixXd h_prev = MatrixXd::Zero(hidden, batch);
  for (int t = 0; t < steps; ++t) {
    MatrixXd au = *g.W_u * h_prev + *g.U_u * inputs[t];
    au.colwise() += g.b_u->col(0);
    MatrixXd ar = *g.W_r * h_prev + *g.U_r * inputs[t];
    ar.colwise() += g.b_r->col(0);
    tr.u[t] = sigmoid(au);
    tr.r[t] = sigmoid(ar);
    tr.wh[t] = *g.W_h * h_prev;
    MatrixXd ah = tr.r[t].cwiseProduct(tr.wh[t]) + *g.U_h * inputs[t];
    ah.colwise() += g.b_h->col(0);
    tr.htilde[t] = ah.array().tanh();
    tr.h[t] = tr.u[t].cwiseProduct(h_prev) +
              (MatrixXd::Ones(hidden, batch) - tr.u[t]).cwiseProduct(tr.htilde[t]);
    h_prev = tr.h[t];
  }
  return tr;
}

std::vector<MatrixXd> conv_forward(const std::vector<MatrixXd>& in, const MatrixXd& filters,
                                   const MatrixXd& bias, int stride, int padding) {
  const int in_len = static_cast<int>(in.size());
  const int k = static_cast<int>(filters.cols());
  const int out_len = conv_output_len(in_len, k, stride, padding);
  const auto rows = in.front().rows();
  const auto cols = in.front().cols();
  std::vector<MatrixXd> out(static_cast<std::size_t>(out_len));
  for (int j = 0; j < out_len; ++j) {
    MatrixXd acc = MatrixXd::Zero(rows, cols);
    acc.colwise() += bias.col(0);
    for (int i = 0; i < k; ++i) {
      const int idx = j * stride + i - padding;
      if (idx >= 0 && idx < in_len)
        acc.array() += in[static_cast<std::size_t>(idx)].array().colwise() * filters.col(i).array();
    }
    out[static_cast<std::size_t>(j)] = std::move(acc);
  }
  return out;
}

MatrixXd head_forward(const ModelWeights& w, const std::string& head, const MatrixXd& trunk) {
  MatrixXd raw = w.at("head." + head + ".W") * trunk;
  raw.colwise() += w.at("head." + head + ".b").col(0);
  return raw;
}

}  // namespace

std::uint64_t weights_fingerprint(const ModelWeights& weights) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : weights.tensors) {
    mix(name.data(), name.size());
    const std::int64_t dims[2] = {t.rows(), t.cols()};
    mix(dims, sizeof(dims));
    const double sum = t.sum();
    mix(&sum, sizeof(sum));
    if (t.size() > 0) {
      const double ends[2] = {t(0, 0), t(t.rows() - 1, t.cols() - 1)};
      mix(ends, sizeof(ends));
    }
  }
  return h;
}

BatchForward forward_batch(std::span<const MatrixXd> windows, const ModelWeights& weights,
                           const ModelConfig& cfg) {
  cfg.validate();
  validate_weights(weights, cfg);
  const int batch = static_cast<int>(windows.size());
  if (batch < 1) throw std::invalid_argument("forward_batch: empty batch");
  for (const auto& w : windows)
    if (w.rows() != cfg.seq_len || w.cols() != cfg.input_dim)
      throw std::invalid_argument("window must be seq_len x input_dim");

  const int h = cfg.hidden, p = cfg.input_dim, c = cfg.components;
  BatchForward out;
  ForwardTrace& tr = out.trace;
  tr.config = cfg;
  tr.batch = batch;
  tr.weights_tag = weights_fingerprint(weights);
  tr.streams.resize(static_cast<std::size_t>(cfg.n_streams()));

  for (int s = 0; s < cfg.n_streams(); ++s) {
    StreamTrace& st = tr.streams[static_cast<std::size_t>(s)];
    if (s == 0) {
      st.inputs.resize(static_cast<std::size_t>(cfg.seq_len));
      for (int t = 0; t < cfg.seq_len; ++t) {
        MatrixXd xt(p, batch);
        for (int b = 0; b < batch; ++b) xt.col(b) = windows[static_cast<std::size_t>(b)].row(t);
        st.inputs[static_cast<std::size_t>(t)] = std::move(xt);
      }
    } else {
      st.inputs = conv_forward(tr.streams[static_cast<std::size_t>(s - 1)].inputs,
                               weights.at(conv_name(s, "filters")),
                               weights.at(conv_name(s, "bias")), cfg.conv_stride, cfg.conv_padding);
    }
    const std::vector<MatrixXd>* layer_in = &st.inputs;
    for (int l = 0; l < cfg.layers; ++l) {
      st.layers.push_back(run_gru_layer(*layer_in, gru_view(weights, s, l), h, batch));
      layer_in = &st.layers.back().h;
    }
    const auto& top = st.layers.back().h;
    const int steps = static_cast<int>(top.size());
    if (cfg.attention) {
      const AttentionView attn = attention_view(weights, s);
      st.q.resize(static_cast<std::size_t>(steps));
      MatrixXd scores(steps, batch);
      for (int t = 0; t < steps; ++t) {
        MatrixXd a = *attn.W_a * top[static_cast<std::size_t>(t)];
        a.colwise() += attn.b_a->col(0);
        st.q[static_cast<std::size_t>(t)] = a.array().tanh();
        scores.row(t) = (attn.w_q->col(0).transpose() * st.q[static_cast<std::size_t>(t)]).array() +
                        (*attn.b_q)(0, 0);
      }
      st.beta.resize(steps, batch);
      for (int b = 0; b < batch; ++b) st.beta.col(b) = simplex_softmax(scores.col(b));
      st.pooled = MatrixXd::Zero(h, batch);
      for (int t = 0; t < steps; ++t)
        st.pooled.array() +=
            top[static_cast<std::size_t>(t)].array().rowwise() * st.beta.row(t).array();
    } else {
      st.pooled = top.back();
    }
  }

  tr.concat.resize(cfg.n_streams() * h, batch);
  for (int s = 0; s < cfg.n_streams(); ++s)
    tr.concat.middleRows(s * h, h) = tr.streams[static_cast<std::size_t>(s)].pooled;
  tr.trunk_pre = weights.at("trunk.W1") * tr.concat;
  tr.trunk_pre.colwise() += weights.at("trunk.b1").col(0);
  tr.trunk = tr.trunk_pre.cwiseMax(0.0);

  tr.mu_raw = head_forward(weights, "mu", tr.trunk);
  tr.alpha_raw = head_forward(weights, "alpha", tr.trunk);
  tr.diag_raw = head_forward(weights, "chol_diag", tr.trunk);
  tr.lower_raw = head_forward(weights, "chol_lower", tr.trunk);
  tr.nu_raw = cfg.family == Family::StudentT ? head_forward(weights, "nu", tr.trunk)
                                             : MatrixXd::Zero(0, batch);

  const int scl = strict_lower_count(p);
  out.params.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    RawMixture raw;
    raw.alpha = tr.alpha_raw.col(b);
    raw.components.resize(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) {
      RawComponent& rc = raw.components[static_cast<std::size_t>(i)];
      rc.mu = tr.mu_raw.block(i * p, b, p, 1);
      rc.chol_diag = tr.diag_raw.block(i * p, b, p, 1);
      rc.chol_lower = tr.lower_raw.block(i * scl, b, scl, 1);
      rc.nu = cfg.family == Family::StudentT ? tr.nu_raw(i, b) : 0.0;
    }
    out.params.push_back(constrain_mixture(raw, cfg.family, cfg.nu_bounds()));
  }
  return out;
}

std::pair<MixtureParams, ForwardTrace> forward(const MatrixXd& window, const ModelWeights& weights,
                                               const ModelConfig& cfg) {
  BatchForward bf = forward_batch(std::span<const MatrixXd>(&window, 1), weights, cfg);
  return {std::move(bf.params.front()), std::move(bf.trace)};
}

HeadGradBatch zero_head_grad(const ModelConfig& cfg, int batch) {
  const int c = cfg.components, p = cfg.input_dim;
  HeadGradBatch g;
  g.mu = MatrixXd::Zero(c * p, batch);
  g.alpha = MatrixXd::Zero(c, batch);
  g.diag = MatrixXd::Zero(c * p, batch);
  g.lower = MatrixXd::Zero(c * strict_lower_count(p), batch);
  g.nu = cfg.family == Family::StudentT ? MatrixXd::Zero(c, batch) : MatrixXd::Zero(0, batch);
  return g;
}

void pack_mixture_grad(const MixtureGrad& grad, double scale, int col, HeadGradBatch& out) {
  const int c = static_cast<int>(grad.components.size());
  const int p = static_cast<int>(grad.components.front().mu.size());
  const int scl = strict_lower_count(p);
  out.alpha.col(col) += scale * grad.alpha;
  for (int i = 0; i < c; ++i) {
    const RawComponent& g = grad.components[static_cast<std::size_t>(i)];
    out.mu.block(i * p, col, p, 1) += scale * g.mu;
    out.diag.block(i * p, col, p, 1) += scale * g.chol_diag;
    out.lower.block(i * scl, col, scl, 1) += scale * g.chol_lower;
    if (out.nu.rows() > 0) out.nu(i, col) += scale * g.nu;
  }
}

TensorMap backward_batch(const ForwardTrace& tr, const HeadGradBatch& upstream,
                         const ModelWeights& weights, const ModelConfig& cfg) {
  if (tr.weights_tag != weights_fingerprint(weights))
    throw std::logic_error("backward: trace is stale (weights changed since forward)");
  if (tr.config.n_streams() != cfg.n_streams() || tr.config.hidden != cfg.hidden ||
      tr.config.layers != cfg.layers || tr.config.seq_len != cfg.seq_len ||
      tr.config.input_dim != cfg.input_dim || tr.config.components != cfg.components ||
      tr.config.family != cfg.family || tr.config.attention != cfg.attention)
    throw std::logic_error("backward: trace was produced under a different configuration");
  const int batch = tr.batch;
  const int h = cfg.hidden;
  if (upstream.mu.rows() != tr.mu_raw.rows() || upstream.mu.cols() != batch ||
      upstream.alpha.rows() != tr.alpha_raw.rows() || upstream.diag.rows() != tr.diag_raw.rows() ||
      upstream.lower.rows() != tr.lower_raw.rows() || upstream.nu.rows() != tr.nu_raw.rows())
    throw std::logic_error("backward: upstream gradient shape mismatch");

  TensorMap grads;
  for (const auto& s : expected_shapes(cfg)) grads[s.name] = MatrixXd::Zero(s.rows, s.cols);

  // heads
  MatrixXd dtrunk = MatrixXd::Zero(h, batch);
  auto head_backward = [&](const std::string& head, const MatrixXd& dhead) {
    grads["head." + head + ".W"].noalias() += dhead * tr.trunk.transpose();
    grads["head." + head + ".b"].col(0) += dhead.rowwise().sum();
    dtrunk.noalias() += weights.at("head." + head + ".W").transpose() * dhead;
  };
  head_backward("mu", upstream.mu);
  head_backward("alpha", upstream.alpha);
  head_backward("chol_diag", upstream.diag);
  head_backward("chol_lower", upstream.lower);
  if (cfg.family == Family::StudentT) head_backward("nu", upstream.nu);

  // trunk relu
  const MatrixXd dpre =
      dtrunk.cwiseProduct(tr.trunk_pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
  grads["trunk.W1"].noalias() += dpre * tr.concat.transpose();
  grads["trunk.b1"].col(0) += dpre.rowwise().sum();
  const MatrixXd dconcat = weights.at("trunk.W1").transpose() * dpre;

  // Gradients w.r.t. each stream's layer-0 input sequence. A stream's input
  // feeds both its own GRU and the next stream's convolution, so streams are
  // processed top-down and contributions accumulate.
  std::vector<std::vector<MatrixXd>> dinputs(static_cast<std::size_t>(cfg.n_streams()));
  for (int s = 0; s < cfg.n_streams(); ++s) {
    const auto& in_seq = tr.streams[static_cast<std::size_t>(s)].inputs;
    dinputs[static_cast<std::size_t>(s)].assign(in_seq.size(),
                                                MatrixXd::Zero(in_seq.front().rows(), batch));
  }
  for (int s = cfg.n_streams() - 1; s >= 0; --s) {
    const StreamTrace& st = tr.streams[static_cast<std::size_t>(s)];
    const int steps = static_cast<int>(st.inputs.size());
    const MatrixXd dpooled = dconcat.middleRows(s * h, h);

    std::vector<MatrixXd> dh_ext(static_cast<std::size_t>(steps), MatrixXd::Zero(h, batch));
    if (cfg.attention) {
      const AttentionView attn = attention_view(weights, s);
      const auto& top = st.layers.back().h;
      MatrixXd dbeta(steps, batch);
      for (int t = 0; t < steps; ++t) {
        dh_ext[static_cast<std::size_t>(t)].array() +=
            dpooled.array().rowwise() * st.beta.row(t).array();
        dbeta.row(t) = (top[static_cast<std::size_t>(t)].cwiseProduct(dpooled)).colwise().sum();
      }
      const Eigen::RowVectorXd inner = (st.beta.cwiseProduct(dbeta)).colwise().sum();
      const MatrixXd dscores = st.beta.cwiseProduct(dbeta.rowwise() - inner);
      for (int t = 0; t < steps; ++t) {
        const MatrixXd& q = st.q[static_cast<std::size_t>(t)];
        const MatrixXd dq = attn.w_q->col(0) * dscores.row(t);
        const MatrixXd da = dq.cwiseProduct(MatrixXd::Ones(h, batch) - q.cwiseProduct(q));
        grads[attn_name(s, "W_a")].noalias() += da * top[static_cast<std::size_t>(t)].transpose();
        grads[attn_name(s, "b_a")].col(0) += da.rowwise().sum();
        grads[attn_name(s, "w_q")].col(0) += q * dscores.row(t).transpose();
        grads[attn_name(s, "b_q")](0, 0) += dscores.row(t).sum();
        dh_ext[static_cast<std::size_t>(t)].noalias() += attn.W_a->transpose() * da;
      }
    } else {
      dh_ext.back() += dpooled;
    }

    // backprop through time, top layer down
    for (int l = cfg.layers - 1; l >= 0; --l) {
      const LayerTrace& lt = st.layers[static_cast<std::size_t>(l)];
      const GruLayerView g = gru_view(weights, s, l);
      const std::vector<MatrixXd>& layer_in =
          l == 0 ? st.inputs : st.layers[static_cast<std::size_t>(l - 1)].h;
      std::vector<MatrixXd> dlayer_in(static_cast<std::size_t>(steps));
      MatrixXd& dW_u = grads[gru_name(s, l, "W_u")];
      MatrixXd& dU_u = grads[gru_name(s, l, "U_u")];
      MatrixXd& db_u = grads[gru_name(s, l, "b_u")];
      MatrixXd& dW_r = grads[gru_name(s, l, "W_r")];
      MatrixXd& dU_r = grads[gru_name(s, l, "U_r")];
      MatrixXd& db_r = grads[gru_name(s, l, "b_r")];
      MatrixXd& dW_h = grads[gru_name(s, l, "W_h")];
      MatrixXd& dU_h = grads[gru_name(s, l, "U_h")];
      MatrixXd& db_h = grads[gru_name(s, l, "b_h")];

      MatrixXd dh_next = MatrixXd::Zero(h, batch);
      const MatrixXd ones = MatrixXd::Ones(h, batch);
      for (int t = steps - 1; t >= 0; --t) {
        const MatrixXd dh = dh_ext[static_cast<std::size_t>(t)] + dh_next;
        const MatrixXd h_prev =
            t > 0 ? lt.h[static_cast<std::size_t>(t - 1)] : MatrixXd::Zero(h, batch);
        const MatrixXd& u = lt.u[static_cast<std::size_t>(t)];
        const MatrixXd& r = lt.r[static_cast<std::size_t>(t)];
        const MatrixXd& htil = lt.htilde[static_cast<std::size_t>(t)];
        const MatrixXd& wh = lt.wh[static_cast<std::size_t>(t)];

        const MatrixXd du = dh.cwiseProduct(h_prev - htil);
        const MatrixXd dhtil = dh.cwiseProduct(ones - u);
        MatrixXd dh_prev = dh.cwiseProduct(u);

        const MatrixXd dau = du.cwiseProduct(u).cwiseProduct(ones - u);
        const MatrixXd dah = dhtil.cwiseProduct(ones - htil.cwiseProduct(htil));
        const MatrixXd dr = dah.cwiseProduct(wh);
        const MatrixXd dwh = dah.cwiseProduct(r);
        const MatrixXd dar = dr.cwiseProduct(r).cwiseProduct(ones - r);

        const MatrixXd& x = layer_in[static_cast<std::size_t>(t)];
        dW_u.noalias() += dau * h_prev.transpose();
        dU_u.noalias() += dau * x.transpose();
        db_u.col(0) += dau.rowwise().sum();
        dW_r.noalias() += dar * h_prev.transpose();
        dU_r.noalias() += dar * x.transpose();
        db_r.col(0) += dar.rowwise().sum();
        dW_h.noalias() += dwh * h_prev.transpose();
        dU_h.noalias() += dah * x.transpose();
        db_h.col(0) += dah.rowwise().sum();

        dlayer_in[static_cast<std::size_t>(t)] =
            g.U_u->transpose() * dau + g.U_r->transpose() * dar + g.U_h->transpose() * dah;
        dh_prev.noalias() += g.W_u->transpose() * dau;
        dh_prev.noalias() += g.W_r->transpose() * dar;
        dh_prev.noalias() += g.W_h->transpose() * dwh;
        dh_next = std::move(dh_prev);
      }
      if (l == 0)
        for (int t = 0; t < steps; ++t)
          dinputs[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] +=
              dlayer_in[static_cast<std::size_t>(t)];
      else
        dh_ext = std::move(dlayer_in);
    }

    // conv backward into the previous stream's inputs
    if (s > 0) {
      const auto& in_seq = tr.streams[static_cast<std::size_t>(s - 1)].inputs;
      const int in_len = static_cast<int>(in_seq.size());
      const MatrixXd& filters = weights.at(conv_name(s, "filters"));
      MatrixXd& dfilters = grads[conv_name(s, "filters")];
      MatrixXd& dbias = grads[conv_name(s, "bias")];
      auto& din = dinputs[static_cast<std::size_t>(s - 1)];
      const auto& dout = dinputs[static_cast<std::size_t>(s)];
      for (int j = 0; j < static_cast<int>(dout.size()); ++j) {
        const MatrixXd& dj = dout[static_cast<std::size_t>(j)];
        dbias.col(0) += dj.rowwise().sum();
        for (int i = 0; i < cfg.conv_kernel; ++i) {
          const int idx = j * cfg.conv_stride + i - cfg.conv_padding;
          if (idx < 0 || idx >= in_len) continue;
          dfilters.col(i) += dj.cwiseProduct(in_seq[static_cast<std::size_t>(idx)]).rowwise().sum();
          din[static_cast<std::size_t>(idx)].array() +=
              dj.array().colwise() * filters.col(i).array();
        }
      }
    }
  }
  return grads;
}

TensorMap backward(const ForwardTrace& trace, const MixtureGrad& dloss_draw,
                   const ModelWeights& weights, const ModelConfig& cfg) {
  if (trace.batch != 1) throw std::logic_error("backward: single-window trace expected");
  HeadGradBatch upstream = zero_head_grad(cfg, 1);
  pack_mixture_grad(dloss_draw, 1.0, 0, upstream);
  return backward_batch(trace, upstream, weights, cfg);
}

}  // namespace rmdn
