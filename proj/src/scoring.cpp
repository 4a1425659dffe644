#include "rmdn/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rmdn/training.hpp"

namespace rmdn {

ScoreReport anomaly_score(const ModelWeights& weights, const ModelConfig& config,
                          const FrameSequence& recording, const std::string& model_id) {
  if (recording.frames() < config.seq_len + 1)
    throw std::invalid_argument("recording too short to score: " + recording.recording_id);
  FrameSequence one = recording;
  WindowSet set = make_windows(std::span<const FrameSequence>(&one, 1), config.seq_len);

  std::vector<Eigen::MatrixXd> windows;
  windows.reserve(set.items.size());
  for (const auto& item : set.items) windows.push_back(item.window);
  BatchForward bf = forward_batch(windows, weights, config);
  double sum = 0.0;
  for (std::size_t i = 0; i < set.items.size(); ++i) sum += nll(set.items[i].target, bf.params[i]);

  ScoreReport report;
  report.recording_id = recording.recording_id;
  report.machine_id = recording.machine_id;
  report.model_id = model_id;
  report.n_windows = static_cast<int>(set.items.size());
  report.score = sum / static_cast<double>(set.items.size());
  report.label = recording.label;
  return report;
}

namespace {

// pairs with pos > neg, exact integer count via a sorted negative list
std::uint64_t strict_wins(const std::vector<double>& sorted_neg, std::span<const double> pos) {
  std::uint64_t wins = 0;
  for (double s : pos)
    wins += static_cast<std::uint64_t>(
        std::lower_bound(sorted_neg.begin(), sorted_neg.end(), s) - sorted_neg.begin());
  return wins;
}

}  // namespace

double auc(std::span<const double> neg, std::span<const double> pos) {
  if (neg.empty() || pos.empty()) throw std::invalid_argument("auc: empty score class");
  std::vector<double> sorted_neg(neg.begin(), neg.end());
  std::sort(sorted_neg.begin(), sorted_neg.end());
  return static_cast<double>(strict_wins(sorted_neg, pos)) /
         (static_cast<double>(neg.size()) * static_cast<double>(pos.size()));
}

double pauc(std::span<const double> neg, std::span<const double> pos, double p) {
  if (neg.empty() || pos.empty()) throw std::invalid_argument("pauc: empty score class");
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("pauc: p must be in (0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(p * static_cast<double>(neg.size())));
  if (k < 1) throw std::invalid_argument("pauc: floor(p * n_neg) must be at least 1");
  // keep the k highest-scoring normals (descending order, then truncate)
  std::vector<double> sorted_neg(neg.begin(), neg.end());
  std::sort(sorted_neg.begin(), sorted_neg.end(), std::greater<>());
  sorted_neg.resize(k);
  std::sort(sorted_neg.begin(), sorted_neg.end());
  return static_cast<double>(strict_wins(sorted_neg, pos)) /
         (static_cast<double>(k) * static_cast<double>(pos.size()));
}

EvalResult evaluate_scores(std::span<const double> neg, std::span<const double> pos, double p) {
  EvalResult result;
  result.auc = auc(neg, pos);
  result.pauc = pauc(neg, pos, p);
  result.p = p;
  result.n_neg = static_cast<int>(neg.size());
  result.n_pos = static_cast<int>(pos.size());
  return result;
}

std::vector<double> standardize(std::span<const double> train_scores,
                                std::span<const double> eval_scores) {
  if (train_scores.empty()) throw std::invalid_argument("standardize: no training scores");
  const double n = static_cast<double>(train_scores.size());
  double mean = 0.0;
  for (double s : train_scores) mean += s;
  mean /= n;
  double var = 0.0;
  for (double s : train_scores) var += (s - mean) * (s - mean);
  var /= n;  // population convention
  if (!(var > 0.0)) throw std::invalid_argument("standardize: zero training-score variance");
  const double std_dev = std::sqrt(var);
  std::vector<double> out;
  out.reserve(eval_scores.size());
  for (double s : eval_scores) out.push_back((s - mean) / std_dev);
  return out;
}

EnsembleMode ensemble_mode_from_string(const std::string& s) {
  if (s == "mean") return EnsembleMode::Mean;
  if (s == "max") return EnsembleMode::Max;
  throw ParseError("unknown ensemble mode: " + s);
}

std::vector<ScoreReport> ensemble(const std::vector<std::vector<ScoreReport>>& models,
                                  EnsembleMode mode, const std::string& model_id) {
  if (models.empty()) throw std::invalid_argument("ensemble: no score lists");
  const std::size_t n = models.front().size();
  for (const auto& list : models)
    if (list.size() != n) throw std::invalid_argument("ensemble: score lists differ in length");
  std::vector<ScoreReport> out = models.front();
  for (auto& r : out) r.model_id = model_id;
  for (std::size_t k = 1; k < models.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const ScoreReport& r = models[k][i];
      if (r.recording_id != out[i].recording_id)
        throw std::invalid_argument("ensemble: misaligned recording ids at index " +
                                    std::to_string(i));
      if (mode == EnsembleMode::Mean)
        out[i].score += r.score;
      else
        out[i].score = std::max(out[i].score, r.score);
    }
  }
  if (mode == EnsembleMode::Mean)
    for (auto& r : out) r.score /= static_cast<double>(models.size());
  return out;
}

ContaminationResult inject_noise_bursts(std::span<const FrameSequence> data, double fraction,
                                        double sigma2, std::uint64_t seed, double mean_burst_len) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("contamination fraction must be in [0, 1]");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("contamination variance must be positive");
  if (!(mean_burst_len >= 1.0)) throw std::invalid_argument("mean burst length must be >= 1");

  ContaminationResult result;
  result.data.assign(data.begin(), data.end());
  std::int64_t total = 0;
  for (const auto& rec : data) {
    result.mask.emplace_back(static_cast<std::size_t>(rec.frames()), 0);
    total += rec.frames();
  }
  const auto budget = static_cast<std::int64_t>(std::floor(fraction * static_cast<double>(total)));
  if (budget == 0) return result;

  Rng rng = named_stream(seed, "contaminate");
  const double sigma = std::sqrt(sigma2);
  const double q = 1.0 - 1.0 / mean_burst_len;  // geometric continuation probability
  std::vector<std::int64_t> offsets(data.size() + 1, 0);
  for (std::size_t i = 0; i < data.size(); ++i) offsets[i + 1] = offsets[i] + data[i].frames();

  while (result.n_contaminated < budget) {
    const auto g = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(total)));
    const auto rec_idx = static_cast<std::size_t>(
        std::upper_bound(offsets.begin(), offsets.end(), g) - offsets.begin() - 1);
    int t = static_cast<int>(g - offsets[rec_idx]);
    int len = 1;
    while (rng.next_unit() < q) ++len;

    FrameSequence& rec = result.data[rec_idx];
    auto& mask = result.mask[rec_idx];
    for (int i = 0; i < len && t + i < rec.frames() && result.n_contaminated < budget; ++i) {
      auto& flag = mask[static_cast<std::size_t>(t + i)];
      if (flag) continue;
      flag = 1;
      for (int d = 0; d < rec.dims(); ++d) rec.values(t + i, d) += sigma * rng.normal();
      result.n_contaminated += 1;
    }
  }
  return result;
}

ArBaseline fit_linear_ar(std::span<const FrameSequence> train, int context) {
  if (context < 1) throw std::invalid_argument("linear AR context must be >= 1");
  if (train.empty()) throw std::invalid_argument("linear AR: no training data");
  const int p = train.front().dims();
  const int d = context * p;

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(d, p);
  std::int64_t rows = 0;
  Eigen::VectorXd x(d);
  for (const auto& rec : train) {
    if (rec.dims() != p) throw std::invalid_argument("recordings disagree on dimension");
    for (int t = context - 1; t + 1 < rec.frames(); ++t) {
      // X(t) stacks the lag vector of every dimension, dimension-major
      for (int dim = 0; dim < p; ++dim)
        for (int lag = 0; lag < context; ++lag) x[dim * context + lag] = rec.values(t - lag, dim);
      gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
      cross.noalias() += x * rec.values.row(t + 1);
      rows += 1;
    }
  }
  if (rows < 1) throw std::invalid_argument("linear AR: not enough frames for the regression");
  gram = gram.selfadjointView<Eigen::Lower>();

  ArBaseline model;
  model.context = context;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const double pivot_floor = 1e-10 * std::max(1.0, gram.diagonal().maxCoeff());
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() < pivot_floor) {
    // rank-deficient normal equations; stabilize with a ridge jitter
    model.ridge_applied = true;
    ldlt.compute(gram + 1e-8 * Eigen::MatrixXd::Identity(d, d));
  }
  model.weights = ldlt.solve(cross);
  return model;
}

double ar_innovation_score(const ArBaseline& model, const FrameSequence& recording) {
  const int p = recording.dims();
  const int context = model.context;
  if (model.weights.rows() != context * p)
    throw std::invalid_argument("AR model dimension does not match recording");
  if (recording.frames() < context + 1)
    throw std::invalid_argument("recording too short for the AR context");
  Eigen::VectorXd x(context * p);
  double acc = 0.0;
  int count = 0;
  for (int t = context - 1; t + 1 < recording.frames(); ++t) {
    for (int dim = 0; dim < p; ++dim)
      for (int lag = 0; lag < context; ++lag)
        x[dim * context + lag] = recording.values(t - lag, dim);
    const Eigen::VectorXd innovation =
        recording.values.row(t + 1).transpose() - model.weights.transpose() * x;
    acc += innovation.squaredNorm();
    count += 1;
  }
  return acc / static_cast<double>(count);
}

namespace {

std::vector<ComponentParams> gmm_cholesky(const GmmModel& model) {
  std::vector<ComponentParams> comps;
  comps.reserve(model.means.size());
  for (std::size_t k = 0; k < model.means.size(); ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(model.covariances[k]);
    if (llt.info() != Eigen::Success)
      throw NumericalError("GMM covariance is not positive definite");
    comps.push_back({model.means[k], llt.matrixL(), 0.0});
  }
  return comps;
}

}  // namespace

GmmFitResult fit_gmm_em(const Eigen::MatrixXd& frames, int components, std::uint64_t seed,
                        int max_iters, double rel_tol) {
  const auto n = frames.rows();
  const auto p = frames.cols();
  if (components < 1) throw std::invalid_argument("GMM needs at least one component");
  if (n < components) throw std::invalid_argument("GMM: fewer frames than components");

  Rng rng = named_stream(seed, "gmm.init");
  const Eigen::RowVectorXd data_mean = frames.colwise().mean();
  Eigen::MatrixXd centered = frames.rowwise() - data_mean;
  Eigen::MatrixXd data_cov = centered.transpose() * centered / static_cast<double>(n);
  data_cov += 1e-9 * Eigen::MatrixXd::Identity(p, p);

  GmmFitResult fit;
  GmmModel& model = fit.model;
  model.weights = Eigen::VectorXd::Constant(components, 1.0 / components);
  model.covariances.assign(static_cast<std::size_t>(components), data_cov);

  // k-means++-style seeding
  model.means.push_back(frames.row(static_cast<Eigen::Index>(rng.next_below(n))).transpose());
  Eigen::VectorXd dist2 = (centered.rowwise() + (data_mean - model.means[0].transpose()))
                              .rowwise()
                              .squaredNorm();
  while (static_cast<int>(model.means.size()) < components) {
    const double total = dist2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.next_unit() * total;
      for (; pick + 1 < n; ++pick) {
        target -= dist2[pick];
        if (target <= 0.0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.next_below(n));
    }
    model.means.push_back(frames.row(pick).transpose());
    for (Eigen::Index i = 0; i < n; ++i)
      dist2[i] = std::min(dist2[i],
                          (frames.row(i).transpose() - model.means.back()).squaredNorm());
  }

  Eigen::MatrixXd resp(n, components);
  for (int iter = 0; iter < max_iters; ++iter) {
    // E-step in the log domain
    std::vector<ComponentParams> comps = gmm_cholesky(model);
    double loglik = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd logs(components);
      for (int k = 0; k < components; ++k)
        logs[k] = std::log(model.weights[k]) +
                  gaussian_logpdf(frames.row(i).transpose(), comps[static_cast<std::size_t>(k)]);
      const double mx = logs.maxCoeff();
      const double lse = mx + std::log((logs.array() - mx).exp().sum());
      resp.row(i) = (logs.array() - lse).exp();
      loglik += lse;
    }
    fit.loglik.push_back(loglik);
    if (fit.loglik.size() > 1) {
      const double prev = fit.loglik[fit.loglik.size() - 2];
      if (std::abs(loglik - prev) <= rel_tol * (1.0 + std::abs(prev))) {
        fit.converged = true;
        break;
      }
    }

    // M-step
    for (int k = 0; k < components; ++k) {
      const double nk = resp.col(k).sum();
      if (nk < 1e-12) {
        model.means[static_cast<std::size_t>(k)] =
            frames.row(static_cast<Eigen::Index>(rng.next_below(n))).transpose();
        model.covariances[static_cast<std::size_t>(k)] = data_cov;
        fit.reseeded += 1;
        continue;
      }
      model.weights[k] = nk / static_cast<double>(n);
      const Eigen::VectorXd mean = (frames.transpose() * resp.col(k)) / nk;
      Eigen::MatrixXd diff = frames.rowwise() - mean.transpose();
      Eigen::MatrixXd cov =
          diff.transpose() * resp.col(k).asDiagonal() * diff / nk;
      // component collapse: re-seed rather than regularize
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      const double logdet =
          llt.info() == Eigen::Success
              ? 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum()
              : -std::numeric_limits<double>::infinity();
      if (llt.info() != Eigen::Success || logdet < std::log(1e-300)) {
        model.means[static_cast<std::size_t>(k)] =
            frames.row(static_cast<Eigen::Index>(rng.next_below(n))).transpose();
        model.covariances[static_cast<std::size_t>(k)] = data_cov;
        fit.reseeded += 1;
        continue;
      }
      model.means[static_cast<std::size_t>(k)] = mean;
      model.covariances[static_cast<std::size_t>(k)] = std::move(cov);
    }
    model.weights /= model.weights.sum();
  }
  return fit;
}

double gmm_logpdf(const GmmModel& model, const Eigen::VectorXd& x) {
  MixtureParams params;
  params.family = Family::Gaussian;
  params.alpha = model.weights;
  params.components = gmm_cholesky(model);
  return mixture_logpdf(x, params);
}

double gmm_mean_nll(const GmmModel& model, const FrameSequence& recording) {
  MixtureParams params;
  params.family = Family::Gaussian;
  params.alpha = model.weights;
  params.components = gmm_cholesky(model);
  double acc = 0.0;
  for (int t = 0; t < recording.frames(); ++t)
    acc -= mixture_logpdf(recording.values.row(t).transpose(), params);
  return acc / static_cast<double>(recording.frames());
}

void save_score_csv(const std::string& path, std::span<const ScoreReport> scores) {
  std::ostringstream out;
  out << "recording_id,machine_id,model_id,score,label\n";
  for (const auto& s : scores)
    out << s.recording_id << "," << s.machine_id << "," << s.model_id << ","
        << format_full(s.score) << "," << to_string(s.label) << "\n";
  write_file(path, out.str());
}

std::vector<ScoreReport> load_score_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorruptFileError("cannot open score file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "recording_id,machine_id,model_id,score,label")
    throw ParseError("bad score CSV header: " + path);
  std::vector<ScoreReport> scores;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::istringstream ss(line);
    std::string rec, machine, model, score_text, label_text;
    if (!std::getline(ss, rec, ',') || !std::getline(ss, machine, ',') ||
        !std::getline(ss, model, ',') || !std::getline(ss, score_text, ',') ||
        !std::getline(ss, label_text))
      throw ParseError("ragged score CSV at row " + std::to_string(row));
    ScoreReport report;
    report.recording_id = rec;
    report.machine_id = machine;
    report.model_id = model;
    try {
      report.score = std::stod(score_text);
    } catch (const std::exception&) {
      throw ParseError("non-numeric score at row " + std::to_string(row));
    }
    report.label = label_from_string(label_text);
    scores.push_back(std::move(report));
  }
  return scores;
}

void save_eval_csv(const std::string& path, std::span<const EvalRow> rows) {
  std::ostringstream out;
  out << "machine_id,model_id,auc,pauc,p,n_neg,n_pos\n";
  for (const auto& r : rows)
    out << r.machine_id << "," << r.model_id << "," << format_full(r.result.auc) << ","
        << format_full(r.result.pauc) << "," << format_full(r.result.p) << "," << r.result.n_neg
        << "," << r.result.n_pos << "\n";
  write_file(path, out.str());
}

}  // namespace rmdn
