#pragma once

#include <span>

#include "rmdn/data.hpp"
#include "rmdn/network.hpp"

namespace rmdn {

struct ScoreReport {
  std::string recording_id;
  std::string machine_id;
  std::string model_id;
  double score = 0.0;  // higher = more anomalous
  int n_windows = 0;
  Label label = Label::Unknown;
};

// Mean NLL over all stride-1 windows of the recording.
ScoreReport anomaly_score(const ModelWeights& weights, const ModelConfig& config,
                          const FrameSequence& recording, const std::string& model_id);

// Pairwise-comparison definitions with H(0) = 0 (ties score zero); the
// sort-based implementation equals the double loop exactly.
double auc(std::span<const double> neg, std::span<const double> pos);
double pauc(std::span<const double> neg, std::span<const double> pos, double p);

struct EvalResult {
  double auc = 0.0;
  double pauc = 0.0;
  double p = 0.0;
  int n_neg = 0;
  int n_pos = 0;
};
EvalResult evaluate_scores(std::span<const double> neg, std::span<const double> pos, double p);

// Zero mean / unit variance under the training-score statistics
// (population standard deviation).
std::vector<double> standardize(std::span<const double> train_scores,
                                std::span<const double> eval_scores);

enum class EnsembleMode { Mean, Max };
EnsembleMode ensemble_mode_from_string(const std::string& s);

// Element-wise mean or max over score lists aligned by recording id.
std::vector<ScoreReport> ensemble(const std::vector<std::vector<ScoreReport>>& models,
                                  EnsembleMode mode, const std::string& model_id);

// Contaminates floor(fraction * total_frames) distinct frames, grouped
// into bursts of geometric mean length, adding i.i.d. N(0, sigma2) to every
// feature of a selected frame.
struct ContaminationResult {
  std::vector<FrameSequence> data;
  std::vector<std::vector<std::uint8_t>> mask;  // per recording, per frame
  std::int64_t n_contaminated = 0;
};
ContaminationResult inject_noise_bursts(std::span<const FrameSequence> data, double fraction,
                                        double sigma2, std::uint64_t seed,
                                        double mean_burst_len = 5.0);

// Least-squares linear predictor x(t+1) ~ W^T X(t) over a lag-L context;
// the anomaly score is the mean squared innovation energy.
struct ArBaseline {
  Eigen::MatrixXd weights;  // (L*P) x P
  int context = 1;
  bool ridge_applied = false;
};
ArBaseline fit_linear_ar(std::span<const FrameSequence> train, int context);
double ar_innovation_score(const ArBaseline& model, const FrameSequence& recording);

// Full-covariance GMM fitted by EM with k-means++-style seeding.
struct GmmModel {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
};
struct GmmFitResult {
  GmmModel model;
  std::vector<double> loglik;  // per-iteration total log-likelihood
  int reseeded = 0;
  bool converged = false;
};
GmmFitResult fit_gmm_em(const Eigen::MatrixXd& frames /* N x P */, int components,
                        std::uint64_t seed, int max_iters = 200, double rel_tol = 1e-6);
double gmm_logpdf(const GmmModel& model, const Eigen::VectorXd& x);
double gmm_mean_nll(const GmmModel& model, const FrameSequence& recording);

// score table CSV: recording_id,machine_id,model_id,score,label
void save_score_csv(const std::string& path, std::span<const ScoreReport> scores);
std::vector<ScoreReport> load_score_csv(const std::string& path);

// eval report CSV: machine_id,model_id,auc,pauc,p,n_neg,n_pos
struct EvalRow {
  std::string machine_id;
  std::string model_id;
  EvalResult result;
};
void save_eval_csv(const std::string& path, std::span<const EvalRow> rows);

}  // namespace rmdn
