#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "rmdn/common.hpp"
#include "rmdn/scoring.hpp"
#include "rmdn/training.hpp"

using namespace rmdn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_SUITE_BEGIN("scoring");

namespace {

// Literal double loop over all (normal, anomalous) pairs, the oracle for
// the sort-based implementation.
double auc_double_loop(std::span<const double> neg, std::span<const double> pos) {
  std::uint64_t wins = 0;
  for (double n : neg)
    for (double p : pos)
      if (p - n > 0.0) ++wins;
  return static_cast<double>(wins) / (static_cast<double>(neg.size()) * static_cast<double>(pos.size()));
}

double pauc_double_loop(std::vector<double> neg, std::span<const double> pos, double p) {
  std::sort(neg.begin(), neg.end(), std::greater<>());
  const auto k = static_cast<std::size_t>(std::floor(p * static_cast<double>(neg.size())));
  neg.resize(k);
  std::uint64_t wins = 0;
  for (double n : neg)
    for (double q : pos)
      if (q - n > 0.0) ++wins;
  return static_cast<double>(wins) / (static_cast<double>(k) * static_cast<double>(pos.size()));
}

std::vector<FrameSequence> synth_train(int n, int frames, int dims, std::uint64_t seed) {
  SynthSpec spec;
  spec.dims = dims;
  spec.frames = frames;
  spec.n_normal = n;
  spec.seed = seed;
  return generate(spec).normal;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("rmdn_scoring_" + std::to_string(Rng(::getpid() + 2).next_u64()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("anomaly_score of a minimal recording is the single-window NLL") {
  ModelConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = 4;
  cfg.layers = 2;
  cfg.seq_len = 12;
  cfg.components = 2;
  cfg.multires = false;
  ModelWeights w = init_weights(cfg, 3);
  Rng rng(4);
  FrameSequence rec;
  rec.values.resize(cfg.seq_len + 1, cfg.input_dim);
  for (int t = 0; t <= cfg.seq_len; ++t)
    for (int d = 0; d < cfg.input_dim; ++d) rec.values(t, d) = rng.uniform(-1, 1);
  rec.recording_id = "r0";
  rec.machine_id = "m00";
  rec.label = Label::Normal;

  ScoreReport report = anomaly_score(w, cfg, rec, "model");
  CHECK(report.n_windows == 1);
  auto [params, trace] = forward(rec.values.topRows(cfg.seq_len), w, cfg);
  CHECK(report.score ==
        doctest::Approx(nll(rec.values.row(cfg.seq_len).transpose(), params)).epsilon(1e-12));
  CHECK(report.recording_id == "r0");
  CHECK(report.machine_id == "m00");
  CHECK(report.model_id == "model");
  CHECK(report.label == Label::Normal);

  FrameSequence tiny = rec;
  tiny.values = rec.values.topRows(cfg.seq_len);
  CHECK_THROWS_AS(anomaly_score(w, cfg, tiny, "model"), std::invalid_argument);
}

TEST_CASE("anomaly_score is the mean over window NLLs") {
  ModelConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = 4;
  cfg.layers = 1;
  cfg.seq_len = 10;
  cfg.components = 1;
  cfg.multires = false;
  ModelWeights w = init_weights(cfg, 5);
  Rng rng(6);
  FrameSequence rec;
  rec.values.resize(cfg.seq_len + 6, cfg.input_dim);
  for (int t = 0; t < rec.frames(); ++t)
    for (int d = 0; d < cfg.input_dim; ++d) rec.values(t, d) = rng.uniform(-1, 1);
  ScoreReport report = anomaly_score(w, cfg, rec, "m");
  CHECK(report.n_windows == 6);
  double acc = 0.0;
  for (int t = 0; t < 6; ++t) {
    auto [params, trace] = forward(rec.values.middleRows(t, cfg.seq_len), w, cfg);
    acc += nll(rec.values.row(t + cfg.seq_len).transpose(), params);
  }
  CHECK(report.score == doctest::Approx(acc / 6.0).epsilon(1e-12));
}

TEST_CASE("planted anomalies raise the score of an otherwise identical recording") {
  ModelConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = 16;
  cfg.layers = 2;
  cfg.seq_len = 20;
  cfg.components = 2;
  cfg.multires = false;

  SynthSpec base;
  base.dims = 3;
  base.frames = 60;
  base.n_normal = 20;
  base.noise_std = {0.1};
  base.seed = 77;
  std::vector<FrameSequence> train_recs = generate(base).normal;
  const ScalerRecord scaler = fit_scaler(train_recs);
  TrainConfig tcfg;
  tcfg.epochs = 8;
  tcfg.batch_size = 64;
  tcfg.lr = 3e-3;
  const TrainResult fit =
      train(cfg, tcfg, make_windows(apply_scaler(scaler, train_recs), cfg.seq_len));
  REQUIRE(!fit.aborted);

  // magnitude 0 yields the exact clean copy of each anomalous recording
  // (identical generator draws), so the pair isolates the planted segment
  int raised = 0;
  for (int seed = 0; seed < 10; ++seed) {
    SynthSpec dirty = base;
    dirty.n_normal = 0;
    dirty.n_anomalous = 1;
    dirty.seed = 500 + static_cast<std::uint64_t>(seed);
    dirty.anomaly_magnitude = 0.8;
    SynthSpec clean = dirty;
    clean.anomaly_magnitude = 0.0;
    const FrameSequence rec_dirty = generate(dirty).anomalous.front();
    const FrameSequence rec_clean = generate(clean).anomalous.front();
    const double s_dirty =
        anomaly_score(fit.weights, cfg, apply_scaler(scaler, rec_dirty), "m").score;
    const double s_clean =
        anomaly_score(fit.weights, cfg, apply_scaler(scaler, rec_clean), "m").score;
    raised += s_dirty > s_clean ? 1 : 0;
  }
  CHECK(raised >= 9);
}

TEST_CASE("auc pinned examples") {
  const std::vector<double> neg1 = {1, 2}, pos1 = {3, 4};
  CHECK(auc(neg1, pos1) == 1.0);
  const std::vector<double> neg2 = {3, 4}, pos2 = {1, 2};
  CHECK(auc(neg2, pos2) == 0.0);
  const std::vector<double> neg3 = {1, 2, 3}, pos3 = {2, 3, 4};
  CHECK(auc(neg3, pos3) == doctest::Approx(6.0 / 9.0));  // ties score zero
  CHECK_THROWS_AS(auc({}, pos1), std::invalid_argument);
}

TEST_CASE("pauc pinned examples and p = 1 identity") {
  const std::vector<double> neg1 = {9, 1, 1}, pos1 = {5, 5};
  CHECK(pauc(neg1, pos1, 0.34) == 0.0);  // only the top normal score survives
  const std::vector<double> neg2 = {0, 0, 0, 8}, pos2 = {9, 9};
  CHECK(pauc(neg2, pos2, 0.25) == 1.0);
  CHECK_THROWS_AS(pauc(neg1, pos1, 0.1), std::invalid_argument);  // floor(p N) = 0

  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> neg, pos;
    for (std::size_t i = rng.next_below(30) + 1; i > 0; --i)
      neg.push_back(static_cast<double>(rng.next_below(10)));
    for (std::size_t i = rng.next_below(30) + 1; i > 0; --i)
      pos.push_back(static_cast<double>(rng.next_below(10)));
    CHECK(pauc(neg, pos, 1.0) == auc(neg, pos));
  }
}

TEST_CASE("sort-based metrics equal the double-loop definition on 200 cases") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> neg, pos;
    const auto n_neg = rng.next_below(50) + 1, n_pos = rng.next_below(50) + 1;
    for (std::size_t i = 0; i < n_neg; ++i)
      neg.push_back(static_cast<double>(rng.next_below(12)) * 0.5);  // plenty of ties
    for (std::size_t i = 0; i < n_pos; ++i)
      pos.push_back(static_cast<double>(rng.next_below(12)) * 0.5);
    CHECK(auc(neg, pos) == auc_double_loop(neg, pos));
    const double p = rng.uniform(1.0 / static_cast<double>(neg.size()), 1.0);
    if (static_cast<std::size_t>(std::floor(p * static_cast<double>(neg.size()))) >= 1)
      CHECK(pauc(neg, pos, p) == pauc_double_loop(neg, pos, p));
  }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
  Rng rng(9);
  std::vector<double> neg, pos;
  for (int i = 0; i < 25; ++i) neg.push_back(rng.uniform(-3, 3));
  for (int i = 0; i < 19; ++i) pos.push_back(rng.uniform(-2, 4));
  const double base = auc(neg, pos);
  auto apply = [](std::vector<double> v, auto f) {
    for (double& x : v) x = f(x);
    return v;
  };
  auto expf = [](double x) { return std::exp(x); };
  auto aff = [](double x) { return 2.5 * x + 11.0; };
  CHECK(auc(apply(neg, expf), apply(pos, expf)) == base);
  CHECK(auc(apply(neg, aff), apply(pos, aff)) == base);
}

TEST_CASE("standardize: pinned values and moments") {
  const std::vector<double> train = {0.0, 2.0};
  CHECK(standardize(train, std::vector<double>{1.0}) == std::vector<double>{0.0});
  CHECK(standardize(train, std::vector<double>{3.0}) == std::vector<double>{2.0});

  Rng rng(10);
  std::vector<double> scores;
  for (int i = 0; i < 500; ++i) scores.push_back(rng.uniform(3, 9));
  std::vector<double> z = standardize(scores, scores);
  double mean = 0.0, var = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(z.size());
  for (double v : z) var += (v - mean) * (v - mean);
  var /= static_cast<double>(z.size());
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-9);

  CHECK_THROWS_AS(standardize(std::vector<double>{1.0, 1.0}, scores), std::invalid_argument);
}

TEST_CASE("ensemble combines aligned score lists") {
  auto mk = [](std::vector<double> scores) {
    std::vector<ScoreReport> out;
    for (std::size_t i = 0; i < scores.size(); ++i)
      out.push_back({"rec" + std::to_string(i), "m00", "model", scores[i], 1, Label::Normal});
    return out;
  };
  const std::vector<std::vector<ScoreReport>> one = {mk({1, 3})};
  auto same = ensemble(one, EnsembleMode::Mean, "ens");
  CHECK(same[0].score == 1.0);
  CHECK(same[1].score == 3.0);

  const std::vector<std::vector<ScoreReport>> two = {mk({1, 3}), mk({3, 1})};
  auto mean = ensemble(two, EnsembleMode::Mean, "ens");
  CHECK(mean[0].score == 2.0);
  CHECK(mean[1].score == 2.0);
  auto mx = ensemble(two, EnsembleMode::Max, "ens");
  CHECK(mx[0].score == 3.0);
  CHECK(mx[1].score == 3.0);
  CHECK(mx[0].model_id == "ens");

  auto misaligned = mk({1, 3});
  std::swap(misaligned[0].recording_id, misaligned[1].recording_id);
  CHECK_THROWS_AS(ensemble({mk({1, 3}), misaligned}, EnsembleMode::Mean, "ens"),
                  std::invalid_argument);
}

TEST_CASE("standardize + mean ensemble ignores per-model affine rescaling") {
  Rng rng(11);
  std::vector<double> train_a, train_b, eval_a, eval_b;
  for (int i = 0; i < 60; ++i) {
    train_a.push_back(rng.uniform(0, 1));
    train_b.push_back(rng.uniform(5, 9));
  }
  for (int i = 0; i < 25; ++i) {
    eval_a.push_back(rng.uniform(0, 2));
    eval_b.push_back(rng.uniform(5, 10));
  }
  auto combine = [&](const std::vector<double>& ta, const std::vector<double>& ea,
                     const std::vector<double>& tb, const std::vector<double>& eb) {
    std::vector<double> za = standardize(ta, ea), zb = standardize(tb, eb), out;
    for (std::size_t i = 0; i < za.size(); ++i) out.push_back(0.5 * (za[i] + zb[i]));
    return out;
  };
  const auto base = combine(train_a, eval_a, train_b, eval_b);
  // affine-rescale model a's raw scores: standardization must erase it
  auto scale = [](std::vector<double> v) {
    for (double& x : v) x = -0.0 + 7.5 * x + 3.25;
    return v;
  };
  const auto rescaled = combine(scale(train_a), scale(eval_a), train_b, eval_b);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(base[i] - rescaled[i]) < 1e-9);
}

TEST_CASE("noise-burst injection honors the exact frame budget") {
  std::vector<FrameSequence> data = synth_train(10, 100, 3, 13);  // 1000 frames
  ContaminationResult res = inject_noise_bursts(data, 0.1, 5.0, 99);
  CHECK(res.n_contaminated == 100);
  std::int64_t masked = 0;
  for (const auto& mask : res.mask)
    for (auto flag : mask) masked += flag;
  CHECK(masked == 100);
  // only masked frames may differ
  for (std::size_t r = 0; r < data.size(); ++r)
    for (int t = 0; t < data[r].frames(); ++t) {
      const double diff =
          (res.data[r].values.row(t) - data[r].values.row(t)).cwiseAbs().maxCoeff();
      if (res.mask[r][static_cast<std::size_t>(t)])
        CHECK(diff > 0.0);
      else
        CHECK(diff == 0.0);
    }

  ContaminationResult again = inject_noise_bursts(data, 0.1, 5.0, 99);
  CHECK(again.mask == res.mask);
  for (std::size_t r = 0; r < data.size(); ++r)
    CHECK((again.data[r].values - res.data[r].values).cwiseAbs().maxCoeff() == 0.0);

  ContaminationResult clean = inject_noise_bursts(data, 0.0, 5.0, 99);
  CHECK(clean.n_contaminated == 0);
  for (std::size_t r = 0; r < data.size(); ++r)
    CHECK((clean.data[r].values - data[r].values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("injected noise has the requested variance") {
  std::vector<FrameSequence> data = synth_train(10, 10000, 2, 14);  // 1e5 frames
  ContaminationResult res = inject_noise_bursts(data, 0.1, 5.0, 100);
  REQUIRE(res.n_contaminated == 10000);
  double sum = 0.0, sumsq = 0.0;
  std::int64_t n = 0;
  for (std::size_t r = 0; r < data.size(); ++r)
    for (int t = 0; t < data[r].frames(); ++t)
      if (res.mask[r][static_cast<std::size_t>(t)])
        for (int d = 0; d < data[r].dims(); ++d) {
          const double noise = res.data[r].values(t, d) - data[r].values(t, d);
          sum += noise;
          sumsq += noise * noise;
          ++n;
        }
  const double var = sumsq / static_cast<double>(n) - std::pow(sum / static_cast<double>(n), 2);
  CHECK(std::abs(var - 5.0) < 0.5);
}

TEST_CASE("burst lengths average out near the configured mean") {
  std::vector<FrameSequence> data = synth_train(4, 50000, 1, 15);
  ContaminationResult res = inject_noise_bursts(data, 0.05, 5.0, 101);
  // count contiguous runs in the mask
  std::int64_t runs = 0, marked = 0;
  for (const auto& mask : res.mask) {
    bool in_run = false;
    for (auto flag : mask) {
      marked += flag;
      if (flag && !in_run) ++runs;
      in_run = flag != 0;
    }
  }
  const double mean_len = static_cast<double>(marked) / static_cast<double>(runs);
  CHECK(mean_len > 3.0);  // merged/truncated bursts pull the average around 5
  CHECK(mean_len < 8.0);
}

TEST_CASE("linear AR baseline recovers a planted model") {
  const int p = 3, context = 2;
  Rng rng(16);
  MatrixXd planted(context * p, p);
  for (int i = 0; i < planted.rows(); ++i)
    for (int j = 0; j < p; ++j) planted(i, j) = rng.uniform(-0.4, 0.4);

  std::vector<FrameSequence> recs;
  for (int r = 0; r < 3; ++r) {
    FrameSequence rec;
    rec.values.resize(300, p);
    for (int t = 0; t < context; ++t)
      for (int d = 0; d < p; ++d) rec.values(t, d) = rng.uniform(-1, 1);
    Eigen::VectorXd x(context * p);
    for (int t = context - 1; t + 1 < 300; ++t) {
      for (int dim = 0; dim < p; ++dim)
        for (int lag = 0; lag < context; ++lag)
          x[dim * context + lag] = rec.values(t - lag, dim);
      rec.values.row(t + 1) = (planted.transpose() * x).transpose();
    }
    rec.recording_id = "r" + std::to_string(r);
    recs.push_back(std::move(rec));
  }
  ArBaseline model = fit_linear_ar(recs, context);
  CHECK(!model.ridge_applied);
  CHECK((model.weights - planted).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(ar_innovation_score(model, recs.front()) < 1e-12);
}

TEST_CASE("linear AR on white noise yields near-zero weights") {
  Rng rng(17);
  FrameSequence rec;
  rec.values.resize(10000, 1);
  for (int t = 0; t < 10000; ++t) rec.values(t, 0) = rng.normal();
  ArBaseline model = fit_linear_ar(std::span<const FrameSequence>(&rec, 1), 1);
  CHECK(model.weights.cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("constant recordings exercise the ridge path and stay finite") {
  FrameSequence rec;
  rec.values = MatrixXd::Constant(50, 2, 3.0);
  ArBaseline model = fit_linear_ar(std::span<const FrameSequence>(&rec, 1), 2);
  CHECK(model.ridge_applied);
  CHECK(model.weights.allFinite());
  CHECK(std::isfinite(ar_innovation_score(model, rec)));
}

TEST_CASE("gmm with one component is the closed-form Gaussian MLE") {
  Rng rng(18);
  MatrixXd frames(400, 3);
  for (int i = 0; i < 400; ++i)
    for (int d = 0; d < 3; ++d) frames(i, d) = rng.normal() * (d + 1) + d;
  GmmFitResult fit = fit_gmm_em(frames, 1, 0, 50);
  const Eigen::RowVectorXd mean = frames.colwise().mean();
  MatrixXd centered = frames.rowwise() - mean;
  MatrixXd cov = centered.transpose() * centered / 400.0;
  CHECK((fit.model.means[0].transpose() - mean).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((fit.model.covariances[0] - cov).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(fit.model.weights[0] == 1.0);
}

TEST_CASE("gmm log-likelihood is monotone and beats the planted parameters") {
  Rng rng(19);
  const int n = 600;
  MatrixXd frames(n, 2);
  GmmModel planted;
  planted.weights = Eigen::Vector2d(0.4, 0.6);
  planted.means = {Eigen::Vector2d(-2.0, 0.0), Eigen::Vector2d(2.5, 1.0)};
  planted.covariances = {Eigen::Matrix2d::Identity() * 0.5, Eigen::Matrix2d::Identity() * 1.2};
  for (int i = 0; i < n; ++i) {
    const int k = rng.next_unit() < 0.4 ? 0 : 1;
    for (int d = 0; d < 2; ++d)
      frames(i, d) =
          planted.means[static_cast<std::size_t>(k)][d] +
          rng.normal() * std::sqrt(planted.covariances[static_cast<std::size_t>(k)](d, d));
  }
  GmmFitResult fit = fit_gmm_em(frames, 2, 7);
  // non-decreasing up to fp64 roundoff in the log-likelihood sums
  for (std::size_t i = 1; i < fit.loglik.size(); ++i)
    CHECK(fit.loglik[i] >= fit.loglik[i - 1] - 1e-9 * (1.0 + std::abs(fit.loglik[i - 1])));

  double planted_ll = 0.0, fitted_ll = 0.0;
  for (int i = 0; i < n; ++i) {
    planted_ll += gmm_logpdf(planted, frames.row(i).transpose());
    fitted_ll += gmm_logpdf(fit.model, frames.row(i).transpose());
  }
  CHECK(fitted_ll >= planted_ll - 0.01 * n);
}

TEST_CASE("score and eval CSV round trips") {
  TempDir dir;
  std::vector<ScoreReport> scores = {
      {"rec0", "m00", "rsmm-mr", 1.25, 10, Label::Normal},
      {"rec1", "m00", "rsmm-mr", 7.5, 10, Label::Anomaly},
  };
  const std::string path = dir.file("scores.csv");
  save_score_csv(path, scores);
  auto back = load_score_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].recording_id == "rec0");
  CHECK(back[0].score == 1.25);
  CHECK(back[1].label == Label::Anomaly);

  std::vector<EvalRow> rows = {{"m00", "rsmm-mr", {0.95, 0.8, 0.1, 40, 40}}};
  save_eval_csv(dir.file("eval.csv"), rows);
  const std::string text = read_file(dir.file("eval.csv"));
  CHECK(text.find("machine_id,model_id,auc,pauc,p,n_neg,n_pos") == 0);
  const std::size_t row_at = text.find("m00,rsmm-mr,");
  REQUIRE(row_at != std::string::npos);
  CHECK(std::stod(text.substr(row_at + 12)) == 0.95);
}

TEST_SUITE_END();
