#include "rmdn/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rmdn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kLogPi = 1.1447298858494001741;

void check_component(const Eigen::VectorXd& y, const ComponentParams& comp) {
  const auto p = y.size();
  if (comp.mu.size() != p || comp.chol_lower.rows() != p || comp.chol_lower.cols() != p)
    throw std::invalid_argument("component dimension mismatch");
  for (Eigen::Index j = 0; j < p; ++j)
    if (!(comp.chol_lower(j, j) > 0.0))
      throw std::invalid_argument("Cholesky factor requires a strictly positive diagonal");
}

double log_det_sigma(const Eigen::MatrixXd& chol_lower) {
  return 2.0 * chol_lower.diagonal().array().log().sum();
}

// log(sum exp(v)) accumulated in sorted order, so the result depends only
// on the multiset of inputs (exact permutation invariance of the mixture).
double logsumexp(std::vector<double> logs) {
  std::sort(logs.begin(), logs.end(), std::greater<>());
  const double max_log = logs.front();
  if (!std::isfinite(max_log)) return max_log;
  double acc = 0.0;
  for (double v : logs) acc += std::exp(v - max_log);
  return max_log + std::log(acc);
}

// Mahalanobis form (y-mu)^T Sigma^-1 (y-mu) via one triangular solve.
// Clamped at zero; rounding in the solve can produce tiny negatives.
double mahalanobis(const Eigen::VectorXd& y, const ComponentParams& comp) {
  Eigen::VectorXd w = comp.chol_lower.triangularView<Eigen::Lower>().solve(y - comp.mu);
  return std::max(w.squaredNorm(), 0.0);
}

}  // namespace

void MixtureParams::validate() const {
  const int c = n_components();
  if (c == 0) throw std::invalid_argument("mixture has no components");
  if (alpha.size() != c) throw std::invalid_argument("alpha size does not match component count");
  double sum = 0.0;
  for (int i = 0; i < c; ++i) {
    if (!(alpha[i] >= 0.0)) throw std::invalid_argument("alpha entries must be non-negative");
    sum += alpha[i];
  }
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("alpha must sum to 1");
  const int p = components.front().dim();
  for (const auto& comp : components) {
    if (comp.dim() != p) throw std::invalid_argument("components disagree on dimension");
    if (comp.chol_lower.rows() != p || comp.chol_lower.cols() != p)
      throw std::invalid_argument("Cholesky factor has wrong shape");
    for (int j = 0; j < p; ++j)
      if (!(comp.chol_lower(j, j) > 0.0))
        throw std::invalid_argument("Cholesky factor requires a strictly positive diagonal");
    if (family == Family::StudentT && !(comp.nu > 0.0))
      throw std::invalid_argument("Student-t degrees of freedom must be positive");
  }
}

double gaussian_logpdf(const Eigen::VectorXd& y, const ComponentParams& comp) {
  check_component(y, comp);
  const double p = static_cast<double>(y.size());
  return -0.5 * (p * kLog2Pi + log_det_sigma(comp.chol_lower) + mahalanobis(y, comp));
}

double student_t_logpdf(const Eigen::VectorXd& y, const ComponentParams& comp) {
  check_component(y, comp);
  if (!(comp.nu > 0.0)) throw std::invalid_argument("student_t_logpdf: nu must be positive");
  const double p = static_cast<double>(y.size());
  const double nu = comp.nu;
  const double m = mahalanobis(y, comp);
  return std::lgamma(0.5 * (nu + p)) - std::lgamma(0.5 * nu) - 0.5 * p * (std::log(nu) + kLogPi) -
         0.5 * log_det_sigma(comp.chol_lower) - 0.5 * (nu + p) * std::log1p(m / nu);
}

double scale_mixture_logpdf_quadrature(const Eigen::VectorXd& y, const ComponentParams& comp,
                                       int nodes) {
  check_component(y, comp);
  if (!(comp.nu > 0.0)) throw std::invalid_argument("quadrature: nu must be positive");
  if (nodes < 64) throw std::invalid_argument("quadrature: need at least 64 nodes");

  const double p = static_cast<double>(y.size());
  const double a = 0.5 * comp.nu;
  const double m = mahalanobis(y, comp);
  // With z = e^t the integrand over t is
  //   exp(C + (p/2 + a) t - (m/2 + a) e^t),
  // peaked at t* = log((p + nu) / (m + nu)) and decaying exponentially on
  // the left and doubly exponentially on the right.
  const double konst =
      -0.5 * p * kLog2Pi - 0.5 * log_det_sigma(comp.chol_lower) + a * std::log(a) - std::lgamma(a);
  const double growth = 0.5 * p + a;
  const double decay = 0.5 * m + a;
  const double t_star = std::log(growth / decay);

  auto integrate = [&](int n) {
    const double lo = t_star - 40.0, hi = t_star + 40.0;
    const double h = (hi - lo) / (n - 1);
    double max_log = -std::numeric_limits<double>::infinity();
    std::vector<double> logs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double t = lo + h * i;
      double v = konst + growth * t - decay * std::exp(t);
      if (i == 0 || i == n - 1) v += std::log(0.5);
      logs[i] = v;
      max_log = std::max(max_log, v);
    }
    double acc = 0.0;
    for (double v : logs) acc += std::exp(v - max_log);
    return max_log + std::log(acc) + std::log(h);
  };

  const double coarse = integrate(nodes);
  const double fine = integrate(2 * nodes);
  if (std::abs(coarse - fine) > 1e-8)
    throw NumericalError("quadrature did not reach 1e-8 self-consistency; increase nodes");
  return coarse;
}

double mixture_logpdf(const Eigen::VectorXd& y, const MixtureParams& params) {
  params.validate();
  if (y.size() != params.dim()) throw std::invalid_argument("observation dimension mismatch");
  const int c = params.n_components();
  std::vector<double> logs(static_cast<std::size_t>(c), -std::numeric_limits<double>::infinity());
  for (int i = 0; i < c; ++i) {
    if (params.alpha[i] <= 0.0) continue;
    const double li = params.family == Family::Gaussian
                          ? gaussian_logpdf(y, params.components[i])
                          : student_t_logpdf(y, params.components[i]);
    logs[i] = std::log(params.alpha[i]) + li;
  }
  return logsumexp(std::move(logs));
}

double nll(const Eigen::VectorXd& y, const MixtureParams& params) {
  return -mixture_logpdf(y, params);
}

double softplus(double x) {
  double v = x > 30.0 ? x : std::log1p(std::exp(x));
  // keep the output representable as a strictly positive double
  return std::max(v, 1e-300);
}

double softplus_inv(double v) {
  if (!(v > 0.0)) throw std::invalid_argument("softplus_inv: requires v > 0");
  if (v > 30.0) return v;
  return std::log(std::expm1(v));
}

double scaled_sigmoid(double x, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("scaled_sigmoid: requires lo < hi");
  const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  double v = lo + (hi - lo) * s;
  if (v <= lo) v = std::nextafter(lo, hi);
  if (v >= hi) v = std::nextafter(hi, lo);
  return v;
}

Eigen::VectorXd simplex_softmax(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw std::invalid_argument("simplex_softmax: empty input");
  Eigen::VectorXd e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

int strict_lower_count(int dim) { return dim * (dim - 1) / 2; }

MixtureParams constrain_mixture(const RawMixture& raw, Family family, NuBounds nb) {
  MixtureParams out;
  out.family = family;
  out.alpha = simplex_softmax(raw.alpha);
  out.components.reserve(raw.components.size());
  for (const auto& rc : raw.components) {
    const int p = static_cast<int>(rc.mu.size());
    if (rc.chol_diag.size() != p || rc.chol_lower.size() != strict_lower_count(p))
      throw std::invalid_argument("raw component shapes disagree");
    ComponentParams comp;
    comp.mu = rc.mu;
    comp.chol_lower = Eigen::MatrixXd::Zero(p, p);
    for (int j = 0; j < p; ++j) comp.chol_lower(j, j) = softplus(rc.chol_diag[j]);
    int k = 0;
    for (int i = 1; i < p; ++i)
      for (int j = 0; j < i; ++j) comp.chol_lower(i, j) = rc.chol_lower[k++];
    comp.nu = family == Family::StudentT ? scaled_sigmoid(rc.nu, nb.lo, nb.hi) : 0.0;
    out.components.push_back(std::move(comp));
  }
  return out;
}

MixtureGrad grad_logpdf(const Eigen::VectorXd& y, const MixtureParams& params, NuBounds nb) {
  params.validate();
  if (y.size() != params.dim()) throw std::invalid_argument("observation dimension mismatch");
  const int c = params.n_components();
  const int p = params.dim();
  const bool student = params.family == Family::StudentT;

  // posterior responsibilities r_i = alpha_i f_i / sum_j alpha_j f_j
  std::vector<double> logs(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) {
    const auto& comp = params.components[i];
    const double li = student ? student_t_logpdf(y, comp) : gaussian_logpdf(y, comp);
    logs[i] = (params.alpha[i] > 0.0 ? std::log(params.alpha[i]) : -1e300) + li;
  }
  const double log_mix = logsumexp(logs);

  MixtureGrad grad;
  grad.alpha.resize(c);
  grad.components.resize(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) {
    const auto& comp = params.components[i];
    const double resp = std::exp(logs[i] - log_mix);
    grad.alpha[i] = resp - params.alpha[i];  // softmax-logit gradient

    Eigen::VectorXd w = comp.chol_lower.triangularView<Eigen::Lower>().solve(y - comp.mu);
    const double m = std::max(w.squaredNorm(), 0.0);
    Eigen::VectorXd v =
        comp.chol_lower.transpose().triangularView<Eigen::Upper>().solve(Eigen::VectorXd(w));

    double scale = 1.0;  // Gaussian: d(-m/2)/dm factor already folded below
    double dnu = 0.0;
    if (student) {
      const double nu = comp.nu;
      scale = (nu + p) / (nu + m);
      dnu = 0.5 * (digamma(0.5 * (nu + p)) - digamma(0.5 * nu)) - 0.5 * p / nu -
            0.5 * std::log1p(m / nu) + 0.5 * scale * m / nu;
    }

    RawComponent& g = grad.components[static_cast<std::size_t>(i)];
    g.mu = resp * scale * v;
    g.chol_diag.resize(p);
    g.chol_lower.resize(strict_lower_count(p));
    int k = 0;
    for (int row = 0; row < p; ++row) {
      // d logf / dL = scale * v w^T - diag(1/L_jj), lower triangle
      const double diag_val = comp.chol_lower(row, row);
      const double dL_diag = scale * v[row] * w[row] - 1.0 / diag_val;
      // chain through softplus: d softplus^-1 slope = 1 - exp(-L_jj)
      g.chol_diag[row] = resp * dL_diag * (-std::expm1(-diag_val));
      for (int col = 0; col < row; ++col) g.chol_lower[k++] = resp * scale * v[row] * w[col];
    }
    if (student) {
      const double nu = comp.nu;
      g.nu = resp * dnu * (nu - nb.lo) * (nb.hi - nu) / (nb.hi - nb.lo);
    } else {
      g.nu = 0.0;
    }
  }
  return grad;
}

}  // namespace rmdn
