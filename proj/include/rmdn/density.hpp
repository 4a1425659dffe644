#pragma once

#include <Eigen/Dense>
#include <vector>

#include "rmdn/common.hpp"

namespace rmdn {

enum class Family { Gaussian, StudentT };

// One mixture component: location mu, Cholesky factor L of the scale matrix
// (Sigma = L * L^T, strictly positive diagonal) and, for the Student-t
// family, the degrees of freedom nu.
struct ComponentParams {
  Eigen::VectorXd mu;
  Eigen::MatrixXd chol_lower;
  double nu = 0.0;

  int dim() const { return static_cast<int>(mu.size()); }
};

struct MixtureParams {
  Eigen::VectorXd alpha;  // simplex weights, one per component
  std::vector<ComponentParams> components;
  Family family = Family::StudentT;

  int dim() const { return components.empty() ? 0 : components.front().dim(); }
  int n_components() const { return static_cast<int>(components.size()); }
  void validate() const;  // throws std::invalid_argument on broken invariants
};

struct ContaminationSpec {
  double epsilon = 0.1;  // fraction of contaminated frames
  double sigma2 = 5.0;   // variance of the outlier noise
};

struct NuBounds {
  double lo = 1.0;
  double hi = 10.0;
};

double gaussian_logpdf(const Eigen::VectorXd& y, const ComponentParams& comp);
double student_t_logpdf(const Eigen::VectorXd& y, const ComponentParams& comp);

// Independent oracle for student_t_logpdf: integrates the scale-mixture
// representation  N(y | mu, Sigma/z) Ga(z | nu/2, nu/2)  over z by trapezoid
// on a log axis. Throws NumericalError if doubling the node count moves the
// result by more than 1e-8.
double scale_mixture_logpdf_quadrature(const Eigen::VectorXd& y, const ComponentParams& comp,
                                       int nodes);

double mixture_logpdf(const Eigen::VectorXd& y, const MixtureParams& params);
double nll(const Eigen::VectorXd& y, const MixtureParams& params);

// -------- constrained-parameter transforms --------

double softplus(double x);
double softplus_inv(double v);
double scaled_sigmoid(double x, double lo, double hi);
Eigen::VectorXd simplex_softmax(const Eigen::VectorXd& v);

// Unconstrained parameterization of a mixture, i.e. what the network's
// output heads emit before any activation:
//   alpha      <- softmax(alpha)
//   L diagonal <- softplus(chol_diag)
//   L strict lower entries, packed row-major ((1,0),(2,0),(2,1),...) <- identity
//   nu         <- scaled_sigmoid(nu, lo, hi)
struct RawComponent {
  Eigen::VectorXd mu;
  Eigen::VectorXd chol_diag;
  Eigen::VectorXd chol_lower;
  double nu = 0.0;
};

struct RawMixture {
  Eigen::VectorXd alpha;
  std::vector<RawComponent> components;
};

// Gradient of a log-density in the unconstrained coordinates; same layout
// as RawMixture.
using MixtureGrad = RawMixture;

int strict_lower_count(int dim);
MixtureParams constrain_mixture(const RawMixture& raw, Family family, NuBounds nb = {});

// d mixture_logpdf / d {alpha logits, mu, chol_diag raw, chol_lower raw,
// nu logit}, evaluated at `params`. For the Gaussian family the nu entries
// are zero.
MixtureGrad grad_logpdf(const Eigen::VectorXd& y, const MixtureParams& params, NuBounds nb = {});

}  // namespace rmdn
