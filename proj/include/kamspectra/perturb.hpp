#pragma once

#include <Eigen/Dense>
#include <optional>

#include "kamspectra/bloch.hpp"

namespace kamspectra {

// Thrown when a contour runs through or too close to spectrum.
struct ResonantContour : std::runtime_error {
  double offending_eigenvalue;
  ResonantContour(const std::string &what, double ev)
      : std::runtime_error(what), offending_eigenvalue(ev) {}
};

// Thrown by g2_closed_form on a vanishing denominator.
struct ResonantPair : std::runtime_error {
  LatticeIndex j, q;
  ResonantPair(const std::string &what, LatticeIndex j_, LatticeIndex q_)
      : std::runtime_error(what), j(j_), q(q_) {}
};

// Per-order data from the contour quadrature at one momentum point.
struct SeriesCoefficients {
  int level = 1;
  ContourSpec contour;
  int q_used = 0;             // nodes at convergence
  double base = 0.0;          // unperturbed eigenvalue inside the contour
  std::vector<double> g;      // g_1..g_R
  std::vector<Eigen::MatrixXcd> G; // empty unless requested; level basis
  std::vector<LatticeIndex> basis;
  int central_pos = -1;       // position of the plane-wave index in basis
  double resolvent_max = 0.0; // measured sup ||R(z)|| over contour nodes
  double tail_ratio = 0.0;    // ||R|| * sum|w| of the perturbing window
  double max_imag = 0.0;      // largest imaginary residue seen in the g's

  double tail_bound(double alpha, int R, int dim) const;
};

struct SeriesEigenvalue {
  int level = 1;
  double alpha = 1.0;
  double base = 0.0;
  std::vector<double> g;
  double tail = 0.0;
  double value = 0.0; // base + sum alpha^r g_r
};

struct SeriesProjection {
  int level = 1;
  double alpha = 1.0;
  std::vector<LatticeIndex> basis;
  int central_pos = -1;
  Eigen::MatrixXcd total;
  std::vector<Eigen::MatrixXcd> G;
  double trace_dev = 0.0; // |tr E - 1|
  double idem_dev = 0.0;  // ||E^2 - E|| / ||E||
};

struct DerivativeReport {
  Vec2 grad_fd;
  Vec2 grad_formula;      // 2 l k^{2l-2} kappa
  double rel_dev = 0.0;   // |fd - formula| / |formula|
  double hess_max = 0.0;  // max |second difference|
  double hess_bound = 0.0; // 4 l^2 k^{2l-2}
  double richardson_ratio = 0.0; // (fd(h)-exact)/(fd(h/2)-exact), ~4
};

// Contour quadrature of Eqs. for g_r (trace integrand) and G_r (matrix
// integrand).  R orders; with_G controls whether the matrix corrections are
// accumulated.  kappa_vec is the momentum-space point; it is reduced into
// the level cell internally.
SeriesCoefficients series_coefficients(const Problem &pb, int level,
                                       const Vec2 &kappa_vec, int R,
                                       bool with_G);

// Closed-form residue for the second-order coefficient at level 1:
// sum_q |w_q|^2 (p_j^{2l} - p_{j+q}^{2l})^{-1} over the potential modes.
double g2_closed_form(const Problem &pb, const Vec2 &kappa_vec);

SeriesEigenvalue eigenvalue_series(const Problem &pb, int level,
                                   const Vec2 &kappa_vec, double alpha, int R);

SeriesProjection projection_series(const Problem &pb, int level,
                                   const Vec2 &kappa_vec, double alpha, int R);

DerivativeReport derivative_checks(const Problem &pb, int level,
                                   const Vec2 &kappa_vec, double alpha);

// Default series order for a level (R at level 1, R_high above).
int default_order(const Problem &pb, int level);

} // namespace kamspectra
