#pragma once

#include <complex>
#include <vector>

#include "kamspectra/perturb.hpp"

namespace kamspectra {

struct BracketFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AngleInterval {
  double lo = 0.0, hi = 0.0;
  double length() const { return hi - lo; }
};

// Union of closed intervals in [0, 2*pi), kept sorted and disjoint.
class AngleDomain {
public:
  AngleDomain() = default;
  static AngleDomain full();
  // Normalizes (mod 2*pi, splitting wrapped intervals) and merges.
  static AngleDomain from_intervals(std::vector<AngleInterval> iv);

  const std::vector<AngleInterval> &intervals() const { return iv_; }
  double length() const;
  bool empty() const { return iv_.empty(); }
  bool contains(double phi, double tol = 0.0) const;
  bool is_full() const;

  // Removes the (possibly wrapped) holes from this domain.
  AngleDomain subtract(const std::vector<AngleInterval> &holes) const;
  std::vector<AngleInterval> complement() const;
  bool subset_of(const AngleDomain &other, double tol = 1e-12) const;

private:
  std::vector<AngleInterval> iv_;
};

// Sampled isoenergetic curve kappa_n(phi) over Theta_n.
struct CurveSample {
  double phi = 0.0;
  double kappa = 0.0;
  double dkappa_dphi = 0.0;
};

struct IsoCurve {
  int level = 0;
  double lambda = 0.0;
  double alpha = 1.0;
  std::vector<CurveSample> samples; // ascending phi
  std::vector<AngleInterval> holes; // complement of the angle domain
  AngleDomain domain;
  int grid = 0;
  int refine_depth = 0;
  int bracket_failures = 0;
  bool below_asymptotic = false;

  double length() const; // integral of sqrt(kappa^2 + kappa'^2) d phi
  double kappa_at(double phi) const;       // linear interpolation
  double dkappa_at(double phi) const;
  // Low-order Taylor extension to complex phi (radius-capped by caller).
  cplx kappa_ext(cplx phi) const;
};

struct SelfIntersection {
  double phi = 0.0;    // angle on the circle S_k
  Vec2 kappa;          // k * nu(phi)
  Quasimomentum t;     // reduced into the cell
  LatticeIndex j, q;   // witnesses: p_j(t) = p_q(t) = k
};

// All self-intersections of the free isoenergetic surface: angles where the
// circle of radius k about the origin meets a circle of radius k about a
// dual-lattice point.
std::vector<SelfIntersection> self_intersections(double k,
                                                 const CellSpec &cell);

// The level-1 non-resonance angle set: [0, 2*pi) minus the arcs where
// min_{i != j} |p_j^2 - p_i^2| <= 2 k^{-4 s1 - delta}.  Potential-independent.
AngleDomain chi1(const Problem &pb, double lambda, int grid = 2048,
                 bool *below_asymptotic = nullptr);

// Root of lambda^(n)(alpha, kappa nu(phi)) = lambda in the level bracket.
// prev_curve supplies the bracket center for level >= 2 (unused at level 1).
std::pair<double, double> trace_kappa(const Problem &pb, int level,
                                      double lambda, double phi, double alpha,
                                      const IsoCurve *prev_curve);

struct CurveOptions {
  int grid = 2048;
  int max_refine_depth = 6;
  double split_tol_factor = 1e-3; // split when |d kappa| > factor * k
};

// Samples the level-n curve over theta.  Level 0 is the free circle over the
// full angle domain.
IsoCurve curve(const Problem &pb, int level, double lambda, double alpha,
               const AngleDomain &theta, const IsoCurve *prev_curve,
               const CurveOptions &opt = {});

struct MeasureRow {
  int level = 0;
  double length = 0.0;
  double decrement = 0.0;   // L(Theta_{n-1}) - L(Theta_n)
  double s_n_reference = 0.0; // paper rate exponent S_n
};

// Per-level lengths and decrements; rejects non-nested input.
std::vector<MeasureRow> measure_report(const std::vector<AngleDomain> &domains,
                                       const ModelParams &params);

// Least-squares slope of log(y) against log(k); used by the sweep trends.
double loglog_slope(const std::vector<double> &k, const std::vector<double> &y);

} // namespace kamspectra
