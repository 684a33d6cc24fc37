#pragma once

#include <complex>
#include <functional>
#include <optional>
#include <vector>

#include "kamspectra/isoenergetic.hpp"

namespace kamspectra {

// Complex angle strip: the half_width-neighborhood of real_domain.
struct ComplexStrip {
  int level = 0;
  AngleDomain real_domain;
  double half_width = 0.0;

  // Whether a disk (center, r) meets the closed strip.  Components whose
  // closure meets the strip are kept (boundary-tangent components included).
  bool meets_disk(cplx center, double r) const;
};

enum class SeedKind { unperturbed = 0, polished = 1, small_b_pole = 2 };

struct Disk {
  cplx center;
  SeedKind seed_kind = SeedKind::unperturbed;
};

// One level of the Swiss-cheese resonance map for a fixed shift b.
struct DiskSet {
  int level = 1;
  double radius = 0.0; // the level's ledger radius r^(level)
  Vec2 b_vec;
  double b0 = 0.0;     // distance from b to the nearest cell vertex
  std::vector<Disk> disks;

  // Real trace: the intervals cut on the real axis by the disks.
  std::vector<AngleInterval> real_trace() const;
};

// Connected component Gamma of a DiskSet with an enclosing contour.
struct DiskComponent {
  std::vector<int> disk_ids;
  cplx center;
  double radius = 0.0; // enclosing-circle radius (contour radius)
};

struct ArcWitness {
  LatticeIndex p;  // refinement offset index
  double phi = 0.0;
  double eigenvalue = 0.0;
};

struct ResonanceArcs {
  int level = 2; // arcs removed when passing from Theta_{level-1} to Theta_level
  std::vector<AngleInterval> arcs; // widened by one grid cell (conservative)
  std::vector<AngleInterval> core; // bisected detection boundaries
  std::vector<ArcWitness> witnesses;
};

struct PolePoint {
  cplx phi;
  int sign = 0; // +1 / -1 classification by the slope of lambda along phi
};

// r^(1) = k^{-4-6s1-3delta}, r^(m+1) = r^(m) k^{-2-4s_{m+1}-delta}.
double disk_radius(const Problem &pb, int level);

// Paper cap c0 k^{2+2s1} with c0 = 32 b1 b2 (treated as fitted; build_O
// aborts at 4x the cap).
double disk_count_cap(const Problem &pb);

ComplexStrip make_phi0(const Problem &pb);
ComplexStrip make_phi1(const Problem &pb, const AngleDomain &theta1);

double vertex_distance(const Problem &pb, const Vec2 &b_vec, Vec2 *nearest);

// Roots of | y_0(phi) + p_m(0) |_*^2 = k^2 inside the strip, from the
// quadratic in e^{i phi}; empty when p_m(0) >= 4k.
std::vector<cplx> unperturbed_zeros(const Problem &pb, const Vec2 &b_vec,
                                    const LatticeIndex &m_index, double lambda,
                                    const ComplexStrip &strip);

// Level-1 resonance map: disks of radius r^(1) around all unperturbed zeros,
// keeping components meeting phi1.
DiskSet build_O_level1(const Problem &pb, const Vec2 &b_vec, double lambda,
                       const ComplexStrip &phi1);

// Level m >= 2: union over p^(m-1) of the contracted prior sets
// O_s^(m-1)(b + 2 pi p/(N_hat a)).  curves[i] holds the level-(i+1) curve.
DiskSet build_O(const Problem &pb, int level, const Vec2 &b_vec, double lambda,
                const ComplexStrip &phi1,
                const std::vector<const IsoCurve *> &curves,
                std::vector<std::string> *warnings = nullptr);

std::vector<DiskComponent> components(const DiskSet &set, double merge_slack);

// log det[(H^(m)(y(phi)) - lambda - eps)(H_0(y(phi)) + lambda)^{-1}] with
// y(phi) = kappa_m(phi) nu(phi) + b, alpha scaling the top window W_m.
// Reusable across phi values on the same contour neighborhood.
class DetEvaluator {
public:
  DetEvaluator(const Problem &pb, int level, const IsoCurve &curve,
               const Vec2 &b_vec, double lambda, double eps, double alpha,
               double phi_ref);
  cplx log_det(cplx phi) const;

private:
  const Problem &pb_;
  int level_;
  const IsoCurve &curve_;
  Vec2 b_;
  double lambda_, eps_, alpha_;
  std::vector<Vec2> lattice_; // p_m(0) for the basis
  CoeffMap modes_;            // embedded potential modes
  std::vector<std::vector<std::pair<int, cplx>>> wcols_; // sparse W columns
};

// Winding number of det along the circle via phase-unwrapped trapezoid of
// d(log det); doubles Q on a non-integer result, then fails.
int count_zeros(const std::function<cplx(cplx)> &log_det, cplx center,
                double radius, int q0 = 32, int qmax = 65536);

// One Newton-polished zero of the perturbed determinant per seed disk.
std::vector<cplx> polished_zeros(const Problem &pb, int level,
                                 const Vec2 &b_vec, const DiskSet &seeds,
                                 const IsoCurve &curve,
                                 std::vector<std::string> *warnings = nullptr);

// Contracted set: disks of radius r^(level+1) on the polished zeros.
DiskSet contract(const Problem &pb, const DiskSet &seeds,
                 const std::vector<cplx> &zeros);

// <= 2 pole locations of lambda^(level)(y(phi)) = k^{2l} + eps0 for small b0,
// seeded by the reduced cosine equation and Newton-refined.
std::vector<PolePoint> small_b_poles(const Problem &pb, int level,
                                     const Vec2 &b_vec, double lambda,
                                     const IsoCurve &curve, double eps0);

// Arcs of Theta_{level-1} where some nonzero refinement offset produces an
// extended-operator eigenvalue within eps_band of lambda.
ResonanceArcs resonance_arcs(const Problem &pb, int level, double lambda,
                             const IsoCurve &curve_prev,
                             const AngleDomain &theta_prev, double eps_band,
                             int grid = 1024);

// Containment of arcs in the real trace of a disk set (within tol).
bool arcs_inside_trace(const ResonanceArcs &arcs,
                       const std::vector<AngleInterval> &trace, double tol);

} // namespace kamspectra
