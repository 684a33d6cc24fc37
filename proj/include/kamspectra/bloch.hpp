#pragma once

#include <Eigen/Dense>
#include <map>
#include <vector>

#include "kamspectra/problem.hpp"

namespace kamspectra {

// Truncated plane-wave matrix of H^(n)(t) = H_0 + W_1 + ... + W_{n-1} +
// alpha*W_n on the ball basis |p_j(t)| <= rho of the level-n dual lattice.
struct BlochMatrix {
  int level = 1;
  Quasimomentum t;
  CellSpec cell;
  double alpha = 1.0;
  std::vector<LatticeIndex> basis; // ordered by (|p_j(t)|, j)
  Eigen::VectorXd diag;            // |p_j(t)|^{2l}, exact diagonal
  Eigen::MatrixXcd mat;
  double scale = 0.0; // max diagonal magnitude, for tolerance scaling

  int dim() const { return static_cast<int>(basis.size()); }
  int find(const LatticeIndex &j) const;
};

struct ContourSpec {
  double center = 0.0;
  double radius = 0.0;
  int q_points = 32;
};

struct EigenPair {
  double value = 0.0;
  Eigen::VectorXcd vector;
};

// One residue class of the extended base operator: a full level-(n-1)
// operator at the shifted quasimomentum t_p, diagonalized.
struct BlockEigs {
  LatticeIndex p;
  Quasimomentum t_p;
  std::vector<LatticeIndex> sub_basis; // level-(n-1) indices
  std::vector<int> pos;                // positions in the level-n basis
  Eigen::VectorXd evals;
  Eigen::MatrixXcd evecs;
};

// Eigen-data of H~^(n-1)(tau) on the level-n lattice.  The matrix is block
// diagonal over residues m mod N_{n-1} (the lower potentials only couple
// lattice points whose difference is a multiple of N_{n-1}), so the spectrum
// is the union of the block spectra -- the multiple-periods identity.
struct ExtendedBaseEigs {
  int level = 2; // base operator is H^(level-1) on the level lattice
  Quasimomentum tau;
  CellSpec cell;
  long refine_n = 1; // N_{level-1}
  std::vector<LatticeIndex> basis; // union of embedded block bases, ordered
  std::vector<BlockEigs> blocks;

  int dim() const { return static_cast<int>(basis.size()); }
  // (block index, column) of the eigenvector with max overlap with the
  // plane wave e_m, searched in the residue class of m.
  std::pair<int, int> central_by_overlap(const LatticeIndex &m) const;
};

std::vector<LatticeIndex> ball_basis(const Quasimomentum &t,
                                     const CellSpec &cell, double rho,
                                     int max_dim);

BlochMatrix assemble(const Problem &pb, int level, const Quasimomentum &t,
                     double alpha);

// Same operator on a caller-supplied basis (matched-truncation comparisons).
BlochMatrix assemble_on_basis(const Problem &pb, int level,
                              const Quasimomentum &t, double alpha,
                              const std::vector<LatticeIndex> &basis);

// All eigenpairs with eigenvalue in [lo, hi], ascending, vectors normalized.
std::vector<EigenPair> oracle_eigs(const BlochMatrix &m, double lo, double hi);

Eigen::VectorXd oracle_eigenvalues(const BlochMatrix &m);

// Exact resolvent norm 1/min|lambda_i - z| of the truncated Hermitian
// matrix; throws if z is a pole to working precision.
double resolvent_gap(const BlochMatrix &m, cplx z);
double resolvent_gap(const Eigen::VectorXd &evals, cplx z, double scale);

ExtendedBaseEigs extended_base_eigs(const Problem &pb, int level,
                                    const Quasimomentum &tau);

// Fourier modes of W_1 + ... + W_{level-1} + alpha*W_level embedded on the
// level-n lattice (offset -> coefficient).
CoeffMap embedded_modes(const Problem &pb, int level, double alpha);

} // namespace kamspectra
