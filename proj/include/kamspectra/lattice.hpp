#pragma once

#include <utility>
#include <vector>

#include "kamspectra/params.hpp"
#include "kamspectra/util.hpp"

namespace kamspectra {

// Index into the dual lattice.
struct LatticeIndex {
  long j1 = 0, j2 = 0;

  bool operator==(const LatticeIndex &o) const {
    return j1 == o.j1 && j2 == o.j2;
  }
  bool operator<(const LatticeIndex &o) const {
    return j1 != o.j1 ? j1 < o.j1 : j2 < o.j2;
  }
};

// Quasimomentum cell K_n.  Level-1 periods are (a1, a2); at level n the
// periods are N_hat*(a1, a2) with N_hat the cumulative refinement, so the
// cell box is [0, 2*pi/(N_hat*a1)) x [0, 2*pi/(N_hat*a2)).
struct CellSpec {
  int level = 1;
  long n_hat = 1;
  double a1 = two_pi, a2 = two_pi;

  double step1() const { return two_pi / (static_cast<double>(n_hat) * a1); }
  double step2() const { return two_pi / (static_cast<double>(n_hat) * a2); }
  double area() const { return step1() * step2(); }

  bool contains(const Vec2 &t) const {
    return t.x >= 0.0 && t.x < step1() && t.y >= 0.0 && t.y < step2();
  }
};

struct Quasimomentum {
  Vec2 t;
  int level = 1;
};

// Offset set P^(m) for the refinement step into `level`: the N^2 vectors
// 2*pi*p/(N*N_hat_prev*a), p in {0..N-1}^2.
struct RefinementOffsets {
  int level = 2;
  long refine_n = 1;
  std::vector<Vec2> offsets;
  std::vector<LatticeIndex> p_indices;
};

// p_j(t) = 2*pi*j/(N_hat*a) + t.
Vec2 dual_point(const LatticeIndex &j, const Quasimomentum &t,
                const CellSpec &cell);

// The parallel shift K_n: unique (t, j) with kappa = 2*pi*j/(N_hat*a) + t
// and t in the cell.  Total on R^2; round-trips with dual_point exactly.
std::pair<Quasimomentum, LatticeIndex> reduce_to_cell(const Vec2 &kappa_vec,
                                                      const CellSpec &cell);

// Cell of level n for the run scale k (periods from choose_M).
CellSpec make_cell(const ModelParams &params, double k, int level);

RefinementOffsets refinement_offsets(int level, const ModelParams &params,
                                     double k);

} // namespace kamspectra
