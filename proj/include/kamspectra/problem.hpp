#pragma once

#include <string>
#include <vector>

#include "kamspectra/lattice.hpp"
#include "kamspectra/potential.hpp"

namespace kamspectra {

enum class Mode { desk, strict };

inline std::string to_string(Mode m) {
  return m == Mode::desk ? "desk" : "strict";
}

// Basis cutoff and series/quadrature controls.
struct TruncationParams {
  double rho = 0.0;            // absolute cutoff |p_j(t)| <= rho; 0 = factor*k
  double rho_factor = 3.0;
  double det_rho_factor = 4.5; // cutoff for determinant evaluations
  int series_order = 4;        // R at level 1
  int series_order_high = 2;   // R at levels >= 2
  int contour_q = 32;          // initial quadrature nodes, doubled adaptively
  int max_contour_q = 4096;
  double tail_tol = 1e-8;      // relative truncation-tail tolerance
  int max_dim = 4096;

  void validate() const {
    if (rho < 0.0 || (rho == 0.0 && rho_factor <= 0.0))
      throw std::invalid_argument("TruncationParams: cutoff must be positive");
    if (series_order < 1 || series_order_high < 1)
      throw std::invalid_argument("TruncationParams: series order must be >= 1");
    if (contour_q < 16 || contour_q % 2 != 0)
      throw std::invalid_argument(
          "TruncationParams: contour_q must be even and >= 16");
  }
};

// Everything a computation at the run scale k needs: the operator family
// H^(n) = H_0 + W_1 + ... + W_n through the windowed potentials, the cells,
// and the epsilon ledger.  Immutable after construction.
class Problem {
public:
  Problem(const ModelParams &params, const PotentialSpec &potential, double k,
          const TruncationParams &trunc, Mode mode, int n_max,
          int threads = 1);

  const ModelParams &params() const { return params_; }
  const PotentialSpec &potential() const { return potential_; }
  double k() const { return k_; }
  double lambda() const { return lambda_; }
  const TruncationParams &trunc() const { return trunc_; }
  Mode mode() const { return mode_; }
  int n_max() const { return n_max_; }
  int threads() const { return threads_; }

  const WindowedPotential &window(int n) const;
  CellSpec cell(int level) const;
  double rho() const {
    return trunc_.rho > 0.0 ? trunc_.rho : trunc_.rho_factor * k_;
  }

  // epsilon_n.  Strict mode keeps the paper's exp(-k^{eta s_n}/4) in log
  // space; desk mode floors it at max(eps_floor_rel*lambda,
  // eps_w_factor*||W_{n+1}||) so band widths and contour radii stay
  // representable and the level-(n+1) series converges.
  LogValue epsilon_log(int n) const;
  double epsilon(int n) const;

  // Contour radius: level 1 k^{2l-2-4s1-delta}, level n >= 2 eps_{n-1}/2.
  double contour_radius(int level) const;

  double eps_floor_rel = 1e-8;
  double eps_w_factor = 20.0;

private:
  ModelParams params_;
  PotentialSpec potential_;
  double k_;
  double lambda_;
  TruncationParams trunc_;
  Mode mode_;
  int n_max_;
  int threads_;
  std::vector<WindowedPotential> windows_;
};

} // namespace kamspectra
