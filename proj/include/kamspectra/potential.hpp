#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kamspectra/lattice.hpp"
#include "kamspectra/params.hpp"
#include "kamspectra/util.hpp"

namespace kamspectra {

// Fourier coefficient map on a rectangular dual lattice; deterministic
// (ordered) iteration matters for bit-exact reruns.
using CoeffMap = std::map<LatticeIndex, cplx>;

// How the per-block Fourier coefficients are generated.
struct PotentialRecipe {
  enum class Kind { none, cosine, random_modes, custom };
  Kind kind = Kind::none;

  // Overall amplitude scale in (0, 1]: fraction of the decay budget used.
  double amplitude = 1.0;

  // Desk-scale mode: replace the exp(-2^{eta r}) block budgets, which are
  // numerically zero past r = 2, by budget_base * budget_ratio^{r-1}.
  bool relaxed_decay = true;
  double budget_base = 2e-2;
  double budget_ratio = 1e-3;

  // random_modes recipe.
  int modes_per_block = 2;
  long max_mode = 2;
  std::uint64_t seed = 0;

  // custom recipe: explicit (r, q) -> value entries.
  std::vector<std::pair<int, CoeffMap>> custom_blocks;

  // Block-r sup-norm budget (sum of |coefficients|).
  double budget(int r, const ModelParams &params) const;
};

// V = sum_r V_r with block r living on the dual lattice of the periods
// 2^{r-1} (b1, b2).  Blocks are zero-mean and Hermitian-symmetric.
struct PotentialSpec {
  ModelParams params;
  std::vector<CoeffMap> blocks; // blocks[r-1] holds block r
  std::vector<double> block_sum_abs;
  std::vector<double> applied_scaling; // 1.0 unless budget forced a rescale
  PotentialRecipe recipe;

  int r_max() const { return static_cast<int>(blocks.size()); }
  bool is_zero() const;

  // Pointwise value of block r at x (real by construction).
  double eval_block(int r, const Vec2 &x) const;
};

// W_n = sum_{r=M_{n-1}+1}^{M_n} V_r assembled on the level-n dual lattice.
struct WindowedPotential {
  int level = 1;
  int m_lo = 0, m_hi = 0;  // window (M_{n-1}, M_n]
  double period1 = 0.0, period2 = 0.0; // periods of W_n (the level-n box Q_n)
  CoeffMap coeffs;         // level-n lattice indices
  double sum_abs = 0.0;    // sup-norm bound sum |w_q|
  LogValue strict_bound;   // exp(-k^{eta s_{n-1}}) ledger entry, n >= 2

  bool empty() const { return coeffs.empty(); }
  cplx coeff(const LatticeIndex &q) const {
    auto it = coeffs.find(q);
    return it == coeffs.end() ? cplx(0, 0) : it->second;
  }
  double eval(const Vec2 &x) const; // pointwise (returns the real part)
  double eval_imag(const Vec2 &x) const;
};

// M_n = max(M_{n-1} + 1, round(s_n log2 k)), ties rounding up; M_0 = 0.
int choose_M(int n, double k, const ModelParams &params);

PotentialSpec build_potential(const ModelParams &params,
                              const PotentialRecipe &recipe, int r_max);

WindowedPotential window_sum(const PotentialSpec &spec, int n, double k);

} // namespace kamspectra
