#include "kamspectra/bloch.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace kamspectra {

//==============================================================================
// Problem

Problem::Problem(const ModelParams &params, const PotentialSpec &potential,
                 double k, const TruncationParams &trunc, Mode mode, int n_max,
                 int threads)
    : params_(params), potential_(potential), k_(k), trunc_(trunc),
      mode_(mode), n_max_(n_max), threads_(threads) {
  if (k_ <= 1.0)
    throw std::invalid_argument("Problem: requires k > 1");
  if (n_max_ < 1)
    throw std::invalid_argument("Problem: n_max must be >= 1");
  trunc_.validate();
  lambda_ = params_.lambda_of_k(k_);
  windows_.reserve(n_max_);
  for (int n = 1; n <= n_max_; ++n)
    windows_.push_back(window_sum(potential_, n, k_));
}

const WindowedPotential &Problem::window(int n) const {
  if (n < 1 || n > n_max_)
    throw std::invalid_argument("Problem::window: level out of range");
  return windows_[n - 1];
}

CellSpec Problem::cell(int level) const {
  return make_cell(params_, k_, level);
}

LogValue Problem::epsilon_log(int n) const {
  return LogValue(-std::pow(k_, params_.eta() * params_.s(n)) / 4.0);
}

double Problem::epsilon(int n) const {
  if (mode_ == Mode::strict)
    return epsilon_log(n).value(0.0);
  // Desk mode replaces the exp(-k^{eta s_n}/4) ledger value outright: the
  // band must stay representable and wide enough for the level-(n+1) series
  // to converge, yet well inside the level-1 contour scale.
  double floor = eps_floor_rel * lambda_;
  double wterm = 0.0;
  if (n + 1 <= n_max_)
    wterm = eps_w_factor * window(n + 1).sum_abs;
  double eps = std::max(floor, wterm);
  double cap = contour_radius(1) / 4.0;
  return std::min(eps, cap);
}

double Problem::contour_radius(int level) const {
  if (level <= 1)
    return std::pow(k_, 2.0 * params_.l() - 2.0 - 4.0 * params_.s1() -
                            params_.delta());
  return epsilon(level - 1) / 2.0;
}

//==============================================================================
// Basis and assembly

int BlochMatrix::find(const LatticeIndex &j) const {
  for (std::size_t i = 0; i < basis.size(); ++i)
    if (basis[i] == j)
      return static_cast<int>(i);
  return -1;
}

std::vector<LatticeIndex> ball_basis(const Quasimomentum &t,
                                     const CellSpec &cell, double rho,
                                     int max_dim) {
  // |2 pi j / (N a) + t| <= rho componentwise bounds the index search box.
  long lo1 = static_cast<long>(std::floor((-rho - t.t.x) / cell.step1())) - 1;
  long hi1 = static_cast<long>(std::ceil((rho - t.t.x) / cell.step1())) + 1;
  long lo2 = static_cast<long>(std::floor((-rho - t.t.y) / cell.step2())) - 1;
  long hi2 = static_cast<long>(std::ceil((rho - t.t.y) / cell.step2())) + 1;

  std::vector<std::pair<double, LatticeIndex>> found;
  for (long j1 = lo1; j1 <= hi1; ++j1)
    for (long j2 = lo2; j2 <= hi2; ++j2) {
      Vec2 p{static_cast<double>(j1) * cell.step1() + t.t.x,
             static_cast<double>(j2) * cell.step2() + t.t.y};
      double len = p.norm();
      if (len <= rho)
        found.push_back({len, {j1, j2}});
    }
  std::sort(found.begin(), found.end(), [](const auto &a, const auto &b) {
    if (a.first != b.first)
      return a.first < b.first;
    return a.second < b.second;
  });
  if (static_cast<int>(found.size()) > max_dim)
    throw std::runtime_error(
        "ball_basis: cutoff yields dimension " + std::to_string(found.size()) +
        " > configured max " + std::to_string(max_dim));
  if (found.empty())
    throw std::runtime_error("ball_basis: empty basis (rho too small)");
  std::vector<LatticeIndex> basis;
  basis.reserve(found.size());
  for (auto &f : found)
    basis.push_back(f.second);
  return basis;
}

CoeffMap embedded_modes(const Problem &pb, int level, double alpha) {
  CoeffMap total;
  int m_top = pb.window(level).m_hi;
  for (int i = 1; i <= level; ++i) {
    const WindowedPotential &w = pb.window(i);
    long stride = 1L << (m_top - w.m_hi);
    double factor = (i == level) ? alpha : 1.0;
    if (factor == 0.0)
      continue;
    for (const auto &[q, v] : w.coeffs)
      total[{q.j1 * stride, q.j2 * stride}] += factor * v;
  }
  return total;
}

BlochMatrix assemble_on_basis(const Problem &pb, int level,
                              const Quasimomentum &t, double alpha,
                              const std::vector<LatticeIndex> &basis) {
  if (alpha < -1.0 || alpha > 1.0)
    throw std::invalid_argument("assemble: alpha must be in [-1, 1]");
  if (t.level != level)
    throw std::invalid_argument("assemble: quasimomentum level mismatch");

  BlochMatrix out;
  out.level = level;
  out.t = t;
  out.cell = pb.cell(level);
  out.alpha = alpha;
  out.basis = basis;

  int n = out.dim();
  out.diag.resize(n);
  out.mat = Eigen::MatrixXcd::Zero(n, n);
  int twol = 2 * pb.params().l();
  for (int i = 0; i < n; ++i) {
    Vec2 p = dual_point(basis[i], t, out.cell);
    out.diag[i] = std::pow(p.norm2(), twol / 2.0);
    out.mat(i, i) = out.diag[i];
  }
  out.scale = out.diag.maxCoeff();

  std::map<LatticeIndex, int> lookup;
  for (int i = 0; i < n; ++i)
    lookup[basis[i]] = i;

  for (const auto &[q, v] : embedded_modes(pb, level, alpha)) {
    for (int col = 0; col < n; ++col) {
      LatticeIndex row{basis[col].j1 + q.j1, basis[col].j2 + q.j2};
      auto it = lookup.find(row);
      if (it != lookup.end())
        out.mat(it->second, col) += v;
    }
  }
  return out;
}

BlochMatrix assemble(const Problem &pb, int level, const Quasimomentum &t,
                     double alpha) {
  auto basis =
      ball_basis(t, pb.cell(level), pb.rho(), pb.trunc().max_dim);
  return assemble_on_basis(pb, level, t, alpha, basis);
}

//==============================================================================
// Oracle eigensolver

namespace {

void require_hermitian(const BlochMatrix &m) {
  double dev = (m.mat - m.mat.adjoint()).cwiseAbs().maxCoeff();
  if (dev > 1e-13 * std::max(m.scale, 1.0))
    throw std::runtime_error("oracle_eigs: matrix not Hermitian (deviation " +
                             fmt_g17(dev) + ")");
}

} // namespace

std::vector<EigenPair> oracle_eigs(const BlochMatrix &m, double lo,
                                   double hi) {
  require_hermitian(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m.mat);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("oracle_eigs: eigensolver failed");
  std::vector<EigenPair> out;
  for (int i = 0; i < m.dim(); ++i) {
    double v = es.eigenvalues()[i];
    if (v >= lo && v <= hi)
      out.push_back({v, es.eigenvectors().col(i)});
  }
  return out;
}

Eigen::VectorXd oracle_eigenvalues(const BlochMatrix &m) {
  require_hermitian(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m.mat,
                                                     Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("oracle_eigenvalues: eigensolver failed");
  return es.eigenvalues();
}

double resolvent_gap(const Eigen::VectorXd &evals, cplx z, double scale) {
  double gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < evals.size(); ++i)
    gap = std::min(gap, std::abs(cplx(evals[i], 0.0) - z));
  if (gap <= 1e-12 * std::max(scale, 1.0))
    throw std::runtime_error("resolvent_gap: z is a pole (gap " +
                             fmt_g17(gap) + ")");
  return 1.0 / gap;
}

double resolvent_gap(const BlochMatrix &m, cplx z) {
  return resolvent_gap(oracle_eigenvalues(m), z, m.scale);
}

//==============================================================================
// Extended base operator

std::pair<int, int>
ExtendedBaseEigs::central_by_overlap(const LatticeIndex &m) const {
  long n = refine_n;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const BlockEigs &blk = blocks[b];
    long r1 = ((m.j1 % n) + n) % n;
    long r2 = ((m.j2 % n) + n) % n;
    if (blk.p.j1 != r1 || blk.p.j2 != r2)
      continue;
    LatticeIndex j{(m.j1 - r1) / n, (m.j2 - r2) / n};
    int row = -1;
    for (std::size_t i = 0; i < blk.sub_basis.size(); ++i)
      if (blk.sub_basis[i] == j) {
        row = static_cast<int>(i);
        break;
      }
    if (row < 0)
      throw std::runtime_error(
          "central_by_overlap: plane-wave index outside the block basis");
    int best = 0;
    double best_ov = -1.0;
    for (int c = 0; c < blk.evecs.cols(); ++c) {
      double ov = std::abs(blk.evecs(row, c));
      if (ov > best_ov + 1e-12) {
        best_ov = ov;
        best = c;
      }
    }
    return {static_cast<int>(b), best};
  }
  throw std::runtime_error("central_by_overlap: residue class not found");
}

ExtendedBaseEigs extended_base_eigs(const Problem &pb, int level,
                                    const Quasimomentum &tau) {
  if (level < 2)
    throw std::invalid_argument("extended_base_eigs: level must be >= 2");
  if (tau.level != level)
    throw std::invalid_argument("extended_base_eigs: tau level mismatch");

  ExtendedBaseEigs out;
  out.level = level;
  out.tau = tau;
  out.cell = pb.cell(level);

  RefinementOffsets offs = refinement_offsets(level, pb.params(), pb.k());
  long n_ref = offs.refine_n;
  out.refine_n = n_ref;

  // Collect the blocks, then order the union basis the way assemble() would.
  std::vector<std::pair<double, std::pair<int, int>>> order; // (|p|, (blk,row))
  for (std::size_t pi = 0; pi < offs.offsets.size(); ++pi) {
    BlockEigs blk;
    blk.p = offs.p_indices[pi];
    blk.t_p = Quasimomentum{tau.t + offs.offsets[pi], level - 1};
    blk.sub_basis = ball_basis(blk.t_p, pb.cell(level - 1), pb.rho(),
                               pb.trunc().max_dim);
    BlochMatrix sub =
        assemble_on_basis(pb, level - 1, blk.t_p, 1.0, blk.sub_basis);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(sub.mat);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("extended_base_eigs: block eigensolve failed");
    blk.evals = es.eigenvalues();
    blk.evecs = es.eigenvectors();
    int bi = static_cast<int>(out.blocks.size());
    for (std::size_t r = 0; r < blk.sub_basis.size(); ++r) {
      Vec2 p = dual_point(blk.sub_basis[r], blk.t_p, pb.cell(level - 1));
      order.push_back({p.norm(), {bi, static_cast<int>(r)}});
    }
    out.blocks.push_back(std::move(blk));
  }

  std::sort(order.begin(), order.end(), [&](const auto &a, const auto &b) {
    if (a.first != b.first)
      return a.first < b.first;
    const auto &[ba, ra] = a.second;
    const auto &[bb, rb] = b.second;
    const BlockEigs &A = out.blocks[ba];
    const BlockEigs &B = out.blocks[bb];
    LatticeIndex ma{A.sub_basis[ra].j1 * n_ref + A.p.j1,
                    A.sub_basis[ra].j2 * n_ref + A.p.j2};
    LatticeIndex mb{B.sub_basis[rb].j1 * n_ref + B.p.j1,
                    B.sub_basis[rb].j2 * n_ref + B.p.j2};
    return ma < mb;
  });

  out.basis.reserve(order.size());
  for (auto &blk : out.blocks)
    blk.pos.resize(blk.sub_basis.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto &[bi, row] = order[i].second;
    BlockEigs &blk = out.blocks[bi];
    blk.pos[row] = static_cast<int>(i);
    out.basis.push_back({blk.sub_basis[row].j1 * n_ref + blk.p.j1,
                         blk.sub_basis[row].j2 * n_ref + blk.p.j2});
  }
  return out;
}

} // namespace kamspectra
