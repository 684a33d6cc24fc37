#include "kamspectra/perturb.hpp"

#include <Eigen/SparseCore>
#include <cmath>

namespace kamspectra {

namespace {

using SpMat = Eigen::SparseMatrix<cplx>;

// Contour nodes z_q = c + rho e^{i theta_q}, theta_q = 2 pi q / Q.  The
// trapezoid rule on a circle converges geometrically for integrands analytic
// in an annulus around it.
struct Contour {
  double center, radius;
  int q;
  cplx node(int i) const {
    double th = two_pi * i / q;
    return cplx(center, 0.0) + std::polar(radius, th);
  }
  cplx unit(int i) const { return std::polar(1.0, two_pi * i / q); }
};

void check_contour(const Eigen::VectorXd &evals, double center, double radius,
                   double base) {
  int inside = 0;
  for (int i = 0; i < evals.size(); ++i) {
    double d = std::abs(evals[i] - center);
    if (std::abs(d - radius) < radius / 10.0)
      throw ResonantContour("resonant contour: eigenvalue " +
                                fmt_g17(evals[i]) +
                                " within radius/10 of the contour",
                            evals[i]);
    if (d < radius)
      ++inside;
  }
  if (inside != 1)
    throw ResonantContour("contour must enclose exactly one unperturbed "
                          "eigenvalue, found " +
                              std::to_string(inside),
                          base);
}

double relchange(const std::vector<double> &a, const std::vector<double> &b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-300});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

//------------------------------------------------------------------------
// Level 1: H_0(t) is diagonal in the plane-wave basis and W_1 has a handful
// of Fourier modes, so the integrand is evaluated with sparse products.

struct Level1Op {
  std::vector<LatticeIndex> basis; // graph-reduced basis for the quadrature
  Eigen::VectorXd diag;            // diagonal on the reduced basis
  Eigen::VectorXd ball_diag;       // full-ball diagonal for the contour check
  SpMat w;                         // alpha-independent W_1 on the basis
  int central = -1;
};

// The trace integrand only picks up residues from paths through the central
// index; terms supported away from it are analytic inside the contour and
// integrate to zero.  So the quadrature runs on the sub-basis reachable from
// the central index in <= R potential-mode hops (intersected with the ball),
// while the single-pole check still scans the full ball diagonal.
Level1Op level1_op(const Problem &pb, const Vec2 &kappa, int R) {
  Level1Op op;
  CellSpec cell = pb.cell(1);
  auto [t, j] = reduce_to_cell(kappa, cell);
  auto ball = ball_basis(t, cell, pb.rho(), pb.trunc().max_dim);

  std::map<LatticeIndex, int> in_ball;
  for (std::size_t i = 0; i < ball.size(); ++i)
    in_ball[ball[i]] = static_cast<int>(i);
  if (!in_ball.count(j))
    throw std::runtime_error("series: momentum point outside the basis ball");

  int twol = 2 * pb.params().l();
  op.ball_diag.resize(static_cast<int>(ball.size()));
  for (std::size_t i = 0; i < ball.size(); ++i)
    op.ball_diag[static_cast<int>(i)] =
        std::pow(dual_point(ball[i], t, cell).norm2(), twol / 2.0);

  const CoeffMap &modes = pb.window(1).coeffs;
  std::map<LatticeIndex, int> keep;
  keep[j] = 0;
  std::vector<LatticeIndex> frontier{j};
  for (int depth = 0; depth < R && !frontier.empty(); ++depth) {
    std::vector<LatticeIndex> next;
    for (const auto &b : frontier)
      for (const auto &[q, v] : modes) {
        LatticeIndex c{b.j1 + q.j1, b.j2 + q.j2};
        if (!keep.count(c) && in_ball.count(c)) {
          keep[c] = 0;
          next.push_back(c);
        }
      }
    frontier = std::move(next);
  }

  op.basis.reserve(keep.size());
  for (const auto &b : ball)
    if (keep.count(b))
      op.basis.push_back(b);

  std::map<LatticeIndex, int> lookup;
  for (std::size_t i = 0; i < op.basis.size(); ++i)
    lookup[op.basis[i]] = static_cast<int>(i);
  op.central = lookup.at(j);

  int n = static_cast<int>(op.basis.size());
  op.diag.resize(n);
  for (int i = 0; i < n; ++i)
    op.diag[i] =
        std::pow(dual_point(op.basis[i], t, cell).norm2(), twol / 2.0);

  std::vector<Eigen::Triplet<cplx>> trips;
  for (const auto &[q, v] : modes)
    for (int col = 0; col < n; ++col) {
      auto row = lookup.find({op.basis[col].j1 + q.j1, op.basis[col].j2 + q.j2});
      if (row != lookup.end())
        trips.push_back({row->second, col, v});
    }
  op.w.resize(n, n);
  op.w.setFromTriplets(trips.begin(), trips.end());
  return op;
}

// One quadrature pass at fixed Q; fills g (and G).
void quad_level1(const Level1Op &op, const Contour &ct, int R, bool with_G,
                 std::vector<cplx> &g, std::vector<Eigen::MatrixXcd> &G,
                 double &res_max) {
  int n = static_cast<int>(op.basis.size());
  g.assign(R, cplx(0, 0));
  if (with_G)
    G.assign(R, Eigen::MatrixXcd::Zero(n, n));
  res_max = 0.0;

  Eigen::VectorXcd dinv(n);
  for (int iq = 0; iq < ct.q; ++iq) {
    cplx z = ct.node(iq);
    cplx u = ct.unit(iq);
    double rmax = 0.0;
    for (int i = 0; i < n; ++i) {
      cplx d = cplx(op.diag[i], 0.0) - z;
      dinv[i] = 1.0 / d;
      rmax = std::max(rmax, std::abs(dinv[i]));
    }
    res_max = std::max(res_max, rmax);

    SpMat m = dinv.asDiagonal() * op.w;
    SpMat power = m;
    for (int r = 1; r <= R; ++r) {
      if (r > 1)
        power = (power * m).pruned();
      cplx tr = 0.0;
      for (int kcol = 0; kcol < power.outerSize(); ++kcol)
        tr += power.coeff(kcol, kcol);
      // g_r += (-1)^r rho/(r Q) * Tr * e^{i theta}
      double sign = (r % 2 == 0) ? 1.0 : -1.0;
      g[r - 1] += sign * ct.radius / (r * ct.q) * tr * u;
      if (with_G) {
        Eigen::MatrixXcd mr = Eigen::MatrixXcd(power) * dinv.asDiagonal();
        G[r - 1] += (-sign) * ct.radius / ct.q * u * mr;
      }
    }
  }
}

//------------------------------------------------------------------------
// Level n >= 2: the base operator is diagonalized blockwise; the integrand
// is evaluated in its eigenbasis where the resolvent is diagonal.

struct LevelNOp {
  ExtendedBaseEigs base;
  Eigen::VectorXd evals;   // flattened eigenvalues, block by block
  std::vector<int> eoff;   // eigen-index offset per block
  Eigen::MatrixXcd wtil;   // W_n in the base eigenbasis
  int central = -1;        // eigen index of the chain eigenvalue
  int central_pos = -1;    // plane-wave position of the chain index
  double base_value = 0.0;
};

LevelNOp leveln_op(const Problem &pb, int level, const Vec2 &kappa) {
  LevelNOp op;
  CellSpec cell = pb.cell(level);
  auto [tau, m] = reduce_to_cell(kappa, cell);
  op.base = extended_base_eigs(pb, level, tau);

  int n = op.base.dim();
  op.evals.resize(n);
  op.eoff.resize(op.base.blocks.size());
  int off = 0;
  for (std::size_t b = 0; b < op.base.blocks.size(); ++b) {
    op.eoff[b] = off;
    const auto &blk = op.base.blocks[b];
    for (int i = 0; i < blk.evals.size(); ++i)
      op.evals[off + i] = blk.evals[i];
    off += static_cast<int>(blk.evals.size());
  }

  auto [cb, cc] = op.base.central_by_overlap(m);
  op.central = op.eoff[cb] + cc;
  op.base_value = op.base.blocks[cb].evals[cc];
  for (std::size_t i = 0; i < op.base.basis.size(); ++i)
    if (op.base.basis[i] == m)
      op.central_pos = static_cast<int>(i);

  // W_level dense in the plane-wave basis, then into the eigenbasis
  // blockwise: wtil(I,J) = U_I^H W(I,J) U_J.
  const WindowedPotential &w = pb.window(level);
  std::map<LatticeIndex, int> lookup;
  for (int i = 0; i < n; ++i)
    lookup[op.base.basis[i]] = i;
  Eigen::MatrixXcd wd = Eigen::MatrixXcd::Zero(n, n);
  for (const auto &[q, v] : w.coeffs)
    for (int col = 0; col < n; ++col) {
      auto row = lookup.find({op.base.basis[col].j1 + q.j1,
                              op.base.basis[col].j2 + q.j2});
      if (row != lookup.end())
        wd(row->second, col) += v;
    }

  op.wtil.resize(n, n);
  for (std::size_t bi = 0; bi < op.base.blocks.size(); ++bi)
    for (std::size_t bj = 0; bj < op.base.blocks.size(); ++bj) {
      const auto &A = op.base.blocks[bi];
      const auto &B = op.base.blocks[bj];
      Eigen::MatrixXcd slab(A.pos.size(), B.pos.size());
      for (std::size_t a = 0; a < A.pos.size(); ++a)
        for (std::size_t b = 0; b < B.pos.size(); ++b)
          slab(a, b) = wd(A.pos[a], B.pos[b]);
      op.wtil.block(op.eoff[bi], op.eoff[bj], A.pos.size(), B.pos.size()) =
          A.evecs.adjoint() * slab * B.evecs;
    }
  return op;
}

void quad_leveln(const LevelNOp &op, const Contour &ct, int R, bool with_G,
                 std::vector<cplx> &g, std::vector<Eigen::MatrixXcd> &G,
                 double &res_max) {
  int n = static_cast<int>(op.evals.size());
  g.assign(R, cplx(0, 0));
  if (with_G)
    G.assign(R, Eigen::MatrixXcd::Zero(n, n));
  res_max = 0.0;

  Eigen::VectorXcd dinv(n);
  Eigen::MatrixXcd m(n, n), power;
  for (int iq = 0; iq < ct.q; ++iq) {
    cplx z = ct.node(iq);
    cplx u = ct.unit(iq);
    double rmax = 0.0;
    for (int i = 0; i < n; ++i) {
      dinv[i] = 1.0 / (cplx(op.evals[i], 0.0) - z);
      rmax = std::max(rmax, std::abs(dinv[i]));
    }
    res_max = std::max(res_max, rmax);

    m = dinv.asDiagonal() * op.wtil;
    for (int r = 1; r <= R; ++r) {
      cplx tr;
      if (r == 1) {
        tr = m.diagonal().sum();
      } else if (r == 2) {
        tr = (m.array() * m.transpose().array()).sum();
        power = m * m;
      } else {
        power = power * m;
        tr = power.trace();
      }
      double sign = (r % 2 == 0) ? 1.0 : -1.0;
      g[r - 1] += sign * ct.radius / (r * ct.q) * tr * u;
      if (with_G) {
        Eigen::MatrixXcd mr =
            (r == 1 ? m : (r == 2 ? (m * m).eval() : power)) *
            dinv.asDiagonal();
        G[r - 1] += (-sign) * ct.radius / ct.q * u * mr;
      }
    }
  }
}

} // namespace

//==============================================================================

double SeriesCoefficients::tail_bound(double alpha, int R, int dim) const {
  double q = tail_ratio * std::abs(alpha);
  if (q >= 0.99)
    return std::numeric_limits<double>::infinity();
  return contour.radius * dim * std::pow(q, R + 1) / (1.0 - q);
}

int default_order(const Problem &pb, int level) {
  return level == 1 ? pb.trunc().series_order : pb.trunc().series_order_high;
}

SeriesCoefficients series_coefficients(const Problem &pb, int level,
                                       const Vec2 &kappa_vec, int R,
                                       bool with_G) {
  if (R < 1)
    throw std::invalid_argument("series_coefficients: R must be >= 1");

  SeriesCoefficients out;
  out.level = level;

  std::optional<Level1Op> op1;
  std::optional<LevelNOp> opn;
  Eigen::VectorXd evals;
  double wsum = pb.window(level).sum_abs;
  int dim = 0;

  if (level == 1) {
    op1 = level1_op(pb, kappa_vec, R);
    out.base = op1->diag[op1->central];
    out.basis = op1->basis;
    out.central_pos = op1->central;
    evals = op1->ball_diag;
    dim = static_cast<int>(op1->basis.size());
  } else {
    opn = leveln_op(pb, level, kappa_vec);
    out.base = opn->base_value;
    out.basis = opn->base.basis;
    out.central_pos = opn->central_pos;
    evals = opn->evals;
    dim = static_cast<int>(opn->evals.size());
  }

  Contour ct{out.base, pb.contour_radius(level), pb.trunc().contour_q};
  check_contour(evals, ct.center, ct.radius, out.base);

  std::vector<cplx> gz, gz_prev;
  std::vector<Eigen::MatrixXcd> Gz;
  double res_max = 0.0;
  bool converged = false;
  std::vector<double> gr(R), gr_prev(R);
  while (true) {
    if (level == 1)
      quad_level1(*op1, ct, R, with_G, gz, Gz, res_max);
    else
      quad_leveln(*opn, ct, R, with_G, gz, Gz, res_max);
    for (int r = 0; r < R; ++r)
      gr[r] = gz[r].real();
    if (!gz_prev.empty() && relchange(gr, gr_prev) < 1e-10) {
      converged = true;
      break;
    }
    gz_prev = gz;
    gr_prev = gr;
    if (ct.q * 2 > pb.trunc().max_contour_q)
      break;
    ct.q *= 2;
  }
  if (!converged)
    throw std::runtime_error(
        "series_coefficients: contour quadrature did not converge at Q=" +
        std::to_string(ct.q));

  out.contour = ContourSpec{ct.center, ct.radius, ct.q};
  out.q_used = ct.q;
  out.g = gr;
  for (const auto &z : gz)
    out.max_imag = std::max(out.max_imag, std::abs(z.imag()));
  out.resolvent_max = res_max;
  out.tail_ratio = res_max * wsum;

  if (with_G) {
    if (level == 1) {
      out.G = std::move(Gz);
    } else {
      // back to the plane-wave basis: G = U Gtil U^H, blockwise
      out.G.reserve(Gz.size());
      int n = dim;
      for (auto &Gt : Gz) {
        Eigen::MatrixXcd Gp = Eigen::MatrixXcd::Zero(n, n);
        const auto &blocks = opn->base.blocks;
        Eigen::MatrixXcd left(n, n);
        for (std::size_t bi = 0; bi < blocks.size(); ++bi)
          left.middleRows(opn->eoff[bi], blocks[bi].evals.size()) =
              blocks[bi].evecs *
              Gt.middleRows(opn->eoff[bi], blocks[bi].evals.size());
        // left currently holds U*Gt in eigen-column space; finish columns
        Eigen::MatrixXcd full(n, n);
        for (std::size_t bj = 0; bj < blocks.size(); ++bj)
          full.middleCols(opn->eoff[bj], blocks[bj].evals.size()) =
              left.middleCols(opn->eoff[bj], blocks[bj].evals.size()) *
              blocks[bj].evecs.adjoint();
        // scatter from block-eigen layout to plane-wave positions
        for (std::size_t bi = 0; bi < blocks.size(); ++bi)
          for (std::size_t a = 0; a < blocks[bi].pos.size(); ++a)
            for (std::size_t bj = 0; bj < blocks.size(); ++bj)
              for (std::size_t b = 0; b < blocks[bj].pos.size(); ++b)
                Gp(blocks[bi].pos[a], blocks[bj].pos[b]) =
                    full(opn->eoff[bi] + a, opn->eoff[bj] + b);
        out.G.push_back(std::move(Gp));
      }
    }
  }
  return out;
}

double g2_closed_form(const Problem &pb, const Vec2 &kappa_vec) {
  CellSpec cell = pb.cell(1);
  auto [t, j] = reduce_to_cell(kappa_vec, cell);
  (void)t;
  int twol = 2 * pb.params().l();
  double dj = std::pow(kappa_vec.norm2(), twol / 2.0);
  double sum = 0.0;
  for (const auto &[q, w] : pb.window(1).coeffs) {
    Vec2 v{kappa_vec.x + static_cast<double>(q.j1) * cell.step1(),
           kappa_vec.y + static_cast<double>(q.j2) * cell.step2()};
    double denom = dj - std::pow(v.norm2(), twol / 2.0);
    if (std::abs(denom) <= 1e-10 * std::max(pb.lambda(), 1.0))
      throw ResonantPair("g2_closed_form: vanishing denominator at j=(" +
                             std::to_string(j.j1) + "," +
                             std::to_string(j.j2) + "), q=(" +
                             std::to_string(q.j1) + "," +
                             std::to_string(q.j2) + ")",
                         j, q);
    sum += std::norm(w) / denom;
  }
  return sum;
}

SeriesEigenvalue eigenvalue_series(const Problem &pb, int level,
                                   const Vec2 &kappa_vec, double alpha,
                                   int R) {
  SeriesCoefficients sc = series_coefficients(pb, level, kappa_vec, R, false);
  SeriesEigenvalue out;
  out.level = level;
  out.alpha = alpha;
  out.base = sc.base;
  out.g = sc.g;
  out.tail = sc.tail_bound(alpha, R, static_cast<int>(sc.basis.size()));
  double v = sc.base;
  double ar = 1.0;
  for (int r = 1; r <= R; ++r) {
    ar *= alpha;
    v += ar * sc.g[r - 1];
  }
  out.value = v;
  return out;
}

SeriesProjection projection_series(const Problem &pb, int level,
                                   const Vec2 &kappa_vec, double alpha,
                                   int R) {
  SeriesCoefficients sc = series_coefficients(pb, level, kappa_vec, R, true);
  int n = static_cast<int>(sc.basis.size());

  SeriesProjection out;
  out.level = level;
  out.alpha = alpha;
  out.basis = sc.basis;
  out.central_pos = sc.central_pos;

  Eigen::MatrixXcd e = Eigen::MatrixXcd::Zero(n, n);
  if (level == 1) {
    e(sc.central_pos, sc.central_pos) = 1.0;
  } else {
    // embedded projector on the level-(n-1) eigenvector of the chain
    LevelNOp op = leveln_op(pb, level, kappa_vec);
    auto [cb, cc] = op.base.central_by_overlap(op.base.basis[sc.central_pos]);
    const auto &blk = op.base.blocks[cb];
    Eigen::VectorXcd v = Eigen::VectorXcd::Zero(n);
    for (std::size_t i = 0; i < blk.pos.size(); ++i)
      v[blk.pos[i]] = blk.evecs(i, cc);
    e = v * v.adjoint();
  }

  double ar = 1.0;
  for (int r = 1; r <= R; ++r) {
    ar *= alpha;
    e += ar * sc.G[r - 1];
  }
  out.total = e;
  out.G = sc.G;
  out.trace_dev = std::abs(e.trace() - cplx(1.0, 0.0));
  double nrm = e.norm();
  out.idem_dev = nrm > 0.0 ? (e * e - e).norm() / nrm : 0.0;
  return out;
}

namespace {

// Exact gradient of p_j^{2l} + alpha^2 g2 (the R=2 series) for the
// Richardson reference.
Vec2 grad_series2_exact(const Problem &pb, const Vec2 &kappa, double alpha) {
  CellSpec cell = pb.cell(1);
  int l = pb.params().l();
  double twol = 2.0 * l;
  auto grad_pow = [&](const Vec2 &v) {
    double f = twol * std::pow(v.norm2(), l - 1.0);
    return Vec2{f * v.x, f * v.y};
  };
  Vec2 g = grad_pow(kappa);
  double dj = std::pow(kappa.norm2(), static_cast<double>(l));
  for (const auto &[q, w] : pb.window(1).coeffs) {
    Vec2 v{kappa.x + static_cast<double>(q.j1) * cell.step1(),
           kappa.y + static_cast<double>(q.j2) * cell.step2()};
    double dq = std::pow(v.norm2(), static_cast<double>(l));
    double denom = dj - dq;
    Vec2 dd = grad_pow(kappa) - grad_pow(v);
    double c = -std::norm(w) / (denom * denom) * alpha * alpha;
    g = g + Vec2{c * dd.x, c * dd.y};
  }
  return g;
}

} // namespace

DerivativeReport derivative_checks(const Problem &pb, int level,
                                   const Vec2 &kappa_vec, double alpha) {
  DerivativeReport rep;
  double k = kappa_vec.norm();
  int l = pb.params().l();
  double h = 1e-4 * k;
  if (h < 64.0 * std::numeric_limits<double>::epsilon() * k)
    throw std::invalid_argument("derivative_checks: step size underflow");

  auto f = [&](const Vec2 &x) {
    return eigenvalue_series(pb, level, x, alpha, 2).value;
  };

  auto fd_grad = [&](double step) {
    return Vec2{(f({kappa_vec.x + step, kappa_vec.y}) -
                 f({kappa_vec.x - step, kappa_vec.y})) /
                    (2.0 * step),
                (f({kappa_vec.x, kappa_vec.y + step}) -
                 f({kappa_vec.x, kappa_vec.y - step})) /
                    (2.0 * step)};
  };

  rep.grad_fd = fd_grad(h);
  double c = 2.0 * l * std::pow(k, 2.0 * l - 2.0);
  rep.grad_formula = {c * kappa_vec.x, c * kappa_vec.y};
  rep.rel_dev = (rep.grad_fd - rep.grad_formula).norm() /
                rep.grad_formula.norm();

  // second differences against the 4 l^2 k^{2l-2} bound
  double h2 = 1e-3 * k;
  double f0 = f(kappa_vec);
  double dxx = (f({kappa_vec.x + h2, kappa_vec.y}) - 2.0 * f0 +
                f({kappa_vec.x - h2, kappa_vec.y})) /
               (h2 * h2);
  double dyy = (f({kappa_vec.x, kappa_vec.y + h2}) - 2.0 * f0 +
                f({kappa_vec.x, kappa_vec.y - h2})) /
               (h2 * h2);
  double dxy = (f({kappa_vec.x + h2, kappa_vec.y + h2}) -
                f({kappa_vec.x + h2, kappa_vec.y - h2}) -
                f({kappa_vec.x - h2, kappa_vec.y + h2}) +
                f({kappa_vec.x - h2, kappa_vec.y - h2})) /
               (4.0 * h2 * h2);
  rep.hess_max = std::max({std::abs(dxx), std::abs(dyy), std::abs(dxy)});
  rep.hess_bound = 4.0 * l * l * std::pow(k, 2.0 * l - 2.0);

  if (level == 1) {
    Vec2 exact = grad_series2_exact(pb, kappa_vec, alpha);
    double e1 = (fd_grad(h) - exact).norm();
    double e2 = (fd_grad(h / 2.0) - exact).norm();
    rep.richardson_ratio = e2 > 0.0 ? e1 / e2 : 4.0;
  }
  return rep;
}

} // namespace kamspectra
