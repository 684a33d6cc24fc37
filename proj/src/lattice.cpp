#include "kamspectra/lattice.hpp"

#include <cmath>
#include <cstdio>

#include "kamspectra/potential.hpp"

namespace kamspectra {

Vec2 dual_point(const LatticeIndex &j, const Quasimomentum &t,
                const CellSpec &cell) {
  if (t.level != cell.level)
    throw std::invalid_argument("dual_point: quasimomentum level " +
                                std::to_string(t.level) +
                                " does not match cell level " +
                                std::to_string(cell.level));
  return {static_cast<double>(j.j1) * cell.step1() + t.t.x,
          static_cast<double>(j.j2) * cell.step2() + t.t.y};
}

namespace {

// One component of the shift.  Floor division with a half-ulp snap at the
// upper cell boundary: points that land within a few ulps of the next cell
// wall are counted as belonging to it, which keeps symmetric test inputs and
// round-trips exact.
std::pair<double, long> reduce1(double x, double step) {
  double q = x / step;
  double snap = 4.0 * std::numeric_limits<double>::epsilon() *
                std::max(1.0, std::fabs(q));
  long j = static_cast<long>(std::floor(q + snap));
  double t = x - static_cast<double>(j) * step;
  if (t >= step) {
    ++j;
    t = x - static_cast<double>(j) * step;
  }
  if (t < 0.0) {
    if (t > -snap * step) {
      t = 0.0;
    } else {
      --j;
      t = x - static_cast<double>(j) * step;
    }
  }
  return {t, j};
}

} // namespace

std::pair<Quasimomentum, LatticeIndex> reduce_to_cell(const Vec2 &kappa_vec,
                                                      const CellSpec &cell) {
  auto [t1, j1] = reduce1(kappa_vec.x, cell.step1());
  auto [t2, j2] = reduce1(kappa_vec.y, cell.step2());
  return {Quasimomentum{{t1, t2}, cell.level}, LatticeIndex{j1, j2}};
}

CellSpec make_cell(const ModelParams &params, double k, int level) {
  if (level < 1)
    throw std::invalid_argument("make_cell: level must be >= 1");
  int m1 = choose_M(1, k, params);
  int mn = choose_M(level, k, params);
  CellSpec cell;
  cell.level = level;
  cell.a1 = std::ldexp(params.b1(), m1 - 1);
  cell.a2 = std::ldexp(params.b2(), m1 - 1);
  cell.n_hat = 1L << (mn - m1);
  return cell;
}

RefinementOffsets refinement_offsets(int level, const ModelParams &params,
                                     double k) {
  if (level < 2)
    throw std::invalid_argument("refinement_offsets: level must be >= 2");
  int m_prev = choose_M(level - 1, k, params);
  int m_cur = choose_M(level, k, params);
  long n = 1L << (m_cur - m_prev);
  CellSpec fine = make_cell(params, k, level);

  RefinementOffsets out;
  out.level = level;
  out.refine_n = n;
  out.offsets.reserve(static_cast<std::size_t>(n * n));
  for (long p1 = 0; p1 < n; ++p1)
    for (long p2 = 0; p2 < n; ++p2) {
      out.p_indices.push_back({p1, p2});
      out.offsets.push_back({static_cast<double>(p1) * fine.step1(),
                             static_cast<double>(p2) * fine.step2()});
    }
  return out;
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string &bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

} // namespace kamspectra
