#include "kamspectra/isoenergetic.hpp"

#include <algorithm>
#include <cmath>

namespace kamspectra {

//==============================================================================
// AngleDomain

AngleDomain AngleDomain::full() {
  AngleDomain d;
  d.iv_ = {{0.0, two_pi}};
  return d;
}

AngleDomain AngleDomain::from_intervals(std::vector<AngleInterval> iv) {
  std::vector<AngleInterval> norm;
  for (auto [lo, hi] : iv) {
    if (hi <= lo)
      continue;
    double len = hi - lo;
    if (len >= two_pi) {
      norm.push_back({0.0, two_pi});
      continue;
    }
    double l = std::fmod(lo, two_pi);
    if (l < 0.0)
      l += two_pi;
    double h = l + len;
    if (h <= two_pi) {
      norm.push_back({l, h});
    } else {
      norm.push_back({l, two_pi});
      norm.push_back({0.0, h - two_pi});
    }
  }
  std::sort(norm.begin(), norm.end(),
            [](const AngleInterval &a, const AngleInterval &b) {
              return a.lo < b.lo;
            });
  AngleDomain d;
  for (const auto &seg : norm) {
    if (!d.iv_.empty() && seg.lo <= d.iv_.back().hi) {
      d.iv_.back().hi = std::max(d.iv_.back().hi, seg.hi);
    } else {
      d.iv_.push_back(seg);
    }
  }
  return d;
}

double AngleDomain::length() const {
  double s = 0.0;
  for (const auto &seg : iv_)
    s += seg.length();
  return s;
}

bool AngleDomain::is_full() const {
  return iv_.size() == 1 && iv_[0].lo == 0.0 && iv_[0].hi == two_pi;
}

bool AngleDomain::contains(double phi, double tol) const {
  phi = std::fmod(phi, two_pi);
  if (phi < 0.0)
    phi += two_pi;
  for (const auto &seg : iv_)
    if (phi >= seg.lo - tol && phi <= seg.hi + tol)
      return true;
  return false;
}

AngleDomain AngleDomain::subtract(const std::vector<AngleInterval> &holes) const {
  AngleDomain hole_dom = AngleDomain::from_intervals(holes);
  std::vector<AngleInterval> out;
  for (const auto &seg : iv_) {
    double cur = seg.lo;
    for (const auto &h : hole_dom.iv_) {
      if (h.hi <= cur || h.lo >= seg.hi)
        continue;
      if (h.lo > cur)
        out.push_back({cur, h.lo});
      cur = std::max(cur, h.hi);
      if (cur >= seg.hi)
        break;
    }
    if (cur < seg.hi)
      out.push_back({cur, seg.hi});
  }
  AngleDomain d;
  d.iv_ = std::move(out);
  return d;
}

std::vector<AngleInterval> AngleDomain::complement() const {
  AngleDomain f = full();
  return f.subtract(iv_).intervals();
}

bool AngleDomain::subset_of(const AngleDomain &other, double tol) const {
  for (const auto &seg : iv_) {
    bool covered = false;
    for (const auto &o : other.iv_)
      if (seg.lo >= o.lo - tol && seg.hi <= o.hi + tol) {
        covered = true;
        break;
      }
    if (!covered)
      return false;
  }
  return true;
}

//==============================================================================
// IsoCurve

double IsoCurve::length() const {
  double acc = 0.0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const CurveSample &a = samples[i - 1];
    const CurveSample &b = samples[i];
    double mid = 0.5 * (a.phi + b.phi);
    bool in_hole = false;
    for (const auto &h : holes)
      if (mid > h.lo && mid < h.hi) {
        in_hole = true;
        break;
      }
    if (in_hole)
      continue;
    double fa = std::sqrt(a.kappa * a.kappa + a.dkappa_dphi * a.dkappa_dphi);
    double fb = std::sqrt(b.kappa * b.kappa + b.dkappa_dphi * b.dkappa_dphi);
    acc += 0.5 * (fa + fb) * (b.phi - a.phi);
  }
  return acc;
}

namespace {

std::size_t locate(const std::vector<CurveSample> &s, double phi) {
  auto it = std::lower_bound(
      s.begin(), s.end(), phi,
      [](const CurveSample &a, double p) { return a.phi < p; });
  if (it == s.begin())
    return 0;
  if (it == s.end())
    return s.size() - 1;
  return static_cast<std::size_t>(it - s.begin());
}

} // namespace

double IsoCurve::kappa_at(double phi) const {
  if (samples.empty())
    throw std::runtime_error("IsoCurve::kappa_at: empty curve");
  std::size_t hi = locate(samples, phi);
  if (hi == 0)
    return samples[0].kappa;
  const CurveSample &a = samples[hi - 1];
  const CurveSample &b = samples[hi];
  if (b.phi == a.phi)
    return a.kappa;
  double w = (phi - a.phi) / (b.phi - a.phi);
  return a.kappa + w * (b.kappa - a.kappa);
}

double IsoCurve::dkappa_at(double phi) const {
  if (samples.empty())
    throw std::runtime_error("IsoCurve::dkappa_at: empty curve");
  std::size_t hi = locate(samples, phi);
  if (hi == 0)
    return samples[0].dkappa_dphi;
  const CurveSample &a = samples[hi - 1];
  const CurveSample &b = samples[hi];
  if (b.phi == a.phi)
    return a.dkappa_dphi;
  double w = (phi - a.phi) / (b.phi - a.phi);
  return a.dkappa_dphi + w * (b.dkappa_dphi - a.dkappa_dphi);
}

cplx IsoCurve::kappa_ext(cplx phi) const {
  if (samples.empty())
    throw std::runtime_error("IsoCurve::kappa_ext: empty curve");
  double pr = phi.real();
  std::size_t hi = locate(samples, pr);
  std::size_t i0 = hi == 0 ? 0 : hi - 1;
  const CurveSample &s0 = samples[i0];
  // second derivative from neighboring first-derivative samples
  double kpp = 0.0;
  if (i0 + 1 < samples.size() && samples[i0 + 1].phi > s0.phi) {
    kpp = (samples[i0 + 1].dkappa_dphi - s0.dkappa_dphi) /
          (samples[i0 + 1].phi - s0.phi);
  } else if (i0 > 0 && s0.phi > samples[i0 - 1].phi) {
    kpp = (s0.dkappa_dphi - samples[i0 - 1].dkappa_dphi) /
          (s0.phi - samples[i0 - 1].phi);
  }
  cplx d = phi - cplx(s0.phi, 0.0);
  return cplx(s0.kappa, 0.0) + cplx(s0.dkappa_dphi, 0.0) * d +
         0.5 * kpp * d * d;
}

//==============================================================================
// Free-surface geometry

namespace {

// Dual-lattice points p_m(0), m != 0, with |p_m| <= rmax.
std::vector<std::pair<LatticeIndex, Vec2>> lattice_points(const CellSpec &cell,
                                                          double rmax) {
  std::vector<std::pair<LatticeIndex, Vec2>> out;
  long n1 = static_cast<long>(std::ceil(rmax / cell.step1())) + 1;
  long n2 = static_cast<long>(std::ceil(rmax / cell.step2())) + 1;
  for (long j1 = -n1; j1 <= n1; ++j1)
    for (long j2 = -n2; j2 <= n2; ++j2) {
      if (j1 == 0 && j2 == 0)
        continue;
      Vec2 p{static_cast<double>(j1) * cell.step1(),
             static_cast<double>(j2) * cell.step2()};
      if (p.norm() <= rmax)
        out.push_back({{j1, j2}, p});
    }
  return out;
}

} // namespace

std::vector<SelfIntersection> self_intersections(double k,
                                                 const CellSpec &cell) {
  std::vector<SelfIntersection> out;
  for (const auto &[m, pm] : lattice_points(cell, 2.0 * k)) {
    double c = pm.norm();
    if (c > 2.0 * k || c == 0.0)
      continue;
    double phic = std::atan2(pm.y, pm.x);
    double u = std::acos(std::clamp(-c / (2.0 * k), -1.0, 1.0));
    for (double phi : {phic + u, phic - u}) {
      phi = std::fmod(phi, two_pi);
      if (phi < 0.0)
        phi += two_pi;
      SelfIntersection si;
      si.phi = phi;
      si.kappa = k * nu_of(phi);
      auto [t, j] = reduce_to_cell(si.kappa, cell);
      si.t = t;
      si.j = j;
      si.q = {j.j1 + m.j1, j.j2 + m.j2};
      out.push_back(si);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const SelfIntersection &a, const SelfIntersection &b) {
              return a.phi < b.phi;
            });
  return out;
}

namespace {

// min over m != 0 of | |k nu(phi) + p_m|^2 - k^2 |
double gap_function(double phi, double k,
                    const std::vector<std::pair<LatticeIndex, Vec2>> &pts) {
  Vec2 kv = k * nu_of(phi);
  double best = std::numeric_limits<double>::infinity();
  for (const auto &[m, p] : pts) {
    double v = std::abs((kv + p).norm2() - k * k);
    best = std::min(best, v);
  }
  return best;
}

double bisect_gap_boundary(double lo, double hi, double k, double thr,
                           const std::vector<std::pair<LatticeIndex, Vec2>> &pts,
                           bool below_at_lo) {
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    bool below = gap_function(mid, k, pts) < thr;
    if (below == below_at_lo)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-10)
      break;
  }
  return 0.5 * (lo + hi);
}

} // namespace

AngleDomain chi1(const Problem &pb, double lambda, int grid,
                 bool *below_asymptotic) {
  const ModelParams &mp = pb.params();
  double k = mp.k_of_lambda(lambda);
  CellSpec cell = pb.cell(1);
  double thr = 2.0 * std::pow(k, -4.0 * mp.s1() - mp.delta());
  auto pts = lattice_points(cell, 2.0 * k + 1.0);
  if (below_asymptotic)
    *below_asymptotic = pts.empty();
  if (pts.empty())
    return AngleDomain::full();

  double h = two_pi / grid;
  std::vector<char> below(grid);
  for (int i = 0; i < grid; ++i)
    below[i] = gap_function(i * h, k, pts) < thr ? 1 : 0;

  std::vector<AngleInterval> holes;
  auto add_hole = [&](double lo, double hi) {
    // widened by one grid cell on each side (conservative Theta_1)
    holes.push_back({lo - h, hi + h});
  };

  // runs of below-threshold grid points
  int i = 0;
  while (i < grid) {
    if (!below[i]) {
      ++i;
      continue;
    }
    int j = i;
    while (j + 1 < grid && below[j + 1])
      ++j;
    double lo = (i == 0 && below[grid - 1])
                    ? i * h // wrapped run handled by normalization
                    : bisect_gap_boundary((i - 1) * h, i * h, k, thr, pts,
                                          false);
    double hi = (j == grid - 1 && below[0])
                    ? (j + 1) * h
                    : bisect_gap_boundary(j * h, (j + 1) * h, k, thr, pts,
                                          true);
    add_hole(lo, hi);
    i = j + 1;
  }

  // dips narrower than the grid: every exact self-intersection is a zero of
  // the gap, so make sure each one sits inside a hole
  for (const auto &si : self_intersections(k, cell)) {
    bool inside = false;
    for (const auto &hole : holes) {
      double p = si.phi;
      if ((p >= hole.lo && p <= hole.hi) ||
          (p + two_pi >= hole.lo && p + two_pi <= hole.hi) ||
          (p - two_pi >= hole.lo && p - two_pi <= hole.hi)) {
        inside = true;
        break;
      }
    }
    if (inside)
      continue;
    // widen outward until the gap clears the threshold, then bisect
    double l0 = si.phi - h;
    while (gap_function(l0, k, pts) < thr && si.phi - l0 < two_pi)
      l0 -= h;
    double lo = bisect_gap_boundary(l0, si.phi, k, thr, pts, false);
    double r0 = si.phi + h;
    while (gap_function(r0, k, pts) < thr && r0 - si.phi < two_pi)
      r0 += h;
    double hi2 = bisect_gap_boundary(si.phi, r0, k, thr, pts, true);
    add_hole(lo, hi2);
  }

  return AngleDomain::full().subtract(holes);
}

//==============================================================================
// Curve tracing

std::pair<double, double> trace_kappa(const Problem &pb, int level,
                                      double lambda, double phi, double alpha,
                                      const IsoCurve *prev_curve) {
  const ModelParams &mp = pb.params();
  double k = mp.k_of_lambda(lambda);
  if (level == 0)
    return {k, 0.0};

  double center, width;
  if (level == 1) {
    center = k;
    width = std::pow(k, -1.0 - 4.0 * mp.s1() - 2.0 * mp.delta());
  } else {
    if (!prev_curve)
      throw std::invalid_argument("trace_kappa: level >= 2 needs prev_curve");
    center = prev_curve->kappa_at(phi);
    width = pb.epsilon(level - 1) *
            std::pow(k, -2.0 * mp.l() + 1.0 - mp.delta());
  }

  Vec2 nu = nu_of(phi);
  auto F = [&](double kap) {
    return eigenvalue_series(pb, level, kap * nu, alpha,
                             default_order(pb, level))
               .value -
           lambda;
  };

  double tol = 1e-10 * lambda;
  // Iterate well past the contract tolerance: the sign of kappa - k carries
  // meaning (h_1 < 0) and needs the root resolved to the rounding floor.
  double floor_tol = 8.0 * std::numeric_limits<double>::epsilon() * lambda;
  double kap = center;
  double f;
  try {
    f = F(kap);
  } catch (const ResonantContour &e) {
    throw BracketFailure(std::string("trace_kappa: series unavailable (") +
                         e.what() + ")");
  }

  // Safeguarded Newton with the monotone leading derivative 2 l kappa^{2l-1}.
  bool converged = false;
  for (int it = 0; it < 60 && !converged; ++it) {
    if (std::abs(f) <= floor_tol) {
      converged = true;
      break;
    }
    double fp = 2.0 * mp.l() * std::pow(kap, 2.0 * mp.l() - 1.0);
    double next = kap - f / fp;
    if (next < center - width || next > center + width) {
      // Newton left the bracket: verify there is a sign change at all
      double fa = F(center - width);
      double fb = F(center + width);
      if (fa * fb > 0.0)
        throw BracketFailure("trace_kappa: no sign change in the level "
                             "bracket (phi likely in a hole)");
      // plain bisection fallback
      double lo = center - width, hi = center + width;
      double flo = fa;
      for (int b = 0; b < 200; ++b) {
        double mid = 0.5 * (lo + hi);
        double fm = F(mid);
        kap = mid;
        f = fm;
        if (std::abs(fm) <= floor_tol ||
            hi - lo < 4.0 * std::numeric_limits<double>::epsilon() * kap)
          break;
        if ((flo < 0.0) == (fm < 0.0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      if (std::abs(f) > tol)
        throw std::runtime_error("trace_kappa: bisection stalled");
      converged = true;
      break;
    }
    kap = next;
    f = F(kap);
  }
  if (!converged && std::abs(f) > tol)
    throw std::runtime_error("trace_kappa: Newton did not converge");

  // dkappa/dphi by the implicit-function quotient.
  double hphi = 1e-4;
  auto lam_at = [&](double p, double kk) {
    return eigenvalue_series(pb, level, kk * nu_of(p), alpha,
                             default_order(pb, level))
        .value;
  };
  double dphi = (lam_at(phi + hphi, kap) - lam_at(phi - hphi, kap)) /
                (2.0 * hphi);
  double hk = 1e-7 * k;
  double dk = (F(kap + hk) - F(kap - hk)) / (2.0 * hk);
  return {kap, -dphi / dk};
}

IsoCurve curve(const Problem &pb, int level, double lambda, double alpha,
               const AngleDomain &theta, const IsoCurve *prev_curve,
               const CurveOptions &opt) {
  IsoCurve out;
  out.level = level;
  out.lambda = lambda;
  out.alpha = alpha;
  out.domain = theta;
  out.holes = theta.complement();
  out.grid = opt.grid;

  double k = pb.params().k_of_lambda(lambda);

  if (level == 0) {
    // free operator: the perfect circle, closed loop over [0, 2*pi]
    int n = opt.grid;
    out.domain = AngleDomain::full();
    out.holes.clear();
    out.samples.reserve(n + 1);
    for (int i = 0; i <= n; ++i)
      out.samples.push_back({two_pi * i / n, k, 0.0});
    return out;
  }

  struct Item {
    double phi;
    bool ok = false;
    double kap = 0.0, dk = 0.0;
  };
  std::vector<double> phis;
  for (const auto &seg : theta.intervals()) {
    int n = std::max(4, static_cast<int>(std::lround(
                            opt.grid * seg.length() / two_pi)));
    for (int i = 0; i <= n; ++i)
      phis.push_back(seg.lo + seg.length() * i / n);
  }

  std::vector<Item> items;
  std::function<Item(std::size_t)> solve = [&](std::size_t i) {
    Item it;
    it.phi = phis[i];
    try {
      auto [kap, dk] = trace_kappa(pb, level, lambda, phis[i], alpha,
                                   prev_curve);
      it.ok = true;
      it.kap = kap;
      it.dk = dk;
    } catch (const BracketFailure &) {
      it.ok = false;
    }
    return it;
  };
  parallel_map<Item>(phis.size(), pb.threads(), items, solve);

  // adaptive refinement where the radius jumps
  double split_tol = opt.split_tol_factor * k;
  for (int depth = 0; depth < opt.max_refine_depth; ++depth) {
    std::vector<double> extra;
    for (std::size_t i = 1; i < items.size(); ++i) {
      if (!items[i - 1].ok || !items[i].ok)
        continue;
      double dphi = items[i].phi - items[i - 1].phi;
      if (dphi <= 1e-9 || dphi > two_pi / 3.0)
        continue;
      if (!theta.contains(0.5 * (items[i].phi + items[i - 1].phi)))
        continue;
      if (std::abs(items[i].kap - items[i - 1].kap) > split_tol)
        extra.push_back(0.5 * (items[i].phi + items[i - 1].phi));
    }
    if (extra.empty())
      break;
    out.refine_depth = depth + 1;
    std::vector<Item> more;
    std::vector<double> save = std::move(phis);
    phis = extra;
    parallel_map<Item>(phis.size(), pb.threads(), more, solve);
    phis = std::move(save);
    for (auto &m : more)
      items.push_back(m);
    std::sort(items.begin(), items.end(),
              [](const Item &a, const Item &b) { return a.phi < b.phi; });
  }

  std::vector<AngleInterval> failures;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].ok) {
      out.samples.push_back({items[i].phi, items[i].kap, items[i].dk});
    } else {
      ++out.bracket_failures;
      double left = i > 0 ? items[i - 1].phi : items[i].phi - 1e-6;
      double right =
          i + 1 < items.size() ? items[i + 1].phi : items[i].phi + 1e-6;
      failures.push_back({left, right});
    }
  }
  if (!failures.empty()) {
    out.domain = out.domain.subtract(failures);
    out.holes = out.domain.complement();
  }
  return out;
}

std::vector<MeasureRow> measure_report(const std::vector<AngleDomain> &domains,
                                       const ModelParams &params) {
  std::vector<MeasureRow> rows;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (i > 0 && !domains[i].subset_of(domains[i - 1], 1e-9))
      throw std::invalid_argument(
          "measure_report: domains are not nested (Theta_n must be contained "
          "in Theta_{n-1})");
    MeasureRow row;
    row.level = static_cast<int>(i) + 1;
    row.length = domains[i].length();
    row.decrement = i == 0 ? two_pi - row.length
                           : domains[i - 1].length() - row.length;
    double sn = 0.0;
    for (std::size_t m = 1; m <= i + 1 - 1; ++m)
      sn += 2.0 * (1.0 + params.s(static_cast<int>(m)));
    row.s_n_reference = sn;
    rows.push_back(row);
  }
  return rows;
}

double loglog_slope(const std::vector<double> &k,
                    const std::vector<double> &y) {
  if (k.size() != y.size() || k.size() < 2)
    throw std::invalid_argument("loglog_slope: need matching series, n >= 2");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (y[i] <= 0.0)
      continue;
    double x = std::log(k[i]);
    double yy = std::log(y[i]);
    sx += x;
    sy += yy;
    sxx += x * x;
    sxy += x * yy;
    ++n;
  }
  if (n < 2)
    throw std::invalid_argument("loglog_slope: not enough positive data");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace kamspectra
