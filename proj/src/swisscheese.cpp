#include "kamspectra/swisscheese.hpp"

#include <Eigen/Dense>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>

#include "kamspectra/bloch.hpp"

namespace kamspectra {

//==============================================================================
// Geometry helpers

bool ComplexStrip::meets_disk(cplx center, double r) const {
  if (std::abs(center.imag()) > half_width + r)
    return false;
  double x = std::fmod(center.real(), two_pi);
  if (x < 0.0)
    x += two_pi;
  for (const auto &seg : real_domain.intervals()) {
    double d;
    if (x >= seg.lo && x <= seg.hi)
      d = 0.0;
    else
      d = std::min(std::abs(x - seg.lo), std::abs(x - seg.hi));
    // wrapped distance
    d = std::min(d, std::min(std::abs(x - two_pi - seg.lo),
                             std::abs(x + two_pi - seg.hi)));
    if (d <= half_width + r)
      return true;
  }
  return false;
}

std::vector<AngleInterval> DiskSet::real_trace() const {
  std::vector<AngleInterval> iv;
  for (const auto &d : disks) {
    if (std::abs(d.center.imag()) > radius)
      continue;
    double w = std::sqrt(radius * radius -
                         d.center.imag() * d.center.imag());
    iv.push_back({d.center.real() - w, d.center.real() + w});
  }
  return iv;
}

double disk_radius(const Problem &pb, int level) {
  const ModelParams &mp = pb.params();
  double r = std::pow(pb.k(), -4.0 - 6.0 * mp.s1() - 3.0 * mp.delta());
  for (int m = 2; m <= level; ++m)
    r *= std::pow(pb.k(), -2.0 - 4.0 * mp.s(m) - mp.delta());
  return r;
}

double disk_count_cap(const Problem &pb) {
  const ModelParams &mp = pb.params();
  double c0 = 32.0 * mp.b1() * mp.b2();
  return c0 * std::pow(pb.k(), 2.0 + 2.0 * mp.s1());
}

ComplexStrip make_phi0(const Problem &pb) {
  const ModelParams &mp = pb.params();
  return {0, AngleDomain::full(),
          std::pow(pb.k(), -2.0 - 4.0 * mp.s1())};
}

ComplexStrip make_phi1(const Problem &pb, const AngleDomain &theta1) {
  const ModelParams &mp = pb.params();
  return {1, theta1,
          std::pow(pb.k(), -2.0 - 4.0 * mp.s1() - 2.0 * mp.delta())};
}

double vertex_distance(const Problem &pb, const Vec2 &b_vec, Vec2 *nearest) {
  CellSpec cell = pb.cell(1);
  double best = std::numeric_limits<double>::infinity();
  for (int m1 = 0; m1 <= 1; ++m1)
    for (int m2 = 0; m2 <= 1; ++m2) {
      Vec2 v{m1 * cell.step1(), m2 * cell.step2()};
      double d = (b_vec - v).norm();
      if (d < best) {
        best = d;
        if (nearest)
          *nearest = v;
      }
    }
  return best;
}

//==============================================================================
// Unperturbed zeros and the level-1 map

std::vector<cplx> unperturbed_zeros(const Problem &pb, const Vec2 &b_vec,
                                    const LatticeIndex &m_index, double lambda,
                                    const ComplexStrip &strip) {
  if (vertex_distance(pb, b_vec, nullptr) <= 0.0)
    throw std::invalid_argument("unperturbed_zeros: b is a cell vertex");
  CellSpec cell = pb.cell(1);
  double k = pb.params().k_of_lambda(lambda);
  Vec2 pm{static_cast<double>(m_index.j1) * cell.step1(),
          static_cast<double>(m_index.j2) * cell.step2()};
  if (pm.norm() >= 4.0 * k)
    return {};
  Vec2 c = b_vec + pm;

  // |y_0(phi)+p_m|_*^2 = k^2 is quadratic in w = e^{i phi}:
  //   A w^2 + B w + C = 0, A = k(c1 - i c2), B = |c|^2, C = k(c1 + i c2).
  cplx A = k * cplx(c.x, -c.y);
  cplx B = c.norm2();
  cplx C = k * cplx(c.x, c.y);
  if (std::abs(A) == 0.0)
    return {};
  cplx sq = std::sqrt(B * B - 4.0 * A * C);
  // pick the sign giving the larger |B + sq| for stability
  cplx bp = (std::real(std::conj(B) * sq) >= 0.0) ? B + sq : B - sq;
  std::vector<cplx> roots;
  if (std::abs(bp) == 0.0) {
    roots = {std::sqrt(C / A), -std::sqrt(C / A)};
  } else {
    roots = {-bp / (2.0 * A), -2.0 * C / bp};
  }

  std::vector<cplx> out;
  for (cplx w : roots) {
    if (std::abs(w) == 0.0)
      continue;
    double re = std::arg(w);
    if (re < 0.0)
      re += two_pi;
    double im = -std::log(std::abs(w));
    if (std::abs(im) <= strip.half_width)
      out.push_back(cplx(re, im));
  }
  return out;
}

DiskSet build_O_level1(const Problem &pb, const Vec2 &b_vec, double lambda,
                       const ComplexStrip &phi1) {
  DiskSet set;
  set.level = 1;
  set.radius = disk_radius(pb, 1);
  set.b_vec = b_vec;
  set.b0 = vertex_distance(pb, b_vec, nullptr);

  CellSpec cell = pb.cell(1);
  double k = pb.params().k_of_lambda(lambda);
  ComplexStrip phi0 = make_phi0(pb);

  long n1 = static_cast<long>(std::ceil(4.0 * k / cell.step1())) + 1;
  long n2 = static_cast<long>(std::ceil(4.0 * k / cell.step2())) + 1;
  std::vector<cplx> zeros;
  for (long j1 = -n1; j1 <= n1; ++j1)
    for (long j2 = -n2; j2 <= n2; ++j2) {
      for (cplx z :
           unperturbed_zeros(pb, b_vec, {j1, j2}, lambda, phi0))
        zeros.push_back(z);
    }
  std::sort(zeros.begin(), zeros.end(), [](cplx a, cplx b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  // dedupe coincident roots (tangent circles)
  std::vector<cplx> uniq;
  for (cplx z : zeros)
    if (uniq.empty() || std::abs(z - uniq.back()) > 1e-12)
      uniq.push_back(z);

  for (cplx z : uniq)
    if (phi1.meets_disk(z, set.radius))
      set.disks.push_back({z, SeedKind::unperturbed});

  double cap = disk_count_cap(pb);
  if (static_cast<double>(set.disks.size()) > 4.0 * cap)
    throw std::runtime_error(
        "build_O: disk count " + std::to_string(set.disks.size()) +
        " exceeds 4x the cap " + fmt_g17(cap) +
        " (parameter regime far outside validity)");
  return set;
}

std::vector<DiskComponent> components(const DiskSet &set, double merge_slack) {
  int n = static_cast<int>(set.disks.size());
  std::vector<int> parent(n);
  for (int i = 0; i < n; ++i)
    parent[i] = i;
  std::function<int(int)> find = [&](int i) {
    while (parent[i] != i)
      i = parent[i] = parent[parent[i]];
    return i;
  };
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::abs(set.disks[i].center - set.disks[j].center) <=
          2.0 * set.radius + merge_slack)
        parent[find(i)] = find(j);

  std::map<int, DiskComponent> by_root;
  for (int i = 0; i < n; ++i)
    by_root[find(i)].disk_ids.push_back(i);

  std::vector<DiskComponent> out;
  for (auto &[root, comp] : by_root) {
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (int id : comp.disk_ids) {
      cplx c = set.disks[id].center;
      xlo = std::min(xlo, c.real());
      xhi = std::max(xhi, c.real());
      ylo = std::min(ylo, c.imag());
      yhi = std::max(yhi, c.imag());
    }
    comp.center = cplx(0.5 * (xlo + xhi), 0.5 * (ylo + yhi));
    double rad = 0.0;
    for (int id : comp.disk_ids)
      rad = std::max(rad, std::abs(set.disks[id].center - comp.center));
    comp.radius = rad + 1.5 * set.radius;
    out.push_back(std::move(comp));
  }
  // enclosing circles of distinct components must not swallow each other;
  // merge until they are disjoint
  bool merged = true;
  while (merged && out.size() > 1) {
    merged = false;
    for (std::size_t i = 0; i < out.size() && !merged; ++i)
      for (std::size_t j = i + 1; j < out.size() && !merged; ++j) {
        if (std::abs(out[i].center - out[j].center) <
            out[i].radius + out[j].radius + 0.5 * set.radius) {
          for (int id : out[j].disk_ids)
            out[i].disk_ids.push_back(id);
          double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
          for (int id : out[i].disk_ids) {
            cplx c = set.disks[id].center;
            xlo = std::min(xlo, c.real());
            xhi = std::max(xhi, c.real());
            ylo = std::min(ylo, c.imag());
            yhi = std::max(yhi, c.imag());
          }
          out[i].center = cplx(0.5 * (xlo + xhi), 0.5 * (ylo + yhi));
          double rad = 0.0;
          for (int id : out[i].disk_ids)
            rad = std::max(rad,
                           std::abs(set.disks[id].center - out[i].center));
          out[i].radius = rad + 1.5 * set.radius;
          out.erase(out.begin() + j);
          merged = true;
        }
      }
  }
  std::sort(out.begin(), out.end(),
            [](const DiskComponent &a, const DiskComponent &b) {
              return a.center.real() < b.center.real();
            });
  return out;
}

//==============================================================================
// Determinant machinery

DetEvaluator::DetEvaluator(const Problem &pb, int level, const IsoCurve &curve,
                           const Vec2 &b_vec, double lambda, double eps,
                           double alpha, double phi_ref)
    : pb_(pb), level_(level), curve_(curve), b_(b_vec), lambda_(lambda),
      eps_(eps), alpha_(alpha) {
  CellSpec cell = pb.cell(level);
  double k = pb.params().k_of_lambda(lambda);
  double kap = curve.kappa_at(phi_ref);
  Vec2 y_ref = kap * nu_of(phi_ref) + b_vec;
  double rho = pb.trunc().det_rho_factor * k;

  long n1 = static_cast<long>(std::ceil((rho + y_ref.norm()) / cell.step1()));
  long n2 = static_cast<long>(std::ceil((rho + y_ref.norm()) / cell.step2()));
  std::map<LatticeIndex, int> lookup;
  for (long j1 = -n1; j1 <= n1; ++j1)
    for (long j2 = -n2; j2 <= n2; ++j2) {
      Vec2 p{static_cast<double>(j1) * cell.step1(),
             static_cast<double>(j2) * cell.step2()};
      if ((y_ref + p).norm() <= rho) {
        lookup[{j1, j2}] = static_cast<int>(lattice_.size());
        lattice_.push_back(p);
        (void)j1;
      }
    }
  if (lattice_.empty())
    throw std::runtime_error("DetEvaluator: empty basis");

  modes_ = embedded_modes(pb, level, alpha);
  wcols_.resize(lattice_.size());
  int col = 0;
  for (const auto &[idx, pos] : lookup) {
    for (const auto &[q, v] : modes_) {
      auto row = lookup.find({idx.j1 + q.j1, idx.j2 + q.j2});
      if (row != lookup.end())
        wcols_[pos].push_back({row->second, v});
    }
    ++col;
  }
  (void)col;
}

cplx DetEvaluator::log_det(cplx phi) const {
  int n = static_cast<int>(lattice_.size());
  cplx kap = curve_.kappa_ext(phi);
  cplx cphi = std::cos(phi), sphi = std::sin(phi);
  cplx y1 = kap * cphi + b_.x;
  cplx y2 = kap * sphi + b_.y;

  int l = pb_.params().l();
  Eigen::VectorXcd d(n);
  for (int i = 0; i < n; ++i) {
    cplx s1 = y1 + lattice_[i].x;
    cplx s2 = y2 + lattice_[i].y;
    cplx p2 = s1 * s1 + s2 * s2;
    cplx pl = 1.0;
    for (int e = 0; e < l; ++e)
      pl *= p2;
    d[i] = pl;
  }

  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    cplx scale = 1.0 / (d[j] + lambda_);
    m(j, j) = (d[j] - lambda_ - eps_) * scale;
    for (const auto &[i, w] : wcols_[j])
      m(i, j) += w * scale;
  }

  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(m);
  cplx logdet = 0.0;
  for (int i = 0; i < n; ++i)
    logdet += std::log(lu.matrixLU()(i, i));
  if (lu.permutationP().determinant() < 0)
    logdet += cplx(0.0, two_pi / 2.0);
  return logdet;
}

namespace {

double wrap_pi(double x) {
  while (x > two_pi / 2.0)
    x -= two_pi;
  while (x <= -two_pi / 2.0)
    x += two_pi;
  return x;
}

} // namespace

int count_zeros(const std::function<cplx(cplx)> &log_det, cplx center,
                double radius, int q0, int qmax) {
  for (int q = q0; q <= qmax; q *= 2) {
    std::vector<cplx> lv(q);
    double re_min = 1e300, re_max = -1e300;
    for (int i = 0; i < q; ++i) {
      cplx z = center + std::polar(radius, two_pi * i / q);
      lv[i] = log_det(z);
      re_min = std::min(re_min, lv[i].real());
      re_max = std::max(re_max, lv[i].real());
    }
    if (re_min - re_max < std::log(1e-12))
      throw std::runtime_error(
          "count_zeros: determinant vanishes on the contour (min/max |det| "
          "ratio below 1e-12)");
    double total = 0.0;
    for (int i = 0; i < q; ++i)
      total += wrap_pi(lv[(i + 1) % q].imag() - lv[i].imag());
    double w = total / two_pi;
    double rounded = std::round(w);
    if (std::abs(w - rounded) <= 0.01)
      return static_cast<int>(rounded);
  }
  throw std::runtime_error("count_zeros: contour too coarse (non-integer "
                           "winding up to the node cap)");
}

std::vector<cplx> polished_zeros(const Problem &pb, int level,
                                 const Vec2 &b_vec, const DiskSet &seeds,
                                 const IsoCurve &curve,
                                 std::vector<std::string> *warnings) {
  std::vector<cplx> out;
  if (seeds.disks.empty())
    return out;

  for (const auto &seed : seeds.disks) {
    DetEvaluator det(pb, level, curve, b_vec, pb.lambda(), 0.0, 1.0,
                     seed.center.real());
    cplx phi = seed.center;
    cplx l0 = det.log_det(phi);
    if (l0.real() < -600.0) {
      out.push_back(phi); // already at a zero to machine depth
      continue;
    }
    double target = l0.real() + std::log(1e-10);
    double h = seeds.radius / 50.0;
    bool done = false;
    bool escaped = false;
    for (int it = 0; it < 50; ++it) {
      cplx lp = det.log_det(phi + h);
      cplx lm = det.log_det(phi - h);
      cplx diff = lp - lm;
      diff = cplx(diff.real(), wrap_pi(diff.imag()));
      cplx deriv = diff / (2.0 * h);
      if (std::abs(deriv) == 0.0)
        break;
      phi -= 1.0 / deriv;
      if (std::abs(phi - seed.center) > seeds.radius) {
        escaped = true;
        break;
      }
      cplx lc = det.log_det(phi);
      if (lc.real() <= target) {
        done = true;
        break;
      }
    }
    if (escaped) {
      if (warnings)
        warnings->push_back("polished_zeros: Newton escaped the seed disk at "
                            "phi=" + fmt_g17(seed.center.real()));
      int cnt = count_zeros(
          [&](cplx z) { return det.log_det(z); }, seed.center, seeds.radius);
      if (cnt > 0 && warnings)
        warnings->push_back("polished_zeros: component re-counted, " +
                            std::to_string(cnt) + " zeros remain unpolished");
      continue;
    }
    if (!done && warnings)
      warnings->push_back("polished_zeros: slow convergence at phi=" +
                          fmt_g17(seed.center.real()));
    out.push_back(phi);
  }
  return out;
}

DiskSet contract(const Problem &pb, const DiskSet &seeds,
                 const std::vector<cplx> &zeros) {
  DiskSet s;
  s.level = seeds.level + 1;
  s.radius = seeds.radius *
             std::pow(pb.k(), -2.0 - 4.0 * pb.params().s(seeds.level + 1) -
                                  pb.params().delta());
  s.b_vec = seeds.b_vec;
  s.b0 = seeds.b0;
  for (cplx z : zeros)
    s.disks.push_back({z, SeedKind::polished});
  return s;
}

//==============================================================================
// Small-b0 pole analysis

namespace {

double lambda1_at(const Problem &pb, const Vec2 &y) {
  return eigenvalue_series(pb, 1, y, 1.0, default_order(pb, 1)).value;
}

} // namespace

std::vector<PolePoint> small_b_poles(const Problem &pb, int level,
                                     const Vec2 &b_vec, double lambda,
                                     const IsoCurve &curve, double eps0) {
  if (level != 1)
    throw std::invalid_argument(
        "small_b_poles: implemented at level 1 (higher levels recurse "
        "through build_O)");
  Vec2 vertex;
  double b0 = vertex_distance(pb, b_vec, &vertex);
  if (b0 <= 0.0)
    throw std::invalid_argument("small_b_poles: b0 must be positive");
  Vec2 beff = b_vec - vertex;
  double phib = std::atan2(beff.y, beff.x);
  double k = pb.params().k_of_lambda(lambda);
  int l = pb.params().l();

  auto y_of = [&](double phi) {
    return curve.kappa_at(phi) * nu_of(phi) + beff;
  };
  auto F = [&](double phi) {
    return lambda1_at(pb, y_of(phi)) - lambda - eps0;
  };

  std::vector<PolePoint> out;
  for (int s : {+1, -1}) {
    double phi = phib + s * (two_pi / 4.0);
    // reduced scalar equation cos(phi - phi_b) - eps0 g1 + g2 = 0 as seed
    for (int it = 0; it < 3; ++it) {
      Vec2 y = y_of(phi);
      double y2 = y.norm2();
      double ymb2 = (y - beff).norm2();
      double chain = 0.0;
      for (int i = 0; i < l; ++i)
        chain += std::pow(y2, i) * std::pow(ymb2, l - 1 - i);
      double g1 = 1.0 / (2.0 * b0 * k * chain);
      double h1 = curve.kappa_at(phi) - k;
      double g2 = h1 * nu_of(phi).dot(beff) / (b0 * k) + b0 / (2.0 * k);
      double rho = std::clamp(eps0 * g1 - g2, -1.0, 1.0);
      phi = phib + s * std::acos(rho);
    }
    // Newton on the true eigenvalue equation
    bool ok = true;
    double f = 0.0;
    try {
      f = F(phi);
    } catch (const ResonantContour &) {
      ok = false;
    }
    double tol = std::max(1e-12 * lambda,
                          8.0 * std::numeric_limits<double>::epsilon() *
                              lambda);
    double hfd = 1e-6;
    for (int it = 0; ok && it < 40 && std::abs(f) > tol; ++it) {
      double fp;
      try {
        fp = (F(phi + hfd) - F(phi - hfd)) / (2.0 * hfd);
      } catch (const ResonantContour &) {
        ok = false;
        break;
      }
      if (fp == 0.0)
        break;
      phi -= f / fp;
      try {
        f = F(phi);
      } catch (const ResonantContour &) {
        ok = false;
      }
    }
    if (!ok || std::abs(f) > tol)
      continue;
    double slope = (F(phi + hfd) - F(phi - hfd)) / (2.0 * hfd);
    PolePoint p;
    p.phi = cplx(phi, 0.0);
    p.sign = slope >= 0.0 ? +1 : -1;
    bool dup = false;
    for (const auto &prev : out)
      if (std::abs(prev.phi - p.phi) < 1e-9)
        dup = true;
    if (!dup)
      out.push_back(p);
  }

  // verification sweep: the two-pole lemma forbids further crossings, so a
  // coarse sign scan with more than two changes flags a regime breach
  int sign_changes = 0;
  double prev = 0.0;
  bool have_prev = false;
  for (int i = 0; i < 256; ++i) {
    double phi = two_pi * i / 256;
    double f;
    try {
      f = F(phi);
    } catch (const ResonantContour &) {
      have_prev = false;
      continue;
    }
    if (have_prev && (f < 0.0) != (prev < 0.0))
      ++sign_changes;
    prev = f;
    have_prev = true;
  }
  if (sign_changes > 2 || out.size() > 2)
    throw std::runtime_error(
        "small_b_poles: more than two roots survived refinement (" +
        std::to_string(sign_changes) +
        " sign changes; regime breach of the two-pole lemma)");
  return out;
}

//==============================================================================
// Level >= 2 resonance maps

DiskSet build_O(const Problem &pb, int level, const Vec2 &b_vec, double lambda,
                const ComplexStrip &phi1,
                const std::vector<const IsoCurve *> &curves,
                std::vector<std::string> *warnings) {
  if (level == 1)
    return build_O_level1(pb, b_vec, lambda, phi1);

  const ModelParams &mp = pb.params();
  double k = mp.k_of_lambda(lambda);
  // desk crossover for the small-b0 route; the paper's exponent
  // k^{-2l+9+12s1+7delta} is used when it is meaningful (l >= 5)
  double small_thr = 0.1 * std::pow(k, -1.0 - 4.0 * mp.s1() - 2.0 * mp.delta());
  double paper_thr =
      std::pow(k, -2.0 * mp.l() + 9.0 + 12.0 * mp.s1() + 7.0 * mp.delta());
  if (2.0 * mp.l() > 9.0 + 12.0 * mp.s1() + 7.0 * mp.delta())
    small_thr = std::min(std::max(small_thr, paper_thr), small_thr * 10.0);

  DiskSet out;
  out.level = level;
  out.radius = disk_radius(pb, level);
  out.b_vec = b_vec;
  out.b0 = vertex_distance(pb, b_vec, nullptr);

  RefinementOffsets offs = refinement_offsets(level, pb.params(), pb.k());
  const IsoCurve &curve_prev = *curves.at(level - 2);

  for (std::size_t pi = 0; pi < offs.offsets.size(); ++pi) {
    Vec2 bp = b_vec + offs.offsets[pi];
    double bp0 = vertex_distance(pb, bp, nullptr);
    DiskSet contracted;
    if (bp0 > 0.0 && bp0 <= small_thr) {
      contracted.level = level;
      contracted.radius = out.radius;
      contracted.b_vec = bp;
      contracted.b0 = bp0;
      for (const auto &pole :
           small_b_poles(pb, level - 1, bp, lambda, curve_prev, 0.0))
        contracted.disks.push_back({pole.phi, SeedKind::small_b_pole});
    } else {
      DiskSet seeds = build_O(pb, level - 1, bp, lambda, phi1, curves,
                              warnings);
      std::vector<cplx> zeros =
          polished_zeros(pb, level - 1, bp, seeds, curve_prev, warnings);
      contracted = contract(pb, seeds, zeros);
    }
    for (const auto &d : contracted.disks)
      out.disks.push_back(d);
  }
  std::sort(out.disks.begin(), out.disks.end(), [](const Disk &a,
                                                   const Disk &b) {
    return a.center.real() != b.center.real()
               ? a.center.real() < b.center.real()
               : a.center.imag() < b.center.imag();
  });

  double cap = disk_count_cap(pb) *
               std::pow(4.0, level - 1); // P^(m) factors, fitted
  if (static_cast<double>(out.disks.size()) > 4.0 * cap)
    throw std::runtime_error("build_O: disk count exceeds 4x the level cap");
  return out;
}

//==============================================================================
// Resonance arcs

ResonanceArcs resonance_arcs(const Problem &pb, int level, double lambda,
                             const IsoCurve &curve_prev,
                             const AngleDomain &theta_prev, double eps_band,
                             int grid) {
  if (level < 2)
    throw std::invalid_argument("resonance_arcs: level must be >= 2");
  RefinementOffsets offs = refinement_offsets(level, pb.params(), pb.k());
  CellSpec cell_prev = pb.cell(level - 1);

  struct Probe {
    double gap = std::numeric_limits<double>::infinity();
    LatticeIndex p;
    double eigenvalue = 0.0;
  };
  auto probe = [&](double phi) {
    Probe pr;
    double kap = curve_prev.kappa_at(phi);
    Vec2 kv = kap * nu_of(phi);
    for (std::size_t pi = 0; pi < offs.offsets.size(); ++pi) {
      if (offs.p_indices[pi].j1 == 0 && offs.p_indices[pi].j2 == 0)
        continue;
      Vec2 y = kv + offs.offsets[pi];
      auto [t, j] = reduce_to_cell(y, cell_prev);
      (void)j;
      BlochMatrix m = assemble(pb, level - 1, t, 1.0);
      Eigen::VectorXd ev = oracle_eigenvalues(m);
      for (int i = 0; i < ev.size(); ++i) {
        double g = std::abs(ev[i] - lambda);
        if (g < pr.gap) {
          pr.gap = g;
          pr.p = offs.p_indices[pi];
          pr.eigenvalue = ev[i];
        }
      }
    }
    return pr;
  };

  // grid scan over the surviving domain
  std::vector<double> phis;
  for (const auto &seg : theta_prev.intervals()) {
    int n = std::max(4, static_cast<int>(std::lround(
                            grid * seg.length() / two_pi)));
    for (int i = 0; i <= n; ++i)
      phis.push_back(seg.lo + seg.length() * i / n);
  }
  std::vector<Probe> probes;
  parallel_map<Probe>(phis.size(), pb.threads(), probes,
                      [&](std::size_t i) { return probe(phis[i]); });

  double cellw = two_pi / grid;
  ResonanceArcs out;
  out.level = level;
  auto bisect = [&](double lo, double hi, bool below_at_lo) {
    for (int it = 0; it < 40 && hi - lo > 1e-10; ++it) {
      double mid = 0.5 * (lo + hi);
      bool below = probe(mid).gap <= eps_band;
      if (below == below_at_lo)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };

  std::size_t i = 0;
  while (i < phis.size()) {
    if (probes[i].gap > eps_band) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < phis.size() && probes[j + 1].gap <= eps_band &&
           phis[j + 1] - phis[j] < 2.0 * cellw)
      ++j;
    double lo = phis[i];
    if (i > 0 && phis[i] - phis[i - 1] < 2.0 * cellw)
      lo = bisect(phis[i - 1], phis[i], false);
    double hi = phis[j];
    if (j + 1 < phis.size() && phis[j + 1] - phis[j] < 2.0 * cellw)
      hi = bisect(phis[j], phis[j + 1], true);
    out.arcs.push_back({lo - cellw, hi + cellw}); // widened by one cell
    out.core.push_back({lo, hi});
    out.witnesses.push_back({probes[i].p, phis[i], probes[i].eigenvalue});
    i = j + 1;
  }
  return out;
}

bool arcs_inside_trace(const ResonanceArcs &arcs,
                       const std::vector<AngleInterval> &trace, double tol) {
  // the containment statement concerns the detected resonance set itself,
  // not the conservative one-cell widening used for Theta subtraction
  AngleDomain td = AngleDomain::from_intervals(trace);
  for (const auto &a : arcs.core) {
    AngleDomain ad = AngleDomain::from_intervals({{a.lo + tol, a.hi - tol}});
    if (ad.empty())
      continue;
    if (!ad.subset_of(td, tol))
      return false;
  }
  return true;
}

} // namespace kamspectra
