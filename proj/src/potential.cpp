#include "kamspectra/potential.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace kamspectra {

double PotentialRecipe::budget(int r, const ModelParams &params) const {
  if (relaxed_decay)
    return budget_base * std::pow(budget_ratio, r - 1);
  // exp(-2^{eta r}); underflows to 0 for r >= 3 at any eta > 2, which is the
  // point of the relaxed mode.
  return std::exp(-std::pow(2.0, params.eta() * r));
}

bool PotentialSpec::is_zero() const {
  for (const auto &b : blocks)
    if (!b.empty())
      return false;
  return true;
}

double PotentialSpec::eval_block(int r, const Vec2 &x) const {
  const CoeffMap &b = blocks.at(r - 1);
  double p1 = std::ldexp(params.b1(), r - 1);
  double p2 = std::ldexp(params.b2(), r - 1);
  cplx v = 0.0;
  for (const auto &[q, w] : b) {
    double phase = two_pi * (static_cast<double>(q.j1) / p1 * x.x +
                             static_cast<double>(q.j2) / p2 * x.y);
    v += w * std::polar(1.0, phase);
  }
  return v.real();
}

double WindowedPotential::eval(const Vec2 &x) const {
  cplx v = 0.0;
  for (const auto &[q, w] : coeffs) {
    double phase = two_pi * (static_cast<double>(q.j1) / period1 * x.x +
                             static_cast<double>(q.j2) / period2 * x.y);
    v += w * std::polar(1.0, phase);
  }
  return v.real();
}

double WindowedPotential::eval_imag(const Vec2 &x) const {
  cplx v = 0.0;
  for (const auto &[q, w] : coeffs) {
    double phase = two_pi * (static_cast<double>(q.j1) / period1 * x.x +
                             static_cast<double>(q.j2) / period2 * x.y);
    v += w * std::polar(1.0, phase);
  }
  return v.imag();
}

int choose_M(int n, double k, const ModelParams &params) {
  if (k <= 1.0)
    throw std::invalid_argument("choose_M: requires k > 1");
  if (n < 1)
    throw std::invalid_argument("choose_M: level must be >= 1");
  int m_prev = 0;
  int m = 0;
  for (int i = 1; i <= n; ++i) {
    double target = params.s(i) * std::log2(k);
    int rounded = static_cast<int>(std::floor(target + 0.5)); // ties up
    m = std::max(m_prev + 1, rounded);
    m_prev = m;
  }
  return m;
}

namespace {

void check_hermitian(const CoeffMap &block, int r) {
  for (const auto &[q, w] : block) {
    if (q.j1 == 0 && q.j2 == 0)
      throw std::invalid_argument("build_potential: block " +
                                  std::to_string(r) +
                                  " has a nonzero mean coefficient");
    auto it = block.find({-q.j1, -q.j2});
    if (it == block.end() ||
        std::abs(it->second - std::conj(w)) >
            1e-14 * (1.0 + std::abs(w)))
      throw std::invalid_argument(
          "build_potential: block " + std::to_string(r) +
          " is not Hermitian-symmetric (potential would not be real)");
  }
}

double sum_abs(const CoeffMap &block) {
  double s = 0.0;
  for (const auto &[q, w] : block)
    s += std::abs(w);
  return s;
}

CoeffMap cosine_block(double c) {
  CoeffMap m;
  m[{1, 0}] = c;
  m[{-1, 0}] = c;
  m[{0, 1}] = c;
  m[{0, -1}] = c;
  return m;
}

CoeffMap random_block(std::mt19937_64 &rng, int modes, long max_mode,
                      double target_sum) {
  CoeffMap m;
  int placed = 0;
  int guard = 0;
  while (placed < modes && guard < 1000) {
    ++guard;
    long span = 2 * max_mode + 1;
    long q1 = static_cast<long>(uniform01(rng()) * span) - max_mode;
    long q2 = static_cast<long>(uniform01(rng()) * span) - max_mode;
    if (q1 == 0 && q2 == 0)
      continue;
    LatticeIndex q{q1, q2};
    if (m.count(q))
      continue;
    double re = 2.0 * uniform01(rng()) - 1.0;
    double im = 2.0 * uniform01(rng()) - 1.0;
    cplx w(re, im);
    m[q] = w;
    m[{-q1, -q2}] = std::conj(w);
    ++placed;
  }
  double s = sum_abs(m);
  if (s > 0.0)
    for (auto &[q, w] : m)
      w *= target_sum / s;
  return m;
}

} // namespace

PotentialSpec build_potential(const ModelParams &params,
                              const PotentialRecipe &recipe, int r_max) {
  if (r_max < 0)
    throw std::invalid_argument("build_potential: r_max must be >= 0");
  if (recipe.amplitude <= 0.0 || recipe.amplitude > 1.0)
    throw std::invalid_argument("build_potential: amplitude must be in (0,1]");

  PotentialSpec spec{params, {}, {}, {}, recipe};
  std::mt19937_64 rng(recipe.seed);

  for (int r = 1; r <= r_max; ++r) {
    double budget = recipe.budget(r, params);
    CoeffMap block;
    switch (recipe.kind) {
    case PotentialRecipe::Kind::none:
      break;
    case PotentialRecipe::Kind::cosine:
      block = cosine_block(recipe.amplitude * budget / 4.0);
      break;
    case PotentialRecipe::Kind::random_modes:
      block = random_block(rng, recipe.modes_per_block, recipe.max_mode,
                           recipe.amplitude * budget);
      break;
    case PotentialRecipe::Kind::custom:
      for (const auto &[cr, cm] : recipe.custom_blocks)
        if (cr == r)
          for (const auto &[q, w] : cm)
            block[q] += w;
      break;
    }

    check_hermitian(block, r);
    double s = sum_abs(block);
    double scale = 1.0;
    if (s > budget && s > 0.0) {
      scale = budget / s;
      for (auto &[q, w] : block)
        w *= scale;
      s = budget;
    }
    spec.blocks.push_back(std::move(block));
    spec.block_sum_abs.push_back(s);
    spec.applied_scaling.push_back(scale);
  }
  return spec;
}

WindowedPotential window_sum(const PotentialSpec &spec, int n, double k) {
  const ModelParams &params = spec.params;
  int m_lo = (n == 1) ? 0 : choose_M(n - 1, k, params);
  int m_hi = choose_M(n, k, params);
  if (m_hi > spec.r_max())
    throw std::invalid_argument(
        "window_sum: window needs blocks " + std::to_string(m_lo + 1) + ".." +
        std::to_string(m_hi) + " but the potential holds only " +
        std::to_string(spec.r_max()));

  WindowedPotential w;
  w.level = n;
  w.m_lo = m_lo;
  w.m_hi = m_hi;
  w.period1 = std::ldexp(params.b1(), m_hi - 1);
  w.period2 = std::ldexp(params.b2(), m_hi - 1);
  for (int r = m_lo + 1; r <= m_hi; ++r) {
    long stride = 1L << (m_hi - r); // block-r index q -> level index q*2^{M_n-r}
    for (const auto &[q, v] : spec.blocks[r - 1]) {
      if (q.j1 == 0 && q.j2 == 0)
        continue;
      w.coeffs[{q.j1 * stride, q.j2 * stride}] += v;
    }
  }
  w.coeffs.erase({0, 0});
  for (const auto &[q, v] : w.coeffs)
    w.sum_abs += std::abs(v);
  if (n >= 2)
    w.strict_bound = LogValue(-std::pow(k, params.eta() * params.s(n - 1)));
  else
    w.strict_bound = LogValue(0.0); // O(1) budget at level 1
  return w;
}

} // namespace kamspectra
