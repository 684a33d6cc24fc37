#pragma once

#include <cmath>
#include <stdexcept>

#include "kamspectra/util.hpp"

namespace kamspectra {

// Global problem data for H = (-Delta)^l + V on R^2 with orthogonal base
// periods (b1, b2).  The decay and geometry exponents are immutable after
// construction; the gamma accessors are the derived rates used by the
// estimates throughout.
class ModelParams {
public:
  ModelParams(int l, double b1, double b2, double eta, double delta, double s1)
      : l_(l), b1_(b1), b2_(b2), eta_(eta), delta_(delta), s1_(s1) {
    if (l_ < 1)
      throw std::invalid_argument("ModelParams: l must be a positive integer");
    if (b1_ <= 0.0 || b2_ <= 0.0)
      throw std::invalid_argument("ModelParams: periods must be positive");
    if (eta_ <= 2.0)
      throw std::invalid_argument("ModelParams: eta must exceed 2");
    if (delta_ <= 0.0 || s1_ <= 0.0)
      throw std::invalid_argument("ModelParams: delta and s1 must be positive");
    if (2.0 * delta_ >= 2.0 * l_ - 2.0 - 4.0 * s1_)
      throw std::invalid_argument(
          "ModelParams: need 2*delta < 2l - 2 - 4*s1");
    if (gamma0() <= 0.0)
      throw std::invalid_argument("ModelParams: gamma0 must be positive");
  }

  int l() const { return l_; }
  double b1() const { return b1_; }
  double b2() const { return b2_; }
  double eta() const { return eta_; }
  double delta() const { return delta_; }
  double s1() const { return s1_; }

  // s_n doubles at every step.
  double s(int n) const { return std::ldexp(s1_, n - 1); }

  double gamma0() const { return 2.0 * l_ - 2.0 - 4.0 * s1_ - 2.0 * delta_; }
  double gamma1() const { return 2.0 * l_ - 4.0 - 7.0 * s1_ - 2.0 * delta_; }
  double gamma2() const { return 2.0 * l_ - 2.0 - 4.0 * s1_ - 3.0 * delta_; }
  double gamma3() const { return delta_ / 2.0; }
  double gamma4() const {
    return (4.0 * l_ - 3.0 - 4.0 * s1_ - 3.0 * delta_) / (2.0 * l_);
  }
  double gamma5() const {
    return (4.0 * l_ - 5.0 - 8.0 * s1_ - 4.0 * delta_) / (2.0 * l_);
  }

  // lambda = k^{2l} and back.
  double lambda_of_k(double k) const { return std::pow(k, 2.0 * l_); }
  double k_of_lambda(double lambda) const {
    return std::pow(lambda, 1.0 / (2.0 * l_));
  }

private:
  int l_;
  double b1_, b2_;
  double eta_;
  double delta_;
  double s1_;
};

} // namespace kamspectra
