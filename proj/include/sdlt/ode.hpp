#ifndef SDLT_ODE_HPP
#define SDLT_ODE_HPP

#include <algorithm>
#include <cmath>
#include <limits>

#include "sdlt/types.hpp"

namespace sdlt {

struct OdeTolerance {
  double rtol = 1e-8;
  double atol = 1e-10;
  long max_steps = 1'000'000;
};

struct OdeStats {
  long matvecs = 0;
  long steps = 0;
  long rejected = 0;
  long intervals = 0;

  OdeStats& operator+=(const OdeStats& o) {
    matvecs += o.matvecs;
    steps += o.steps;
    rejected += o.rejected;
    intervals += o.intervals;
    return *this;
  }
};

// Scratch vectors for one integration; reused across intervals of equal width.
template <typename Scalar>
struct OdeWorkspace {
  VectorT<Scalar> k1, k2, k3, k4, k5, k6, k7, stage, next;

  void resize(Eigen::Index n) {
    for (auto* v : {&k1, &k2, &k3, &k4, &k5, &k6, &k7, &stage, &next}) v->resize(n);
  }
};

namespace detail {

template <typename Scalar>
Scalar rms_scaled(const VectorT<Scalar>& v, const VectorT<Scalar>& x, const OdeTolerance& tol) {
  const Scalar atol = static_cast<Scalar>(tol.atol);
  const Scalar rtol = static_cast<Scalar>(tol.rtol);
  return std::sqrt((v.array() / (atol + rtol * x.array().abs())).square().mean());
}

}  // namespace detail

// Dormand-Prince 5(4) with FSAL for the autonomous system x' = f(x), from t0 to t1.
// `f(x, out)` writes the derivative.  Values in [-atol, 0) are clamped to zero at the end;
// anything more negative is reported as a failure.
template <typename Scalar, typename Rhs>
void dopri5(Rhs&& f, VectorT<Scalar>& x, Scalar t0, Scalar t1, const OdeTolerance& tol,
            OdeStats& stats, OdeWorkspace<Scalar>& w) {
  using std::abs;
  using std::max;
  using std::min;
  using std::pow;
  ++stats.intervals;
  if (!(t1 > t0)) {
    if (t1 == t0) return;
    throw Error("integration interval runs backwards");
  }
  w.resize(x.size());

  constexpr Scalar c2 = Scalar(1) / 5, c3 = Scalar(3) / 10, c4 = Scalar(4) / 5, c5 = Scalar(8) / 9;
  constexpr Scalar a21 = Scalar(1) / 5;
  constexpr Scalar a31 = Scalar(3) / 40, a32 = Scalar(9) / 40;
  constexpr Scalar a41 = Scalar(44) / 45, a42 = Scalar(-56) / 15, a43 = Scalar(32) / 9;
  constexpr Scalar a51 = Scalar(19372) / 6561, a52 = Scalar(-25360) / 2187, a53 = Scalar(64448) / 6561,
                   a54 = Scalar(-212) / 729;
  constexpr Scalar a61 = Scalar(9017) / 3168, a62 = Scalar(-355) / 33, a63 = Scalar(46732) / 5247,
                   a64 = Scalar(49) / 176, a65 = Scalar(-5103) / 18656;
  constexpr Scalar b1 = Scalar(35) / 384, b3 = Scalar(500) / 1113, b4 = Scalar(125) / 192,
                   b5 = Scalar(-2187) / 6784, b6 = Scalar(11) / 84;
  constexpr Scalar e1 = Scalar(71) / 57600, e3 = Scalar(-71) / 16695, e4 = Scalar(71) / 1920,
                   e5 = Scalar(-17253) / 339200, e6 = Scalar(22) / 525, e7 = Scalar(-1) / 40;
  (void)c2, (void)c3, (void)c4, (void)c5;

  const Scalar span = t1 - t0;
  f(x, w.k1);
  ++stats.matvecs;

  // Starting step from the scale of the solution and its first two derivatives.
  Scalar h;
  {
    const Scalar d0 = detail::rms_scaled(x, x, tol);
    const Scalar d1 = detail::rms_scaled(w.k1, x, tol);
    Scalar h0 = (d0 < Scalar(1e-5) || d1 < Scalar(1e-5)) ? Scalar(1e-6) * span : Scalar(0.01) * d0 / d1;
    h0 = min(h0, span);
    w.stage = x + h0 * w.k1;
    f(w.stage, w.k2);
    ++stats.matvecs;
    const Scalar d2 = detail::rms_scaled<Scalar>(w.k2 - w.k1, x, tol) / h0;
    const Scalar dm = max(d1, d2);
    const Scalar h1 = dm <= Scalar(1e-15) ? max(Scalar(1e-6) * span, h0 * Scalar(1e-3))
                                          : pow(Scalar(0.01) / dm, Scalar(1) / 5);
    h = min({Scalar(100) * h0, h1, span});
  }

  Scalar t = t0;
  bool last_rejected = false;
  long steps_here = 0;
  while (t < t1) {
    if (++steps_here > tol.max_steps) throw IntegrationError("too many integration steps", static_cast<double>(t));
    const bool final_step = t + h >= t1;
    if (final_step) h = t1 - t;
    if (h <= abs(t) * std::numeric_limits<Scalar>::epsilon() * 16) {
      throw IntegrationError("integration step size underflow", static_cast<double>(t));
    }

    w.stage = x + h * (a21 * w.k1);
    f(w.stage, w.k2);
    w.stage = x + h * (a31 * w.k1 + a32 * w.k2);
    f(w.stage, w.k3);
    w.stage = x + h * (a41 * w.k1 + a42 * w.k2 + a43 * w.k3);
    f(w.stage, w.k4);
    w.stage = x + h * (a51 * w.k1 + a52 * w.k2 + a53 * w.k3 + a54 * w.k4);
    f(w.stage, w.k5);
    w.stage = x + h * (a61 * w.k1 + a62 * w.k2 + a63 * w.k3 + a64 * w.k4 + a65 * w.k5);
    f(w.stage, w.k6);
    w.next = x + h * (b1 * w.k1 + b3 * w.k3 + b4 * w.k4 + b5 * w.k5 + b6 * w.k6);
    f(w.next, w.k7);
    stats.matvecs += 6;

    w.stage = h * (e1 * w.k1 + e3 * w.k3 + e4 * w.k4 + e5 * w.k5 + e6 * w.k6 + e7 * w.k7);
    const Scalar atol = static_cast<Scalar>(tol.atol);
    const Scalar rtol = static_cast<Scalar>(tol.rtol);
    const Scalar err = std::sqrt(
        (w.stage.array() / (atol + rtol * x.array().abs().max(w.next.array().abs()))).square().mean());

    if (!(err <= Scalar(1))) {
      ++stats.rejected;
      const Scalar shrink = std::isfinite(static_cast<double>(err))
                                ? max(Scalar(0.2), Scalar(0.9) * pow(err, Scalar(-0.2)))
                                : Scalar(0.2);
      h *= shrink;
      last_rejected = true;
      continue;
    }

    ++stats.steps;
    t = final_step ? t1 : t + h;
    x.swap(w.next);
    w.k1.swap(w.k7);
    Scalar grow = err == Scalar(0) ? Scalar(10) : Scalar(0.9) * pow(err, Scalar(-0.2));
    grow = min(Scalar(10), max(Scalar(0.2), grow));
    if (last_rejected) grow = min(grow, Scalar(1));
    h *= grow;
    last_rejected = false;
  }

  const Scalar floor = -static_cast<Scalar>(tol.atol);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] < Scalar(0)) {
      if (x[i] < floor) throw IntegrationError("solution went negative", static_cast<double>(t1));
      x[i] = Scalar(0);
    }
  }
}

}  // namespace sdlt

#endif  // SDLT_ODE_HPP
