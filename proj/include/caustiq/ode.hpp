#pragma once

// Embedded Dormand-Prince 5(4) stepper with PI-free classic step control.
// Works on fixed-size std::array states so the hot loops stay allocation free.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

namespace caustiq::ode {

template <std::size_t N>
using State = std::array<double, N>;

struct Options {
    double rtol = 1e-10;
    double atol = 1e-10;
    double h_min = 1e-13;         ///< absolute step floor; below this the step underflows
    std::size_t max_steps = 2'000'000;
};

enum class Status { ok, underflow, aborted, too_many_steps };

/// Outcome of one integrate() call. On failure `t` is the time reached.
struct Outcome {
    Status status = Status::ok;
    double t = 0.0;
    std::size_t steps = 0;
    [[nodiscard]] bool ok() const { return status == Status::ok; }
};

namespace detail {
// Dormand & Prince (1980) tableau.
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// 5th minus embedded 4th order weights.
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace detail

/// Integrates y' = rhs(y) (autonomous) from t0 to t1 in place.
///
/// `h` carries the step size between calls so a sequence of short intervals
/// (e.g. output nodes) keeps the controller warm; pass 0 to start fresh.
/// `guard(y)` is checked after every accepted step; returning false aborts.
template <std::size_t N, class Rhs, class Guard>
Outcome integrate(const Rhs& rhs, State<N>& y, double t0, double t1, double& h,
                  const Options& opt, const Guard& guard) {
    using namespace detail;
    Outcome out;
    out.t = t0;
    const double span = t1 - t0;
    if (span <= 0.0) return out;
    if (!(h > 0.0)) h = std::min(span, 1e-3);

    State<N> k1 = rhs(y), k2, k3, k4, k5, k6, k7, tmp, y5;
    double t = t0;
    while (t < t1) {
        if (out.steps >= opt.max_steps) {
            out.status = Status::too_many_steps;
            out.t = t;
            return out;
        }
        bool last = false;
        double step = h;
        if (t + step >= t1) {
            step = t1 - t;
            last = true;
        }
        for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + step * a21 * k1[i];
        k2 = rhs(tmp);
        for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + step * (a31 * k1[i] + a32 * k2[i]);
        k3 = rhs(tmp);
        for (std::size_t i = 0; i < N; ++i)
            tmp[i] = y[i] + step * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        k4 = rhs(tmp);
        for (std::size_t i = 0; i < N; ++i)
            tmp[i] = y[i] + step * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        k5 = rhs(tmp);
        for (std::size_t i = 0; i < N; ++i)
            tmp[i] = y[i] + step * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                                    a65 * k5[i]);
        k6 = rhs(tmp);
        for (std::size_t i = 0; i < N; ++i)
            y5[i] = y[i] + step * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        k7 = rhs(y5);

        double err = 0.0;
        bool finite = true;
        for (std::size_t i = 0; i < N; ++i) {
            const double e = step * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                                     e6 * k6[i] + e7 * k7[i]);
            const double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
            const double r = e / sc;
            err += r * r;
            finite = finite && std::isfinite(y5[i]);
        }
        err = std::sqrt(err / static_cast<double>(N));
        if (!finite || !std::isfinite(err)) err = 1e10;

        if (err <= 1.0) {
            t = last ? t1 : t + step;
            y = y5;
            k1 = k7;  // first-same-as-last
            ++out.steps;
            if (!guard(y)) {
                out.status = Status::aborted;
                out.t = t;
                return out;
            }
            const double fac = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
            const double grown = step * std::clamp(fac, 0.2, 5.0);
            // keep the controller's natural step when the interval end clipped it
            if (!last || grown > h) h = grown;
        } else {
            h = step * std::clamp(0.9 * std::pow(err, -0.25), 0.1, 0.9);
            if (h < opt.h_min) {
                out.status = Status::underflow;
                out.t = t;
                return out;
            }
        }
    }
    out.t = t1;
    return out;
}

template <std::size_t N, class Rhs>
Outcome integrate(const Rhs& rhs, State<N>& y, double t0, double t1, double& h,
                  const Options& opt = {}) {
    return integrate<N>(rhs, y, t0, t1, h, opt, [](const State<N>&) { return true; });
}

}  // namespace caustiq::ode
