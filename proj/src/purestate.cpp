#include "caustiq/purestate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "caustiq/ode.hpp"

namespace caustiq::pure {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Bracketing root solve to |hi - lo| <= tol.
template <class F>
double solve_bracket(F f, double lo, double hi, double tol = 1e-13) {
    if (lo > hi) std::swap(lo, hi);
    std::uintmax_t iters = 200;
    const auto stop = [tol](double a, double b) { return std::abs(b - a) <= tol; };
    const auto r = boost::math::tools::toms748_solve(f, lo, hi, stop, iters);
    return 0.5 * (r.first + r.second);
}

template <class F>
double integrate(F f, double lo, double hi) {
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 12, 1e-13);
}

constexpr std::size_t kSubSamples = 16;

double wrap_floor(double theta) { return std::floor(theta / kTwoPi); }

// Time to travel between a turning point theta_t (zero of D) and theta_o,
// via theta = theta_t + sgn * s^2, which removes the inverse square root.
double time_from_turn(double theta_t, double theta_o, double energy, const PhysParams& p) {
    const double sgn = theta_o > theta_t ? 1.0 : -1.0;
    const double span = std::sqrt(std::abs(theta_o - theta_t));
    if (span == 0.0) return 0.0;
    return integrate(
        [&](double s) {
            const double d = discriminant(theta_t + sgn * s * s, energy, p);
            return d > 0.0 ? 2.0 * s / std::sqrt(d) : 0.0;
        },
        0.0, span);
}

double time_regular(double a, double b, double energy, const PhysParams& p) {
    return integrate(
        [&](double th) {
            const double d = discriminant(th, energy, p);
            return d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
        },
        std::min(a, b), std::max(a, b));
}

// One monotone stretch of motion from `from` to `to`; either end may be a turning point.
struct Segment {
    double from, to;
    bool turn_from, turn_to;
    double energy;
    const PhysParams* params;

    [[nodiscard]] double mid() const { return 0.5 * (from + to); }

    [[nodiscard]] double total() const {
        const PhysParams& p = *params;
        if (turn_from && turn_to) {
            return time_from_turn(from, mid(), energy, p) + time_from_turn(to, mid(), energy, p);
        }
        if (turn_from) return time_from_turn(from, to, energy, p);
        if (turn_to) return time_from_turn(to, from, energy, p);
        return time_regular(from, to, energy, p);
    }

    // Time from `from` to theta_e (theta_e between from and to).
    [[nodiscard]] double partial(double theta_e, double full) const {
        const PhysParams& p = *params;
        const bool before_mid = std::abs(theta_e - from) <= std::abs(mid() - from);
        if (turn_from && (!turn_to || before_mid)) return time_from_turn(from, theta_e, energy, p);
        if (turn_to) return full - time_from_turn(to, theta_e, energy, p);
        return time_regular(from, theta_e, energy, p);
    }

    [[nodiscard]] double invert(double t, double full) const {
        return solve_bracket([&](double th) { return partial(th, full) - t; }, from, to);
    }
};

}  // namespace

PolarCoords polar_map(double x, double z, double px, double pz) {
    const double r = std::hypot(x, z);
    if (r == 0.0) throw ConfigError("polar map undefined at the origin");
    const double th = std::atan2(x, z);
    const double s = std::sin(th), c = std::cos(th);
    return {r, th, px * s + pz * c, r * (px * c - pz * s)};
}

CartesianCoords polar_unmap(const PolarCoords& q) {
    if (q.r == 0.0) throw ConfigError("polar map undefined at the origin");
    const double s = std::sin(q.theta), c = std::cos(q.theta);
    return {q.r * s, q.r * c, q.p_r * s + q.p / q.r * c, q.p_r * c - q.p / q.r * s};
}

Coeffs h_star_coeffs(double theta, const PhysParams& p) {
    const double c = std::cos(theta), s = std::sin(theta), g = p.gamma;
    return {g * (-c + 0.5 * (1.0 + c * c)), -p.omega_rabi + 0.5 * g * (-3.0 * s + std::sin(2.0 * theta)),
            -0.5 * g * (c * c - c)};
}

Coeffs h_star_coeffs_d1(double theta, const PhysParams& p) {
    const double c = std::cos(theta), s = std::sin(theta), g = p.gamma;
    return {g * s * (1.0 - c), 0.5 * g * (-3.0 * c + 2.0 * std::cos(2.0 * theta)),
            0.5 * g * (std::sin(2.0 * theta) - s)};
}

Coeffs h_star_coeffs_d2(double theta, const PhysParams& p) {
    const double c = std::cos(theta), s = std::sin(theta), g = p.gamma;
    return {g * (c - std::cos(2.0 * theta)), 0.5 * g * (3.0 * s - 4.0 * std::sin(2.0 * theta)),
            0.5 * g * (2.0 * std::cos(2.0 * theta) - c)};
}

double h_polar(double theta, double p, double r, const PhysParams& params) {
    const double g = params.gamma, sg = std::sqrt(g);
    const double s = std::sin(theta), w = 1.0 - std::cos(theta);
    const double theta_dot = -params.omega_rabi - 0.5 * g * s + sg * r * w;
    return p * theta_dot - 0.5 * r * r - r * sg * s - 0.5 * g * w;
}

double optimal_readout(double theta, double p, const PhysParams& params) {
    return -std::sqrt(params.gamma) * (p * (std::cos(theta) - 1.0) + std::sin(theta));
}

double h_star(double theta, double p, const PhysParams& params) {
    const Coeffs k = h_star_coeffs(theta, params);
    return (k.a * p + k.b) * p + k.c;
}

double sdot(double theta, double p, const PhysParams& params) {
    const double c = std::cos(theta), sh = std::sin(0.5 * theta);
    return params.gamma * sh * sh * (p * p * (c - 1.0) + c);
}

double discriminant(double theta, double energy, const PhysParams& params) {
    const Coeffs k = h_star_coeffs(theta, params);
    return k.b * k.b + 4.0 * k.a * (energy - k.c);
}

std::optional<MomentumRoots> p_pm(double theta, double energy, const PhysParams& params) {
    const Coeffs k = h_star_coeffs(theta, params);
    if (std::abs(k.a) <= 1e-14 * std::max(1.0, std::abs(k.b))) {
        if (k.b == 0.0) return std::nullopt;
        const double q = (energy - k.c) / k.b;
        return MomentumRoots{q, q, true};
    }
    const double d = k.b * k.b + 4.0 * k.a * (energy - k.c);
    if (d < 0.0) return std::nullopt;
    const double sq = std::sqrt(d);
    // Cancellation-free pair of roots of a p^2 + b p + (c - E).
    const double qv = -0.5 * (k.b + std::copysign(sq, k.b));
    double r1 = qv / k.a;
    double r2 = qv != 0.0 ? (k.c - energy) / qv : r1;
    if (r1 < r2) std::swap(r1, r2);
    return k.a > 0.0 ? MomentumRoots{r1, r2, false} : MomentumRoots{r2, r1, false};
}

PolarRates eom_2d(double theta, double p, const PhysParams& params) {
    const Coeffs k = h_star_coeffs(theta, params);
    const Coeffs d = h_star_coeffs_d1(theta, params);
    return {2.0 * k.a * p + k.b, -(d.a * p + d.b) * p - d.c};
}

std::string to_string(FixedPointKind k) {
    return k == FixedPointKind::elliptic ? "elliptic" : "hyperbolic";
}

std::vector<FixedPoint> fixed_points(const PhysParams& params, std::size_t n_scan) {
    if (!(params.gamma > 0.0)) throw ConfigError("gamma must be positive");
    if (n_scan < 16) throw ConfigError("fixed-point scan needs at least 16 samples");
    const auto lhs = [&](double th) {
        const Coeffs k = h_star_coeffs(th, params);
        const Coeffs d = h_star_coeffs_d1(th, params);
        const double q = k.b / (2.0 * k.a);
        return (d.a * q - d.b) * q + d.c;
    };
    const double lo = 1e-6, hi = kTwoPi - 1e-6;
    std::vector<FixedPoint> out;
    double t0 = lo, f0 = lhs(t0);
    for (std::size_t i = 1; i <= n_scan; ++i) {
        const double t1 = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_scan);
        const double f1 = lhs(t1);
        if (std::isfinite(f0) && std::isfinite(f1) && (f0 < 0.0) != (f1 < 0.0)) {
            const double th = f0 == 0.0 ? t0 : solve_bracket(lhs, t0, t1, 1e-12);
            const Coeffs k = h_star_coeffs(th, params);
            FixedPoint fp;
            fp.theta = th;
            fp.p = -k.b / (2.0 * k.a);
            const PolarRates r = eom_2d(th, fp.p, params);
            fp.residual = std::hypot(r.dtheta, r.dp);
            if (fp.residual <= 1e-8) {
                const Coeffs d = h_star_coeffs_d1(th, params);
                const Coeffs d2 = h_star_coeffs_d2(th, params);
                const double j11 = 2.0 * d.a * fp.p + d.b;
                const double j12 = 2.0 * k.a;
                const double j21 = -(d2.a * fp.p + d2.b) * fp.p - d2.c;
                const double det = -j11 * j11 - j12 * j21;
                const double real_part = det < 0.0 ? std::sqrt(-det) : 0.0;
                fp.kind = real_part < 1e-6 ? FixedPointKind::elliptic : FixedPointKind::hyperbolic;
                fp.energy = h_star(th, fp.p, params);
                out.push_back(fp);
            }
        }
        t0 = t1;
        f0 = f1;
    }
    return out;
}

std::vector<FixedPoint> fixed_points_ratio(double omega, double gamma, std::size_t n_scan) {
    PhysParams p;
    p.gamma = gamma;
    p.eta = 1.0;
    p.omega_rabi = omega * gamma;
    return fixed_points(p, n_scan);
}

BifurcationScan bifurcation_scan(double omega_lo, double omega_hi, std::size_t n, double tol) {
    if (!(omega_hi > omega_lo) || !(omega_lo > 0.0)) throw ConfigError("invalid omega range");
    if (n < 2) throw ConfigError("bifurcation scan needs at least two samples");
    BifurcationScan scan;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = omega_lo + (omega_hi - omega_lo) * static_cast<double>(i) /
                                        static_cast<double>(n - 1);
        scan.branches.push_back({w, fixed_points_ratio(w)});
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t c0 = scan.branches[i].points.size();
        const std::size_t c1 = scan.branches[i + 1].points.size();
        if (c0 == c1) continue;
        double lo = scan.branches[i].omega, hi = scan.branches[i + 1].omega;
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            (fixed_points_ratio(mid).size() == c0 ? lo : hi) = mid;
        }
        scan.omega_c = 0.5 * (lo + hi);
        scan.bracket_lo = lo;
        scan.bracket_hi = hi;
        scan.count_below = c0;
        scan.count_above = c1;
        break;
    }
    return scan;
}

std::optional<double> flight_endpoint(double theta_i, int dir, double energy, double horizon,
                                      const PhysParams& params, const WindingOptions& opt) {
    const auto d_at = [&](double th) { return discriminant(th, energy, params); };
    if (d_at(theta_i) < 0.0) return std::nullopt;
    double theta = theta_i;
    double left = horizon;
    bool at_turn = d_at(theta_i) == 0.0;
    std::size_t turns = 0;
    while (turns <= opt.max_turns) {
        double next = theta + dir * opt.theta_step;
        bool hits_pole = false;
        if (dir > 0) {
            const double pole = kTwoPi * (wrap_floor(theta) + 1.0);
            if (next >= pole) {
                next = pole;
                hits_pole = true;
            }
        }
        Segment seg{theta, next, at_turn, false, energy, &params};
        // sub-sample D so a forbidden gap narrower than the step is not jumped over
        double prev = at_turn ? theta + (next - theta) * 1e-6 : theta;
        if (d_at(prev) <= 0.0) return std::nullopt;
        for (std::size_t k = 1; k <= kSubSamples; ++k) {
            const double th = theta + (next - theta) * static_cast<double>(k) / kSubSamples;
            if (d_at(th) <= 0.0) {
                seg.to = solve_bracket(d_at, prev, th);
                seg.turn_to = true;
                break;
            }
            prev = th;
        }
        const double full = seg.total();
        if (full >= left) return seg.invert(left, full);
        if (hits_pole && !seg.turn_to) return std::nullopt;
        left -= full;
        theta = seg.to;
        at_turn = seg.turn_to;
        if (seg.turn_to) {
            dir = -dir;
            ++turns;
        }
    }
    return std::nullopt;
}

namespace {

WindingSolution reconstruct(double theta_i, double theta_f, double horizon, double energy,
                            int dir, const PhysParams& params, const WindingOptions& opt) {
    const auto roots = p_pm(theta_i, energy, params);
    if (!roots) throw NumericError("no momentum root at the initial angle");
    WindingSolution sol;
    sol.energy = energy;
    sol.initial_branch = dir;
    using S = ode::State<3>;
    S y{theta_i, dir > 0 ? roots->plus : roots->minus, 0.0};
    const auto rhs = [&params](const S& v) {
        const PolarRates r = eom_2d(v[0], v[1], params);
        const Coeffs k = h_star_coeffs(v[0], params);
        return S{r.dtheta, r.dp, -k.a * v[1] * v[1] + k.c};
    };
    const auto guard = [](const S& v) { return std::abs(v[1]) < 1e8; };
    ode::Options o;
    o.rtol = 1e-12;
    o.atol = 1e-12;
    const std::size_t n =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(horizon / opt.output_dt - 1e-9)));
    const double dt = horizon / static_cast<double>(n);
    sol.time.push_back(0.0);
    sol.path.push_back({y[0], y[1]});
    double h = 0.0;
    double prev_rate = eom_2d(y[0], y[1], params).dtheta;
    for (std::size_t k = 0; k < n; ++k) {
        const auto res = ode::integrate<3>(rhs, y, dt * k, dt * (k + 1), h, o, guard);
        if (!res.ok()) throw NumericError("pure-state path reconstruction failed");
        const double rate = eom_2d(y[0], y[1], params).dtheta;
        if ((rate > 0.0) != (prev_rate > 0.0)) ++sol.turns;
        prev_rate = rate;
        sol.time.push_back(dt * (k + 1));
        sol.path.push_back({y[0], y[1]});
    }
    sol.action = y[2];
    sol.endpoint_error = std::abs(y[0] - theta_f);
    sol.region = sol.turns > 0 ? 'B' : (dir < 0 ? 'A' : 'C');
    return sol;
}

}  // namespace

std::vector<WindingSolution> winding_bvp(double theta_i, double theta_f, double horizon,
                                         const PhysParams& params, const WindingOptions& opt) {
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    if (opt.n_energy < 2) throw ConfigError("energy scan needs at least two samples");
    const Coeffs k = h_star_coeffs(theta_i, params);
    double e_lo = k.a > 0.0 ? k.c - k.b * k.b / (4.0 * k.a) : -opt.energy_max;
    e_lo += 1e-9 * std::max(1.0, std::abs(e_lo));
    if (!(opt.energy_max > e_lo)) throw ConfigError("energy scan range is empty");

    std::vector<WindingSolution> out;
    for (int dir : {+1, -1}) {
        const auto residual = [&](double e) {
            const auto end = flight_endpoint(theta_i, dir, e, horizon, params, opt);
            return end ? *end - theta_f : kNaN;
        };
        std::vector<double> es(opt.n_energy), fs(opt.n_energy);
        for (std::size_t i = 0; i < opt.n_energy; ++i) {
            es[i] = e_lo + (opt.energy_max - e_lo) * static_cast<double>(i) /
                               static_cast<double>(opt.n_energy - 1);
            fs[i] = residual(es[i]);
        }
        for (std::size_t i = 0; i + 1 < opt.n_energy; ++i) {
            if (!std::isfinite(fs[i]) || !std::isfinite(fs[i + 1])) continue;
            if ((fs[i] < 0.0) == (fs[i + 1] < 0.0) && fs[i] != 0.0) continue;
            double e = es[i];
            if (fs[i] != 0.0) {
                const auto guarded = [&](double v) {
                    const double r = residual(v);
                    return std::isfinite(r) ? r : 1e300;
                };
                e = solve_bracket(guarded, es[i], es[i + 1], 1e-12);
            }
            const double r = residual(e);
            if (!std::isfinite(r) || std::abs(r) > opt.root_tolerance) continue;
            out.push_back(reconstruct(theta_i, theta_f, horizon, e, dir, params, opt));
        }
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.energy < b.energy; });
    return out;
}

std::string portrait_csv(const PhysParams& params, double theta_lo, double theta_hi, double p_lo,
                         double p_hi, std::size_t n_theta, std::size_t n_p) {
    if (n_theta < 2 || n_p < 2) throw ConfigError("portrait grid needs at least 2x2 nodes");
    std::ostringstream os;
    os.precision(10);
    os << "theta,p,h,sdot\n";
    for (std::size_t i = 0; i < n_theta; ++i) {
        const double th = theta_lo + (theta_hi - theta_lo) * i / static_cast<double>(n_theta - 1);
        for (std::size_t j = 0; j < n_p; ++j) {
            const double p = p_lo + (p_hi - p_lo) * j / static_cast<double>(n_p - 1);
            os << th << ',' << p << ',' << h_star(th, p, params) << ',' << sdot(th, p, params)
               << '\n';
        }
    }
    return os.str();
}

std::string fixed_points_csv(const std::vector<FixedPoint>& fps) {
    std::ostringstream os;
    os.precision(10);
    os << "theta,p,kind,E\n";
    for (const auto& f : fps) {
        os << f.theta << ',' << f.p << ',' << to_string(f.kind) << ',' << f.energy << '\n';
    }
    return os.str();
}

std::string bifurcation_csv(const BifurcationScan& scan) {
    std::ostringstream os;
    os.precision(10);
    if (scan.omega_c) os << "# omega_c=" << *scan.omega_c << '\n';
    os << "omega,theta,p,kind\n";
    for (const auto& b : scan.branches) {
        for (const auto& f : b.points) {
            os << b.omega << ',' << f.theta << ',' << f.p << ',' << to_string(f.kind) << '\n';
        }
    }
    return os.str();
}

std::string winding_csv(const WindingSolution& sol) {
    std::ostringstream os;
    os.precision(10);
    os << "# E_MHz=" << sol.energy << "\n# branch=" << sol.initial_branch
       << "\n# region=" << sol.region << "\n# turns=" << sol.turns << "\n# S=" << sol.action
       << '\n';
    os << "t,theta,p,x,z\n";
    for (std::size_t k = 0; k < sol.path.size(); ++k) {
        const double th = sol.path[k].theta;
        os << sol.time[k] << ',' << th << ',' << sol.path[k].p << ',' << std::sin(th) << ','
           << std::cos(th) << '\n';
    }
    return os.str();
}

}  // namespace caustiq::pure
