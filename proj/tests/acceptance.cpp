// Acceptance suite: one PASS/FAIL line per criterion.
//
//   caustiq_acceptance            run criteria 1-8
//   caustiq_acceptance 4 6        run only the listed criteria
//
// Exit status is 0 only if every requested criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "caustiq/cluster.hpp"
#include "caustiq/core.hpp"
#include "caustiq/manifold.hpp"
#include "caustiq/mlp.hpp"
#include "caustiq/pathprob.hpp"
#include "caustiq/purestate.hpp"
#include "caustiq/sde.hpp"

using namespace caustiq;

namespace {

// ----- pinned tolerances and thresholds
namespace c1 {
constexpr double theta = 4.155, p = 0.967, pos_tol = 0.005;
constexpr double energy = -2.126, energy_tol = 0.01;
constexpr double runtime_s = 1.0;
}  // namespace c1
namespace c2 {
constexpr double omega_c = 0.145, omega_c_tol = 0.005;
constexpr double omega = 0.13, pos_tol = 0.02;
constexpr double energy_s = -0.938, energy_tol = 0.02;
constexpr double runtime_s = 10.0;
struct Expected {
    double theta, p;
    pure::FixedPointKind kind;
};
const Expected points[] = {{6.04, -0.201, pure::FixedPointKind::hyperbolic},
                           {4.63, -1.25, pure::FixedPointKind::hyperbolic},
                           {5.55, -5.63, pure::FixedPointKind::elliptic}};
}  // namespace c2
namespace c3 {
constexpr double theta_i = 3.141592653589793, theta_f = -1.24, horizon = 1.4;
constexpr double energy_a = 11.09, energy_b = -4.09, energy_tol = 0.05;
constexpr double runtime_s = 10.0;
}  // namespace c3
namespace c4 {
const BlochState q_i{0.0, 0.0, -1.0}, q_f{-0.62, 0.0, 0.21};
constexpr double horizon = 1.4;
constexpr std::size_t expected_solutions = 2, expected_layers = 2;
const double no_drive_horizons[] = {0.5, 1.4, 2.25};
constexpr std::size_t pin_grid = 10;
constexpr double runtime_s = 300.0;
}  // namespace c4
namespace c5 {
const BlochState q_i{0.0, 0.0, -0.97}, q_f{-0.6, 0.0, -0.3};
constexpr double horizon = 1.94, tol = 0.05, frac = 0.05;
constexpr std::size_t n_traj = 100000;
constexpr double min_coverage = 0.90, min_plain_violation = 0.25;
constexpr double runtime_s = 900.0;
}  // namespace c5
namespace c6 {
const BlochState q_i{0.0, 0.0, -0.97}, q_f{-0.62, 0.0, 0.21};
constexpr double horizon = 1.4, tol = 0.05, frac = 0.05;
constexpr std::size_t n_traj = 1000000;
constexpr double min_coverage = 0.90;
constexpr std::size_t synthetic_seeds = 10, synthetic_size = 40;
constexpr double synthetic_noise = 0.02;
constexpr double runtime_s = 900.0;
}  // namespace c6
namespace c7 {
struct Boundary {
    double z, x, t;
};
const Boundary boundaries[] = {{0.65, -0.08, 1.2}, {0.19, -0.93, 1.4}, {0.36, 0.47, 1.0},
                               {0.21, -0.62, 1.4}};
const BlochState q_i{0.0, 0.0, -0.97};
constexpr double tol = 0.05, frac = 0.05, n_sigma = 2.0;
constexpr std::size_t n_traj = 1000000, min_agreeing = 2;
constexpr double runtime_s = 1800.0;
}  // namespace c7
namespace c8 {
constexpr std::size_t n_energy_paths = 100, n_hamilton_points = 1000;
constexpr double energy_tol = 1e-6, hamilton_tol = 1e-6, stationarity_tol = 1e-8;
constexpr double identity_tol = 1e-10, purity_tol = 1e-4, multiplicity_rel_tol = 1e-12;
constexpr std::size_t n_lindblad = 10000;
constexpr double lindblad_sigmas = 5.0;
}  // namespace c8

constexpr std::uint64_t kRootSeed = 1;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ----- criterion 1

Outcome criterion1() {
    const auto t0 = Clock::now();
    const auto fps = pure::fixed_points(reference_params());
    const double dt = seconds_since(t0);
    Outcome o;
    if (fps.size() != 1) {
        o.detail = fmt("expected one fixed point, got %zu", fps.size());
        return o;
    }
    const auto& f = fps.front();
    o.pass = std::abs(f.theta - c1::theta) <= c1::pos_tol && std::abs(f.p - c1::p) <= c1::pos_tol &&
             std::abs(f.energy - c1::energy) <= c1::energy_tol && dt < c1::runtime_s;
    o.detail = fmt("(theta,p)=(%.5f,%.5f) %s E=%.5f; %.3f s", f.theta, f.p,
                   pure::to_string(f.kind).c_str(), f.energy, dt);
    return o;
}

// ----- criterion 2

Outcome criterion2() {
    const auto t0 = Clock::now();
    const auto scan = pure::bifurcation_scan(0.05, 0.4, 36);
    const auto fps = pure::fixed_points_ratio(c2::omega);
    Outcome o;
    std::ostringstream d;
    bool ok = scan.omega_c && std::abs(*scan.omega_c - c2::omega_c) <= c2::omega_c_tol &&
              scan.bracket_lo <= *scan.omega_c && *scan.omega_c <= scan.bracket_hi;
    d << fmt("omega_c=%.5f in [%.5f,%.5f]", scan.omega_c.value_or(NAN), scan.bracket_lo,
             scan.bracket_hi);

    ok = ok && fps.size() == 3;
    for (const auto& e : c2::points) {
        const auto it = std::find_if(fps.begin(), fps.end(), [&](const pure::FixedPoint& f) {
            return std::abs(f.theta - e.theta) <= c2::pos_tol && std::abs(f.p - e.p) <= c2::pos_tol;
        });
        const bool found = it != fps.end() && it->kind == e.kind;
        ok = ok && found;
        d << fmt("; (%.2f,%.3f)%s", e.theta, e.p, found ? "ok" : "missing");
    }

    // The island separatrix passes through the hyperbolic member of the pair
    // born at omega_c; follow that branch down to omega = 0.13.
    std::optional<double> e_s;
    if (scan.omega_c) {
        double track = NAN;
        const auto born = pure::fixed_points_ratio(*scan.omega_c - 1e-4);
        if (born.size() == 3) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < 3; ++a) {
                for (std::size_t b = a + 1; b < 3; ++b) {
                    const double gap = std::hypot(born[a].theta - born[b].theta, born[a].p - born[b].p);
                    if (gap < best) {
                        best = gap;
                        track = born[a].kind == pure::FixedPointKind::hyperbolic ? born[a].theta
                                                                                : born[b].theta;
                    }
                }
            }
        }
        const int steps = 40;
        for (int k = 1; k <= steps && std::isfinite(track); ++k) {
            const double w = *scan.omega_c - 1e-4 - (*scan.omega_c - 1e-4 - c2::omega) * k / steps;
            const auto cur = pure::fixed_points_ratio(w);
            double best = std::numeric_limits<double>::infinity();
            const pure::FixedPoint* pick = nullptr;
            for (const auto& f : cur) {
                if (f.kind != pure::FixedPointKind::hyperbolic) continue;
                if (std::abs(f.theta - track) < best) {
                    best = std::abs(f.theta - track);
                    pick = &f;
                }
            }
            if (!pick) {
                track = NAN;
                break;
            }
            track = pick->theta;
            if (k == steps) e_s = pick->energy;
        }
    }
    ok = ok && e_s && std::abs(*e_s - c2::energy_s) <= c2::energy_tol;
    d << fmt("; E_s=%.5f", e_s.value_or(NAN));
    const double dt = seconds_since(t0);
    ok = ok && dt < c2::runtime_s;
    d << fmt("; %.2f s", dt);
    o.pass = ok;
    o.detail = d.str();
    return o;
}

// ----- criterion 3

Outcome criterion3() {
    const auto t0 = Clock::now();
    const PhysParams p = reference_params();
    const auto sol_a = pure::winding_bvp(c3::theta_i, c3::theta_f - kTwoPi, c3::horizon, p);
    const auto sol_b = pure::winding_bvp(c3::theta_i, c3::theta_f, c3::horizon, p);
    const double dt = seconds_since(t0);
    const auto near = [](const std::vector<pure::WindingSolution>& v, double e) {
        return std::find_if(v.begin(), v.end(), [e](const pure::WindingSolution& s) {
            return std::abs(s.energy - e) <= c3::energy_tol;
        });
    };
    const auto a = near(sol_a, c3::energy_a);
    const auto b = near(sol_b, c3::energy_b);
    std::ostringstream d;
    d << "A:";
    for (const auto& s : sol_a) d << fmt(" %.4f(%c)", s.energy, s.region);
    d << "; B:";
    for (const auto& s : sol_b) d << fmt(" %.4f(%c)", s.energy, s.region);
    d << fmt("; %.2f s", dt);
    return {a != sol_a.end() && b != sol_b.end() && dt < c3::runtime_s, d.str()};
}

// ----- criterion 4

Outcome criterion4() {
    const auto t0 = Clock::now();
    const PhysParams p = reference_params();
    const auto sr = shoot_bvp(c4::q_i, c4::q_f, c4::horizon, p);
    const auto sheet = sweep(c4::q_i, p, c4::horizon);
    const auto pin = pin_test(sheet, c4::q_f);

    PhysParams still = p;
    still.omega_rabi = 0.0;
    std::size_t worst = 0, pins = 0;
    for (double horizon : c4::no_drive_horizons) {
        const auto s0 = sweep(c4::q_i, still, horizon);
        for (std::size_t i = 0; i < c4::pin_grid; ++i) {
            for (std::size_t j = 0; j < c4::pin_grid; ++j) {
                const double x = -0.9 + 1.8 * static_cast<double>(i) / (c4::pin_grid - 1);
                const double z = -0.9 + 1.8 * static_cast<double>(j) / (c4::pin_grid - 1);
                if (std::hypot(x, z) > 0.95) continue;
                worst = std::max(worst, pin_test(s0, {x, 0.0, z}).layers);
                ++pins;
            }
        }
    }
    const double dt = seconds_since(t0);
    std::ostringstream d;
    d << fmt("shoot_bvp %zu solutions (S:", sr.solutions.size());
    for (const auto& s : sr.solutions) d << fmt(" %.4f/w%d", s.action, s.winding);
    d << fmt("); pin layers %zu; Omega=0 worst %zu over %zu pins; %.1f s", pin.layers, worst,
             pins, dt);
    return {sr.solutions.size() == c4::expected_solutions && pin.layers == c4::expected_layers &&
                worst <= 1 && dt < c4::runtime_s,
            d.str()};
}

// ----- shared ensemble machinery

std::vector<Trajectory> postselected(const BlochState& qi, const BlochState& qf, double horizon,
                                     double tol, std::size_t n) {
    const PhysParams p = reference_params();
    const TimeGrid g = TimeGrid::covering(horizon, kDefaultDt);
    const PostselectRule rule{qi, qf, g.total(), tol, WindowShape::box};
    EnsembleOptions opt;
    opt.keep = [&rule](const Trajectory& t) { return rule.accepts(t); };
    return simulate_ensemble(qi, p, g, n, kRootSeed, opt);
}

std::map<std::string, std::vector<Trajectory>> g_ensembles;

const std::vector<Trajectory>& cached(const BlochState& qi, const BlochState& qf, double horizon,
                                      double tol, std::size_t n) {
    const std::string key = fmt("%.6f %.6f %.6f %.6f %.6f %.6f %zu", qi.x, qi.z, qf.x, qf.z,
                                horizon, tol, n);
    auto it = g_ensembles.find(key);
    if (it == g_ensembles.end()) {
        it = g_ensembles.emplace(key, postselected(qi, qf, horizon, tol, n)).first;
    }
    return it->second;
}

struct ClusterRun {
    ClusterPartition part;
    MlpEstimate e1, e2;
    std::vector<MlpPath> theory;   ///< dominant path per winding class
    bool direct = true;            ///< cluster 1 <-> theory[0]
    std::optional<RatioFit> fit;
    std::string fit_error;
};

ClusterRun cluster_run(const std::vector<Trajectory>& ens, const BlochState& qi,
                       const BlochState& qf, double horizon, double frac) {
    const PhysParams p = reference_params();
    ClusterRun r;
    r.part = bipartition(ens, weights(ens, p), kRootSeed);
    std::vector<Trajectory> a, b;
    for (auto i : r.part.set1) a.push_back(ens[i]);
    for (auto i : r.part.set2) b.push_back(ens[i]);
    r.e1 = mlp_by_distance(a, frac);
    r.e2 = mlp_by_distance(b, frac);
    r.theory = dominant_per_winding(shoot_bvp(qi, qf, horizon, p).solutions);
    if (r.theory.size() >= 2) {
        r.direct = rms_deviation(r.e1, r.theory[0]) + rms_deviation(r.e2, r.theory[1]) <=
                   rms_deviation(r.e1, r.theory[1]) + rms_deviation(r.e2, r.theory[0]);
    }
    const auto d1 = distances_to(ens, r.part.set1, r.e1.mean);
    const auto d2 = distances_to(ens, r.part.set2, r.e2.mean);
    std::vector<double> pool = d1;
    pool.insert(pool.end(), d2.begin(), d2.end());
    const auto edges = freedman_diaconis_edges(pool);
    const std::size_t n_dim = ens.front().grid.n_steps;
    try {
        r.fit = fit_relative_probability(make_histogram(d1, edges, n_dim),
                                         make_histogram(d2, edges, n_dim));
    } catch (const NumericError& e) {
        r.fit_error = e.what();
    }
    return r;
}

// ----- criterion 5

Outcome criterion5() {
    const auto t0 = Clock::now();
    const PhysParams p = reference_params();
    const auto& ens = cached(c5::q_i, c5::q_f, c5::horizon, c5::tol, c5::n_traj);
    if (ens.empty()) return {false, "post-selection kept no trajectories"};
    const auto theory = shoot_bvp(c5::q_i, c5::q_f, c5::horizon, p).solutions;
    if (theory.empty()) return {false, "shoot_bvp found no theory path"};
    const MlpPath& th = theory.front();
    const auto by_dist = mlp_by_distance(ens, c5::frac);
    const auto by_prob = mlp_by_probability(ens, p, c5::frac);
    const auto mean = plain_mean(ens);
    const double cov_d = band_coverage(by_dist, th);
    const double cov_p = band_coverage(by_prob, th);
    const double outside = 1.0 - band_coverage(mean, by_dist, th);
    const double dt = seconds_since(t0);
    return {cov_d >= c5::min_coverage && cov_p >= c5::min_coverage &&
                outside >= c5::min_plain_violation && dt < c5::runtime_s,
            fmt("kept %zu; theory paths %zu; coverage distance %.3f probability %.3f; plain mean "
                "outside distance band %.3f; %.1f s",
                ens.size(), theory.size(), cov_d, cov_p, outside, dt)};
}

// ----- criterion 6

Outcome criterion6() {
    const auto t0 = Clock::now();
    const PhysParams p = reference_params();
    std::ostringstream d;
    bool ok = true;

    const auto& ens = cached(c6::q_i, c6::q_f, c6::horizon, c6::tol, c6::n_traj);
    if (ens.size() < 2) {
        ok = false;
        d << fmt("kept %zu", ens.size());
    } else {
        const ClusterRun r = cluster_run(ens, c6::q_i, c6::q_f, c6::horizon, c6::frac);
        d << fmt("kept %zu; sizes %zu/%zu", ens.size(), r.part.set1.size(), r.part.set2.size());
        if (r.theory.size() < 2) {
            ok = false;
            d << fmt("; theory paths %zu", r.theory.size());
        } else {
            const MlpPath& t1 = r.direct ? r.theory[0] : r.theory[1];
            const MlpPath& t2 = r.direct ? r.theory[1] : r.theory[0];
            const double cov1 = band_coverage(r.e1, t1), cov2 = band_coverage(r.e2, t2);
            ok = ok && cov1 >= c6::min_coverage && cov2 >= c6::min_coverage;
            d << fmt("; cluster1~w%d coverage %.3f; cluster2~w%d coverage %.3f", t1.winding,
                     cov1, t2.winding, cov2);
        }
    }

    const auto bench = synthetic_benchmark(c6::synthetic_size, c6::synthetic_noise, kRootSeed, p,
                                           TimeGrid::covering(1.94, kDefaultDt));
    const auto dist = distance_matrix(bench.ensemble);
    const auto w = weights(bench.ensemble, p);
    std::optional<std::vector<int>> first;
    bool stable = true, exact = true;
    for (std::uint64_t s = 1; s <= c6::synthetic_seeds; ++s) {
        auto lab = bipartition(dist, w, s).label;
        if (lab.front() != 1) {
            for (auto& l : lab) l = 3 - l;
        }
        if (!first) first = lab;
        stable = stable && lab == *first;
        exact = exact && lab == bench.truth;
    }
    ok = ok && stable && exact;
    d << fmt("; synthetic %zu seeds %s", c6::synthetic_seeds,
             stable && exact ? "identical and exact" : "differ");
    const double dt = seconds_since(t0);
    ok = ok && dt < c6::runtime_s;
    d << fmt("; %.1f s", dt);
    return {ok, d.str()};
}

// ----- criterion 7

Outcome criterion7() {
    const auto t0 = Clock::now();
    std::ostringstream d;
    std::size_t agreeing = 0, index = 0;
    for (const auto& bc : c7::boundaries) {
        ++index;
        const BlochState qf{bc.x, 0.0, bc.z};
        const auto& ens = cached(c7::q_i, qf, bc.t, c7::tol, c7::n_traj);
        d << fmt("%sbc%zu kept %zu", index > 1 ? "; " : "", index, ens.size());
        if (ens.size() < 2) continue;
        const ClusterRun r = cluster_run(ens, c7::q_i, qf, bc.t, c7::frac);
        if (r.theory.size() < 2) {
            d << fmt(" theory paths %zu", r.theory.size());
            continue;
        }
        if (!r.fit) {
            d << " fit failed (" << r.fit_error << ")";
            continue;
        }
        const MlpPath& t1 = r.direct ? r.theory[0] : r.theory[1];
        const MlpPath& t2 = r.direct ? r.theory[1] : r.theory[0];
        const double ds = action_difference(t1, t2);
        const bool agree = std::abs(r.fit->log_ratio - ds) <= c7::n_sigma * r.fit->std_error;
        agreeing += agree ? 1 : 0;
        d << fmt(" fit %.3f+-%.3f vs S1-S2 %.3f %s", r.fit->log_ratio, r.fit->std_error, ds,
                 agree ? "agree" : "differ");
    }
    const double dt = seconds_since(t0);
    d << fmt("; %zu/4 agree; %.1f s", agreeing, dt);
    return {agreeing >= c7::min_agreeing && dt < c7::runtime_s, d.str()};
}

// ----- criterion 8

struct Check {
    std::string name;
    bool pass;
    std::string detail;
};

Check energy_conservation() {
    const PhysParams p = reference_params();
    std::mt19937_64 rng(kRootSeed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    std::size_t done = 0, tried = 0;
    while (done < c8::n_energy_paths && tried < 10 * c8::n_energy_paths) {
        ++tried;
        const double r = 0.95 * std::sqrt(0.5 * (u(rng) + 1.0)), a = kTwoPi * 0.5 * (u(rng) + 1.0);
        const PhasePoint start{r * std::sin(a), r * std::cos(a), 3.0 * u(rng), 3.0 * u(rng)};
        try {
            const MlpPath path = integrate_mlp(start, p, 1.4);
            for (const auto& pt : path.points) {
                worst = std::max(worst, std::abs(stochastic_energy(pt, p) - path.energy));
            }
            ++done;
        } catch (const NumericError&) {
        }
    }
    return {"energy", done == c8::n_energy_paths && worst <= c8::energy_tol,
            fmt("%zu paths max|dE| %.2e", done, worst)};
}

Check hamilton_equations() {
    const PhysParams p = reference_params();
    std::mt19937_64 rng(kRootSeed + 1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t k = 0; k < c8::n_hamilton_points; ++k) {
        const PhasePoint q{u(rng), u(rng), 3.0 * u(rng), 3.0 * u(rng)};
        const PhaseRates r = eom_rhs(q, p);
        const auto H = [&](PhasePoint v) { return stochastic_energy(v, p); };
        PhasePoint a = q, b = q;
        a.px += h, b.px -= h;
        const double dx = (H(a) - H(b)) / (2 * h);
        a = q, b = q;
        a.pz += h, b.pz -= h;
        const double dz = (H(a) - H(b)) / (2 * h);
        a = q, b = q;
        a.x += h, b.x -= h;
        const double dpx = -(H(a) - H(b)) / (2 * h);
        a = q, b = q;
        a.z += h, b.z -= h;
        const double dpz = -(H(a) - H(b)) / (2 * h);
        worst = std::max({worst, std::abs(dx - r.dx), std::abs(dz - r.dz),
                          std::abs(dpx - r.dpx), std::abs(dpz - r.dpz)});
    }
    return {"hamilton", worst <= c8::hamilton_tol,
            fmt("%zu points max err %.2e", c8::n_hamilton_points, worst)};
}

Check readout_stationarity() {
    const PhysParams p = reference_params();
    std::mt19937_64 rng(kRootSeed + 2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const PhasePoint q{u(rng), u(rng), 3.0 * u(rng), 3.0 * u(rng)};
        const double r = optimal_readout(q, p), h = 1e-3;
        const double g = (hamiltonian(q, r + h, p) - hamiltonian(q, r - h, p)) / (2 * h);
        worst = std::max(worst, std::abs(g));
    }
    return {"stationarity", worst <= c8::stationarity_tol, fmt("max|dH/dr| %.2e", worst)};
}

Check py_decoupling() {
    const PhysParams p = reference_params();
    std::mt19937_64 rng(kRootSeed + 3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const PhasePoint q{u(rng), u(rng), 3.0 * u(rng), 3.0 * u(rng)};
        const double r = 2.0 * u(rng);
        const double ref = hamiltonian(q, r, p);
        for (double py : {-5.0, 0.0, 1.7, 40.0}) {
            const double full = hamiltonian_full(q.x, 0.0, q.z, q.px, py, q.pz, r, p);
            worst = std::max(worst, std::abs(full - ref) / std::max(1.0, std::abs(ref)));
        }
    }
    const double eps = std::numeric_limits<double>::epsilon();
    return {"p_y", worst <= 4.0 * eps, fmt("max rel diff %.1e", worst)};
}

Check purity() {
    PhysParams p = reference_params();
    p.eta = 1.0;
    const TimeGrid g = TimeGrid::covering(1.94, kDefaultDt);
    const auto ens = simulate_ensemble({0.0, 0.0, -1.0}, p, g, 200, kRootSeed);
    double worst = 0.0;
    for (const auto& t : ens) {
        for (const auto& s : t.states) worst = std::max(worst, std::abs(bloch_norm(s) - 1.0));
    }
    return {"purity", worst <= c8::purity_tol, fmt("200 trajectories max|R-1| %.1e", worst)};
}

Check lindblad() {
    const PhysParams p = reference_params();
    const TimeGrid g = TimeGrid::covering(1.94, kDefaultDt);
    const BlochState s0{0.0, 0.0, -0.97};
    std::vector<double> sx(g.n_steps + 1), sz(g.n_steps + 1), qx(g.n_steps + 1), qz(g.n_steps + 1);
    for (std::size_t first = 0; first < c8::n_lindblad; first += 1000) {
        for (const auto& t : simulate_batch(s0, p, g, first, 1000, kRootSeed)) {
            for (std::size_t k = 0; k <= g.n_steps; ++k) {
                sx[k] += t.states[k].x;
                sz[k] += t.states[k].z;
                qx[k] += t.states[k].x * t.states[k].x;
                qz[k] += t.states[k].z * t.states[k].z;
            }
        }
    }
    const auto exact = lindblad_mean(s0, p, g);
    const double n = static_cast<double>(c8::n_lindblad);
    double worst = 0.0;
    for (std::size_t k = 1; k <= g.n_steps; ++k) {
        const double mx = sx[k] / n, mz = sz[k] / n;
        const double ex = std::sqrt(std::max(qx[k] / n - mx * mx, 1e-12) / n);
        const double ez = std::sqrt(std::max(qz[k] / n - mz * mz, 1e-12) / n);
        worst = std::max({worst, std::abs(mx - exact[k].x) / ex, std::abs(mz - exact[k].z) / ez});
    }
    return {"lindblad", worst <= c8::lindblad_sigmas,
            fmt("n=%zu max deviation %.2f standard errors", c8::n_lindblad, worst)};
}

Check pure_identities() {
    const PhysParams p = reference_params();
    std::mt19937_64 rng(kRootSeed + 4);
    std::uniform_real_distribution<double> th(0.05, kTwoPi - 0.05), en(-5.0, 20.0);
    double worst = 0.0;
    std::size_t used = 0;
    while (used < 1000) {
        const double theta = th(rng), e = en(rng);
        const auto roots = pure::p_pm(theta, e, p);
        if (!roots || roots->linear) continue;
        ++used;
        // errors are measured against the size of the terms being combined;
        // near theta = 0 the roots grow like 1/theta^4 and the terms like p^2
        const auto c = pure::h_star_coeffs(theta, p);
        for (double mom : {roots->plus, roots->minus}) {
            const double h = pure::h_star(theta, mom, p);
            const double terms = std::abs(c.a * mom * mom) + std::abs(c.b * mom) + std::abs(c.c);
            worst = std::max(worst, std::abs(h - e) / std::max(1.0, terms));
            const double flow = mom * pure::eom_2d(theta, mom, p).dtheta;
            const double rate = pure::sdot(theta, mom, p);
            worst = std::max(worst, std::abs(h - (flow + rate)) /
                                        std::max(1.0, std::abs(flow) + std::abs(rate)));
        }
    }
    return {"h*", worst <= c8::identity_tol, fmt("max rel err %.1e", worst)};
}

Check multiplicity() {
    using mp = boost::multiprecision::cpp_bin_float_50;
    double worst = 0.0;
    for (std::size_t n : {2u, 3u, 970u}) {
        for (double e : {0.3, 1.0, 5.0}) {
            const mp half = mp(n) / 2;
            const mp exact = log(2 * pow(boost::math::constants::pi<mp>(), half) *
                                 pow(mp(e), static_cast<int>(n) - 1) / boost::math::tgamma(half));
            const double got = multiplicity_log(e, n);
            worst = std::max(worst, static_cast<double>(abs((mp(got) - exact) /
                                                            std::max(mp(1), abs(exact)))));
        }
    }
    return {"multiplicity", worst <= c8::multiplicity_rel_tol, fmt("max rel err %.1e", worst)};
}

Check workers() {
    const PhysParams p = reference_params();
    const TimeGrid g = TimeGrid::covering(1.0, kDefaultDt);
    EnsembleOptions one, many;
    one.threads = 1;
    many.threads = 8;
    const auto a = simulate_ensemble({0.0, 0.0, -0.97}, p, g, 64, kRootSeed, one);
    const auto b = simulate_ensemble({0.0, 0.0, -0.97}, p, g, 64, kRootSeed, many);
    bool same = a.size() == b.size();
    for (std::size_t i = 0; same && i < a.size(); ++i) {
        same = a[i].states == b[i].states && a[i].record == b[i].record;
    }
    same = same && distance_matrix(a, 1) == distance_matrix(a, 8);
    same = same && mean_distances(a, 1) == mean_distances(a, 8);
    same = same && ensemble_mean({0.0, 0.0, -0.97}, p, g, 300, kRootSeed, one) ==
                       ensemble_mean({0.0, 0.0, -0.97}, p, g, 300, kRootSeed, many);
    const auto s1 = sweep({0.0, 0.0, -1.0}, p, 1.4, {}, 21, {}, 1);
    const auto s8 = sweep({0.0, 0.0, -1.0}, p, 1.4, {}, 21, {}, 8);
    same = same && s1.valid == s8.valid && s1.energy == s8.energy;
    for (std::size_t k = 0; same && k < s1.size(); ++k) {
        same = !s1.valid[k] || (s1.x_final[k] == s8.x_final[k] && s1.z_final[k] == s8.z_final[k]);
    }
    ShootOptions o1, o8;
    o1.threads = 1;
    o8.threads = 8;
    const auto r1 = shoot_bvp({0.0, 0.0, -1.0}, {-0.62, 0.0, 0.21}, 1.4, p, o1);
    const auto r8 = shoot_bvp({0.0, 0.0, -1.0}, {-0.62, 0.0, 0.21}, 1.4, p, o8);
    same = same && r1.solutions.size() == r8.solutions.size();
    for (std::size_t k = 0; same && k < r1.solutions.size(); ++k) {
        same = r1.solutions[k].action == r8.solutions[k].action;
    }
    return {"workers", same, same ? "1 vs 8 workers bit-identical" : "outputs differ"};
}

Outcome criterion8() {
    const auto t0 = Clock::now();
    const std::vector<std::function<Check()>> checks{
        energy_conservation, hamilton_equations, readout_stationarity, py_decoupling, purity,
        lindblad,            pure_identities,    multiplicity,         workers};
    bool ok = true;
    std::ostringstream d;
    for (const auto& c : checks) {
        const Check r = c();
        ok = ok && r.pass;
        d << r.name << (r.pass ? " ok (" : " FAILED (") << r.detail << "); ";
    }
    d << fmt("%.1f s", seconds_since(t0));
    return {ok, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"fixed point and separatrix energy", criterion1},
        {"bifurcation and island fixed points", criterion2},
        {"winding energies", criterion3},
        {"multiple most-likely paths", criterion4},
        {"single-MLP estimators", criterion5},
        {"clustering", criterion6},
        {"relative probability", criterion7},
        {"property suites", criterion8}};
    std::vector<std::size_t> wanted;
    for (int i = 1; i < argc; ++i) {
        const int k = std::atoi(argv[i]);
        if (k < 1 || k > static_cast<int>(criteria.size())) {
            std::fprintf(stderr, "unknown criterion '%s'\n", argv[i]);
            return 2;
        }
        wanted.push_back(static_cast<std::size_t>(k));
    }
    if (wanted.empty()) {
        for (std::size_t k = 1; k <= criteria.size(); ++k) wanted.push_back(k);
    }
    bool all = true;
    for (std::size_t k : wanted) {
        Outcome o;
        try {
            o = criteria[k - 1].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::printf("criterion %zu %s: %s: %s\n", k, o.pass ? "PASS" : "FAIL",
                    criteria[k - 1].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
