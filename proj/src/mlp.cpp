#include "caustiq/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "caustiq/parallel.hpp"

namespace caustiq {

namespace {

struct Drift {
    double fx, fz;
};

// Velocity fields of x and z for a given readout; w = 1 - z.
Drift drift(double x, double z, double r, const PhysParams& p) {
    const double k = std::sqrt(p.eta * p.gamma);
    const double w = 1.0 - z;
    const double fz = p.omega_rabi * x + p.gamma * w * (1.0 - 0.5 * p.eta * w) + k * x * w * r;
    const double fx =
        -p.omega_rabi * z - 0.5 * p.gamma * x * (1.0 - p.eta * w) + k * (w - x * x) * r;
    return {fx, fz};
}

double readout_lagrangian(double x, double z, double r, const PhysParams& p) {
    const double k = std::sqrt(p.eta * p.gamma);
    return -0.5 * r * r + r * k * x - 0.5 * p.eta * p.gamma * (1.0 - z);
}

using Shot = ode::State<5>;  // x, z, px, pz, S

Shot shot_rhs(const Shot& s, const PhysParams& p) {
    const PhasePoint pt{s[0], s[1], s[2], s[3]};
    const PhaseRates d = eom_rhs(pt, p);
    return {d.dx, d.dz, d.dpx, d.dpz, action_rate(pt, p)};
}

ode::Options ode_options(const IntegrateOptions& opt) {
    ode::Options o;
    o.rtol = opt.tolerance;
    o.atol = opt.tolerance;
    return o;
}

std::size_t output_steps(double horizon, double output_dt) {
    const double n = std::ceil(horizon / output_dt - 1e-9);
    return static_cast<std::size_t>(std::max(1.0, n));
}

}  // namespace

double hamiltonian(const PhasePoint& pt, double r, const PhysParams& p) {
    const Drift f = drift(pt.x, pt.z, r, p);
    return pt.pz * f.fz + pt.px * f.fx + readout_lagrangian(pt.x, pt.z, r, p);
}

double hamiltonian_full(double x, double y, double z, double px, double py, double pz,
                        double r, const PhysParams& p) {
    const double k = std::sqrt(p.eta * p.gamma);
    const double w = 1.0 - z;
    const double fy = -0.5 * p.gamma * y * (1.0 - p.eta * w) - k * x * y * r;
    return hamiltonian({x, z, px, pz}, r, p) + py * fy;
}

double optimal_readout(const PhasePoint& pt, const PhysParams& p) {
    const double k = std::sqrt(p.eta * p.gamma);
    const double w = 1.0 - pt.z;
    return k * (pt.x + pt.px * (w - pt.x * pt.x) + pt.pz * pt.x * w);
}

double stochastic_energy(const PhasePoint& pt, const PhysParams& p) {
    return hamiltonian(pt, optimal_readout(pt, p), p);
}

double action_rate(const PhasePoint& pt, const PhysParams& p) {
    return readout_lagrangian(pt.x, pt.z, optimal_readout(pt, p), p);
}

PhaseRates eom_rhs(const PhasePoint& pt, const PhysParams& p) {
    const double k = std::sqrt(p.eta * p.gamma);
    const double r = optimal_readout(pt, p);
    const double x = pt.x, z = pt.z, px = pt.px, pz = pt.pz;
    const double w = 1.0 - z;
    const double om = p.omega_rabi, g = p.gamma, eta = p.eta;

    PhaseRates d;
    d.dz = om * x + g * w * (1.0 - 0.5 * eta * w) + k * x * w * r;
    d.dx = -om * z - 0.5 * g * x * (1.0 - eta * w) + k * (w - x * x) * r;
    d.dpz = pz * (g * (1.0 - eta * w) + k * x * r) + px * (om + 0.5 * g * eta * x + k * r) -
            0.5 * eta * g;
    d.dpx = -pz * (om + k * w * r) + px * (0.5 * g * (1.0 - eta * w) + 2.0 * k * x * r) - k * r;
    return d;
}

MlpPath integrate_mlp(const PhasePoint& start, const PhysParams& p, double horizon,
                      const IntegrateOptions& opt) {
    if (!(horizon > 0.0)) throw ConfigError("MLP horizon must be positive");
    const std::size_t n = output_steps(horizon, opt.output_dt);

    MlpPath path;
    path.params = p;
    path.grid = TimeGrid{horizon / static_cast<double>(n), n};
    path.points.reserve(n + 1);
    path.readout.reserve(n + 1);
    path.points.push_back(start);
    path.readout.push_back(optimal_readout(start, p));
    path.energy = stochastic_energy(start, p);

    Shot s{start.x, start.z, start.px, start.pz, 0.0};
    const auto rhs = [&p](const Shot& y) { return shot_rhs(y, p); };
    const double limit = opt.momentum_limit;
    const auto guard = [limit](const Shot& y) {
        return std::abs(y[2]) <= limit && std::abs(y[3]) <= limit;
    };
    const ode::Options o = ode_options(opt);
    double h = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto res = ode::integrate<5>(rhs, s, path.grid.time(k), path.grid.time(k + 1), h, o,
                                           guard);
        if (!res.ok()) {
            std::ostringstream msg;
            msg << (res.status == ode::Status::aborted ? "momentum blowup" : "step-size underflow")
                << " at t = " << res.t << " us";
            throw NumericError(msg.str());
        }
        const PhasePoint pt{s[0], s[1], s[2], s[3]};
        path.points.push_back(pt);
        path.readout.push_back(optimal_readout(pt, p));
    }
    path.action = s[4];
    path.winding = static_cast<int>(std::lround(unwrapped_angle_change(path) / kTwoPi));
    return path;
}

std::optional<ShotResult> shoot_final(const PhasePoint& start, const PhysParams& p,
                                      double horizon, const IntegrateOptions& opt) {
    Shot s{start.x, start.z, start.px, start.pz, 0.0};
    const auto rhs = [&p](const Shot& y) { return shot_rhs(y, p); };
    const double limit = opt.momentum_limit;
    const auto guard = [limit](const Shot& y) {
        return std::abs(y[2]) <= limit && std::abs(y[3]) <= limit;
    };
    double h = 0.0;
    const auto res = ode::integrate<5>(rhs, s, 0.0, horizon, h, ode_options(opt), guard);
    if (!res.ok()) return std::nullopt;
    return ShotResult{{s[0], s[1], s[2], s[3]}, s[4]};
}

double unwrapped_angle_change(const MlpPath& path) {
    double total = 0.0;
    double prev = std::atan2(path.points.front().x, path.points.front().z);
    for (std::size_t k = 1; k < path.points.size(); ++k) {
        const double cur = std::atan2(path.points[k].x, path.points[k].z);
        double d = cur - prev;
        d -= kTwoPi * std::round(d / kTwoPi);
        total += d;
        prev = cur;
    }
    return total;
}

namespace {

struct Residual {
    double rx = 0.0, rz = 0.0;
    [[nodiscard]] double norm() const { return std::hypot(rx, rz); }
};

std::optional<Residual> residual_at(double px0, double pz0, const BlochState& qi,
                                    const BlochState& qf, double horizon, const PhysParams& p,
                                    const IntegrateOptions& opt) {
    const auto shot = shoot_final({qi.x, qi.z, px0, pz0}, p, horizon, opt);
    if (!shot) return std::nullopt;
    return Residual{shot->final.x - qf.x, shot->final.z - qf.z};
}

struct Refined {
    double px0 = 0.0, pz0 = 0.0, residual = std::numeric_limits<double>::infinity();
};

// Damped Newton on the 2-D endpoint residual with central-difference sensitivities.
std::optional<Refined> refine(double px0, double pz0, const BlochState& qi, const BlochState& qf,
                              double horizon, const PhysParams& p, const ShootOptions& opt) {
    auto f = residual_at(px0, pz0, qi, qf, horizon, p, opt.integrate);
    if (!f) return std::nullopt;
    const double target = std::min(opt.tolerance, 1e-10);
    for (std::size_t it = 0; it < opt.max_newton && f->norm() > target; ++it) {
        const double hx = 1e-6 * std::max(1.0, std::abs(px0));
        const double hz = 1e-6 * std::max(1.0, std::abs(pz0));
        const auto fxp = residual_at(px0 + hx, pz0, qi, qf, horizon, p, opt.integrate);
        const auto fxm = residual_at(px0 - hx, pz0, qi, qf, horizon, p, opt.integrate);
        const auto fzp = residual_at(px0, pz0 + hz, qi, qf, horizon, p, opt.integrate);
        const auto fzm = residual_at(px0, pz0 - hz, qi, qf, horizon, p, opt.integrate);
        if (!fxp || !fxm || !fzp || !fzm) return std::nullopt;
        const double j11 = (fxp->rx - fxm->rx) / (2 * hx), j12 = (fzp->rx - fzm->rx) / (2 * hz);
        const double j21 = (fxp->rz - fxm->rz) / (2 * hx), j22 = (fzp->rz - fzm->rz) / (2 * hz);
        const double det = j11 * j22 - j12 * j21;
        if (!std::isfinite(det) || std::abs(det) < 1e-300) return std::nullopt;
        const double dpx = -(j22 * f->rx - j12 * f->rz) / det;
        const double dpz = -(-j21 * f->rx + j11 * f->rz) / det;

        double lambda = 1.0;
        bool accepted = false;
        while (lambda >= 1.0 / 1024) {
            const double npx = px0 + lambda * dpx, npz = pz0 + lambda * dpz;
            const auto fn = residual_at(npx, npz, qi, qf, horizon, p, opt.integrate);
            if (fn && fn->norm() < f->norm()) {
                px0 = npx;
                pz0 = npz;
                f = fn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) break;
    }
    if (f->norm() > opt.tolerance) return std::nullopt;
    return Refined{px0, pz0, f->norm()};
}

double path_rms(const MlpPath& a, const MlpPath& b) {
    double acc = 0.0;
    const std::size_t n = std::min(a.points.size(), b.points.size());
    for (std::size_t k = 0; k < n; ++k) {
        const double dx = a.points[k].x - b.points[k].x;
        const double dz = a.points[k].z - b.points[k].z;
        acc += dx * dx + dz * dz;
    }
    return std::sqrt(acc / static_cast<double>(n));
}

}  // namespace

ShootResult shoot_bvp(const BlochState& q_initial, const BlochState& q_final, double horizon,
                      const PhysParams& p, const ShootOptions& opt) {
    p.validate();
    if (!(horizon >= 10.0 * opt.integrate.output_dt)) {
        throw ConfigError("shooting horizon must be at least ten output steps");
    }
    if (opt.n_grid < 2) throw ConfigError("momentum grid needs at least 2 nodes per axis");
    const MomentumBox& box = opt.box;
    if (!(box.px_hi > box.px_lo) || !(box.pz_hi > box.pz_lo) || !std::isfinite(box.px_lo) ||
        !std::isfinite(box.px_hi) || !std::isfinite(box.pz_lo) || !std::isfinite(box.pz_hi)) {
        throw ConfigError("momentum box must be finite and non-empty");
    }

    const std::size_t n = opt.n_grid;
    const auto px_at = [&](std::size_t i) {
        return box.px_lo + (box.px_hi - box.px_lo) * static_cast<double>(i) / (n - 1);
    };
    const auto pz_at = [&](std::size_t j) {
        return box.pz_lo + (box.pz_hi - box.pz_lo) * static_cast<double>(j) / (n - 1);
    };

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> res(n * n, inf);
    parallel_for(n * n, opt.threads, [&](std::size_t idx) {
        const auto r = residual_at(px_at(idx / n), pz_at(idx % n), q_initial, q_final, horizon, p,
                                   opt.integrate);
        if (r) res[idx] = r->norm();
    });

    ShootResult out;
    out.diagnostics.grid_nodes = n * n;
    out.diagnostics.singular_nodes =
        static_cast<std::size_t>(std::count(res.begin(), res.end(), inf));
    out.diagnostics.min_residual = *std::min_element(res.begin(), res.end());

    std::vector<std::size_t> seeds;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double v = res[i * n + j];
            if (!(v < opt.coarse_threshold)) continue;
            bool is_min = true;
            for (int di = -1; di <= 1 && is_min; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    if (di == 0 && dj == 0) continue;
                    const auto ii = static_cast<std::ptrdiff_t>(i) + di;
                    const auto jj = static_cast<std::ptrdiff_t>(j) + dj;
                    if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(n) ||
                        jj >= static_cast<std::ptrdiff_t>(n))
                        continue;
                    if (res[static_cast<std::size_t>(ii) * n + static_cast<std::size_t>(jj)] < v) {
                        is_min = false;
                        break;
                    }
                }
            }
            if (is_min) seeds.push_back(i * n + j);
        }
    }
    out.diagnostics.candidates = seeds.size();

    std::vector<std::optional<Refined>> refined(seeds.size());
    parallel_for(seeds.size(), opt.threads, [&](std::size_t s) {
        const std::size_t idx = seeds[s];
        refined[s] = refine(px_at(idx / n), pz_at(idx % n), q_initial, q_final, horizon, p, opt);
    });

    for (const auto& r : refined) {
        if (!r) continue;
        ++out.diagnostics.converged;
        MlpPath path;
        try {
            path = integrate_mlp({q_initial.x, q_initial.z, r->px0, r->pz0}, p, horizon,
                                 opt.integrate);
        } catch (const NumericError&) {
            continue;
        }
        const bool duplicate =
            std::any_of(out.solutions.begin(), out.solutions.end(), [&](const MlpPath& other) {
                return std::abs(other.start().px - r->px0) < 1e-3 &&
                       std::abs(other.start().pz - r->pz0) < 1e-3 && path_rms(other, path) < 1e-3;
            });
        if (!duplicate) out.solutions.push_back(std::move(path));
    }
    std::sort(out.solutions.begin(), out.solutions.end(), [](const MlpPath& a, const MlpPath& b) {
        if (a.action != b.action) return a.action > b.action;
        if (a.start().px != b.start().px) return a.start().px < b.start().px;
        return a.start().pz < b.start().pz;
    });
    return out;
}

std::vector<MlpPath> dominant_per_winding(const std::vector<MlpPath>& paths) {
    std::vector<MlpPath> out;
    for (const auto& path : paths) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const MlpPath& q) { return q.winding == path.winding; });
        if (it == out.end()) {
            out.push_back(path);
        } else if (path.action > it->action) {
            *it = path;
        }
    }
    std::sort(out.begin(), out.end(),
              [](const MlpPath& a, const MlpPath& b) { return a.action > b.action; });
    return out;
}

double action_difference(const MlpPath& a, const MlpPath& b, double endpoint_tol) {
    const auto close = [endpoint_tol](const PhasePoint& u, const PhasePoint& v) {
        return std::abs(u.x - v.x) <= endpoint_tol && std::abs(u.z - v.z) <= endpoint_tol;
    };
    if (!close(a.start(), b.start()) || !close(a.end(), b.end()) ||
        std::abs(a.grid.total() - b.grid.total()) > 1e-12) {
        throw ConfigError("action_difference needs paths with common endpoints and horizon");
    }
    return a.action - b.action;
}

std::string mlp_path_csv(const MlpPath& path) {
    std::ostringstream os;
    os << std::setprecision(12);
    os << "# E_MHz=" << path.energy << "\n";
    os << "# S=" << path.action << "\n";
    os << "# winding=" << path.winding << "\n";
    os << "# start_x=" << path.start().x << " start_z=" << path.start().z
       << " start_px=" << path.start().px << " start_pz=" << path.start().pz << "\n";
    os << "# end_x=" << path.end().x << " end_z=" << path.end().z << " T_us=" << path.grid.total()
       << "\n";
    os << "t,x,z,p_x,p_z,r,H\n";
    for (std::size_t k = 0; k < path.points.size(); ++k) {
        const PhasePoint& q = path.points[k];
        os << path.grid.time(k) << ',' << q.x << ',' << q.z << ',' << q.px << ',' << q.pz << ','
           << path.readout[k] << ',' << hamiltonian(q, path.readout[k], path.params) << '\n';
    }
    return os.str();
}

}  // namespace caustiq
