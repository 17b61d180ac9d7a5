#include "caustiq/sde.hpp"

#include <cmath>
#include <optional>
#include <random>

#include "caustiq/ode.hpp"
#include "caustiq/parallel.hpp"

namespace caustiq {

namespace {

void clamp_to_ball(BlochState& s, bool* clamped) {
    const double n = bloch_norm(s);
    const bool over = n > 1.0;
    if (over) {
        s.x /= n;
        s.y /= n;
        s.z /= n;
    }
    if (clamped) *clamped = over;
}

std::uint64_t splitmix64(std::uint64_t v) {
    v += 0x9E3779B97F4A7C15ULL;
    v = (v ^ (v >> 30)) * 0xBF58476D1CE4E5B9ULL;
    v = (v ^ (v >> 27)) * 0x94D049BB133111EBULL;
    return v ^ (v >> 31);
}

constexpr std::size_t kMeanChunk = 64;

}  // namespace

BlochState step_sme(const BlochState& s, double xi, const PhysParams& p, double dt,
                    bool* clamped) {
    const double k = std::sqrt(p.eta * p.gamma);
    const double om = p.omega_rabi, g = p.gamma;
    const double dw = xi * dt;
    BlochState out;
    out.z = s.z + (om * s.x + g * (1.0 - s.z)) * dt + k * s.x * (1.0 - s.z) * dw;
    out.x = s.x + (-om * s.z - 0.5 * g * s.x) * dt + k * (1.0 - s.z - s.x * s.x) * dw;
    out.y = s.y - 0.5 * g * s.y * dt - k * s.x * s.y * dw;
    clamp_to_ball(out, clamped);
    return out;
}

double emit_record(const BlochState& s, double xi, const PhysParams& p, double dt) {
    return std::sqrt(p.eta) * p.gamma * s.x * dt + std::sqrt(p.gamma) * xi * dt;
}

double noise_from_record(const BlochState& s, double dI, const PhysParams& p, double dt) {
    return (dI - std::sqrt(p.eta) * p.gamma * s.x * dt) / (std::sqrt(p.gamma) * dt);
}

BlochState update_from_record(const BlochState& s, double dI, const PhysParams& p, double dt) {
    // Basis {|g>, |e>} with z = +1 the ground state; L = sqrt(gamma) |g><e|,
    // H = -(Omega/2) sigma_y, so -iH is real and M below is a real matrix.
    const double dy = dI / std::sqrt(p.gamma);
    const double m00 = 1.0;
    const double m01 = 0.5 * p.omega_rabi * dt + std::sqrt(p.eta * p.gamma) * dy;
    const double m10 = -0.5 * p.omega_rabi * dt;
    const double m11 = 1.0 - 0.5 * p.gamma * dt;

    // real part of rho
    const double r00 = 0.5 * (1.0 + s.z), r01 = 0.5 * s.x, r11 = 0.5 * (1.0 - s.z);
    // M R M^T
    const double t00 = m00 * r00 + m01 * r01, t01 = m00 * r01 + m01 * r11;
    const double t10 = m10 * r00 + m11 * r01, t11 = m10 * r01 + m11 * r11;
    double n00 = t00 * m00 + t01 * m01;
    const double n01 = t00 * m10 + t01 * m11;
    const double n11 = t10 * m10 + t11 * m11;
    n00 += (1.0 - p.eta) * p.gamma * dt * r11;  // unobserved emission

    const double tr = n00 + n11;
    const double det = m00 * m11 - m01 * m10;
    BlochState out{2.0 * n01 / tr, s.y * det / tr, (n00 - n11) / tr};
    clamp_to_ball(out, nullptr);  // rounding only
    return out;
}

double advance(BlochState& s, double xi, const PhysParams& p, double dt, Scheme scheme,
               bool* clamped) {
    const double dI = emit_record(s, xi, p, dt);
    if (scheme == Scheme::euler_maruyama) {
        s = step_sme(s, xi, p, dt, clamped);
    } else {
        s = update_from_record(s, dI, p, dt);
        if (clamped) *clamped = false;
    }
    return dI;
}

std::uint64_t trajectory_seed(std::uint64_t root, std::uint64_t index) {
    return splitmix64(splitmix64(root) ^ (index * 0xD1B54A32D192ED03ULL + 1));
}

Trajectory simulate_trajectory(const BlochState& s0, const PhysParams& p, const TimeGrid& g,
                               std::uint64_t seed, Scheme scheme) {
    g.validate();
    Trajectory t;
    t.grid = g;
    t.seed = seed;
    t.states.reserve(g.n_steps + 1);
    t.record.reserve(g.n_steps);
    t.states.push_back(s0);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(g.dt));
    BlochState s = s0;
    for (std::size_t k = 0; k < g.n_steps; ++k) {
        bool clamped = false;
        t.record.push_back(advance(s, normal(rng), p, g.dt, scheme, &clamped));
        t.clamp_count += clamped ? 1 : 0;
        t.states.push_back(s);
    }
    return t;
}

std::vector<BlochState> replay_record(const BlochState& s0, const std::vector<double>& record,
                                      const PhysParams& p, const TimeGrid& g, Scheme scheme) {
    if (record.size() != g.n_steps) throw ConfigError("record length does not match grid");
    std::vector<BlochState> states;
    states.reserve(record.size() + 1);
    states.push_back(s0);
    BlochState s = s0;
    for (double dI : record) {
        if (scheme == Scheme::euler_maruyama) {
            s = step_sme(s, noise_from_record(s, dI, p, g.dt), p, g.dt);
        } else {
            s = update_from_record(s, dI, p, g.dt);
        }
        states.push_back(s);
    }
    return states;
}

std::vector<Trajectory> simulate_batch(const BlochState& s0, const PhysParams& p,
                                       const TimeGrid& g, std::size_t first, std::size_t count,
                                       std::uint64_t root_seed, const EnsembleOptions& opt) {
    p.validate();
    g.validate();
    std::vector<std::optional<Trajectory>> slots(count);
    parallel_for(count, opt.threads, [&](std::size_t i) {
        Trajectory t =
            simulate_trajectory(s0, p, g, trajectory_seed(root_seed, first + i), opt.scheme);
        if (!opt.keep || opt.keep(t)) slots[i] = std::move(t);
    });
    std::vector<Trajectory> kept;
    for (auto& s : slots) {
        if (s) kept.push_back(std::move(*s));
    }
    return kept;
}

std::vector<Trajectory> simulate_ensemble(const BlochState& s0, const PhysParams& p,
                                          const TimeGrid& g, std::size_t n,
                                          std::uint64_t root_seed, const EnsembleOptions& opt) {
    return simulate_batch(s0, p, g, 0, n, root_seed, opt);
}

std::vector<BlochState> ensemble_mean(const BlochState& s0, const PhysParams& p,
                                      const TimeGrid& g, std::size_t n, std::uint64_t root_seed,
                                      const EnsembleOptions& opt) {
    if (n < 1) throw ConfigError("ensemble_mean needs n >= 1");
    p.validate();
    g.validate();
    const std::size_t chunks = (n + kMeanChunk - 1) / kMeanChunk;
    std::vector<std::vector<BlochState>> partial(chunks);
    parallel_for(chunks, opt.threads, [&](std::size_t c) {
        std::vector<BlochState> acc(g.n_steps + 1);
        const std::size_t lo = c * kMeanChunk, hi = std::min(n, lo + kMeanChunk);
        for (std::size_t i = lo; i < hi; ++i) {
            const Trajectory t =
                simulate_trajectory(s0, p, g, trajectory_seed(root_seed, i), opt.scheme);
            for (std::size_t k = 0; k < acc.size(); ++k) {
                acc[k].x += t.states[k].x;
                acc[k].y += t.states[k].y;
                acc[k].z += t.states[k].z;
            }
        }
        partial[c] = std::move(acc);
    });
    std::vector<BlochState> mean(g.n_steps + 1);
    for (const auto& acc : partial) {
        for (std::size_t k = 0; k < mean.size(); ++k) {
            mean[k].x += acc[k].x;
            mean[k].y += acc[k].y;
            mean[k].z += acc[k].z;
        }
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& m : mean) {
        m.x *= inv;
        m.y *= inv;
        m.z *= inv;
    }
    return mean;
}

std::vector<BlochState> lindblad_mean(const BlochState& s0, const PhysParams& p,
                                      const TimeGrid& g) {
    g.validate();
    using S = ode::State<3>;  // x, y, z
    const auto rhs = [&p](const S& s) {
        return S{-p.omega_rabi * s[2] - 0.5 * p.gamma * s[0], -0.5 * p.gamma * s[1],
                 p.omega_rabi * s[0] + p.gamma * (1.0 - s[2])};
    };
    ode::Options o;
    o.rtol = 1e-12;
    o.atol = 1e-13;
    S s{s0.x, s0.y, s0.z};
    std::vector<BlochState> out;
    out.reserve(g.n_steps + 1);
    out.push_back(s0);
    double h = 0.0;
    for (std::size_t k = 0; k < g.n_steps; ++k) {
        const auto res = ode::integrate<3>(rhs, s, g.time(k), g.time(k + 1), h, o);
        if (!res.ok()) throw NumericError("lindblad_mean integration failed");
        out.push_back({s[0], s[1], s[2]});
    }
    return out;
}

}  // namespace caustiq
