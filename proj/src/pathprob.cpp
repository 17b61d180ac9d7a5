#include "caustiq/pathprob.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "caustiq/parallel.hpp"

namespace caustiq {

namespace {

void require_same_grid(const Trajectory& a, const Trajectory& b) {
    if (!(a.grid == b.grid) || a.states.size() != b.states.size()) {
        throw ConfigError("trajectories are on different time grids");
    }
}

BlochState interpolate(const MlpPath& path, double t) {
    const double dt = path.grid.dt;
    const double u = std::clamp(t / dt, 0.0, static_cast<double>(path.grid.n_steps));
    const auto k = std::min(static_cast<std::size_t>(u), path.grid.n_steps - 1);
    const double w = u - static_cast<double>(k);
    const PhasePoint& a = path.points[k];
    const PhasePoint& b = path.points[k + 1];
    return {a.x + w * (b.x - a.x), 0.0, a.z + w * (b.z - a.z)};
}

std::vector<std::size_t> ranked_prefix(const std::vector<Trajectory>& ensemble,
                                       const std::vector<double>& key, std::size_t take) {
    std::vector<std::size_t> order(ensemble.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (key[a] != key[b]) return key[a] < key[b];
        return ensemble[a].seed < ensemble[b].seed;
    });
    order.resize(take);
    return order;
}

}  // namespace

void PostselectRule::validate() const {
    if (!(tol > 0.0)) throw ConfigError("post-selection tolerance must be positive");
    if (!(t_final > 0.0)) throw ConfigError("post-selection time must be positive");
}

bool PostselectRule::accepts(const Trajectory& t) const {
    const double u = t_final / t.grid.dt;
    const double k = std::round(u);
    if (std::abs(u - k) > 1e-6 || k > static_cast<double>(t.grid.n_steps)) {
        throw ConfigError("post-selection time is not a node of the trajectory grid");
    }
    const auto inside = [this](const BlochState& s, const BlochState& c) {
        const double dx = s.x - c.x, dz = s.z - c.z;
        if (shape == WindowShape::disc) return std::hypot(dx, dz) <= tol;
        return std::abs(dx) <= tol && std::abs(dz) <= tol;
    };
    return inside(t.states.front(), initial) &&
           inside(t.states[static_cast<std::size_t>(k)], final);
}

std::string to_string(EstimateMethod m) {
    switch (m) {
        case EstimateMethod::distance: return "distance";
        case EstimateMethod::probability: return "probability";
        case EstimateMethod::plain_mean: return "plain_mean";
    }
    return "unknown";
}

double log_path_probability(const Trajectory& t, const PhysParams& p) {
    const std::size_t n = t.grid.n_steps;
    if (t.record.size() != n || t.states.size() != n + 1) {
        throw ConfigError("trajectory record and states do not match its grid");
    }
    const double dt = t.grid.dt;
    const double var = p.gamma * dt;
    const double norm = -0.5 * std::log(2.0 * std::numbers::pi * var);
    const double drift = std::sqrt(p.eta) * p.gamma * dt;
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double res = t.record[k] - drift * t.states[k].x;
        sum += norm - res * res / (2.0 * var);
    }
    return sum;
}

double euclid_distance(const Trajectory& a, const Trajectory& b) {
    require_same_grid(a, b);
    double d = 0.0;
    for (std::size_t k = 0; k < a.states.size(); ++k) {
        const double dx = a.states[k].x - b.states[k].x;
        const double dz = a.states[k].z - b.states[k].z;
        d += dx * dx + dz * dz;
    }
    return d;
}

std::vector<double> distance_matrix(const std::vector<Trajectory>& ensemble, unsigned threads) {
    const std::size_t m = ensemble.size();
    for (std::size_t i = 1; i < m; ++i) require_same_grid(ensemble[0], ensemble[i]);
    std::vector<double> d(m * m, 0.0);
    parallel_for(m, threads, [&](std::size_t i) {
        for (std::size_t j = i + 1; j < m; ++j) d[i * m + j] = euclid_distance(ensemble[i], ensemble[j]);
    });
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < i; ++j) d[i * m + j] = d[j * m + i];
    }
    return d;
}

double mean_distance(std::size_t i, const std::vector<Trajectory>& ensemble) {
    const std::size_t m = ensemble.size();
    if (m < 2) throw ConfigError("mean_distance needs at least two trajectories");
    if (i >= m) throw ConfigError("trajectory index out of range");
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        if (j != i) s += euclid_distance(ensemble[i], ensemble[j]);
    }
    return s / static_cast<double>(m - 1);
}

std::vector<double> mean_distances(const std::vector<Trajectory>& ensemble, unsigned threads) {
    const std::size_t m = ensemble.size();
    if (m < 2) throw ConfigError("mean_distance needs at least two trajectories");
    const std::vector<double> d = distance_matrix(ensemble, threads);
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += d[i * m + j];
        out[i] = s / static_cast<double>(m - 1);
    }
    return out;
}

std::vector<std::size_t> postselect_indices(const std::vector<Trajectory>& ensemble,
                                            const PostselectRule& rule) {
    rule.validate();
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        if (rule.accepts(ensemble[i])) keep.push_back(i);
    }
    return keep;
}

std::vector<Trajectory> postselect(const std::vector<Trajectory>& ensemble,
                                   const PostselectRule& rule) {
    std::vector<Trajectory> out;
    for (std::size_t i : postselect_indices(ensemble, rule)) out.push_back(ensemble[i]);
    return out;
}

std::size_t member_count(std::size_t m, double frac) {
    if (!(frac > 0.0 && frac <= 1.0)) throw ConfigError("fraction must lie in (0, 1]");
    const auto k = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(m) - 1e-12));
    return std::clamp<std::size_t>(k, 1, m);
}

MlpEstimate average_members(const std::vector<Trajectory>& ensemble,
                            std::vector<std::size_t> members, EstimateMethod method) {
    if (members.empty()) throw ConfigError("cannot average an empty set of trajectories");
    const Trajectory& first = ensemble.at(members.front());
    const std::size_t n = first.states.size();
    MlpEstimate est;
    est.grid = first.grid;
    est.method = method;
    est.count = members.size();
    est.mean.assign(n, BlochState{});
    est.x_std.assign(n, 0.0);
    est.z_std.assign(n, 0.0);
    for (std::size_t i : members) {
        const Trajectory& t = ensemble.at(i);
        require_same_grid(first, t);
        for (std::size_t k = 0; k < n; ++k) {
            est.mean[k].x += t.states[k].x;
            est.mean[k].z += t.states[k].z;
        }
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (auto& s : est.mean) {
        s.x *= inv;
        s.z *= inv;
    }
    for (std::size_t i : members) {
        const Trajectory& t = ensemble[i];
        for (std::size_t k = 0; k < n; ++k) {
            const double dx = t.states[k].x - est.mean[k].x;
            const double dz = t.states[k].z - est.mean[k].z;
            est.x_std[k] += dx * dx;
            est.z_std[k] += dz * dz;
        }
    }
    for (std::size_t k = 0; k < n; ++k) {
        est.x_std[k] = std::sqrt(est.x_std[k] * inv);
        est.z_std[k] = std::sqrt(est.z_std[k] * inv);
    }
    est.members = std::move(members);
    return est;
}

MlpEstimate plain_mean(const std::vector<Trajectory>& ensemble) {
    std::vector<std::size_t> all(ensemble.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return average_members(ensemble, std::move(all), EstimateMethod::plain_mean);
}

MlpEstimate mlp_by_distance(const std::vector<Trajectory>& ensemble, double frac,
                            unsigned threads) {
    if (ensemble.empty()) throw ConfigError("empty ensemble");
    const std::size_t take = member_count(ensemble.size(), frac);
    if (ensemble.size() == 1) return average_members(ensemble, {0}, EstimateMethod::distance);
    const std::vector<double> d = mean_distances(ensemble, threads);
    return average_members(ensemble, ranked_prefix(ensemble, d, take), EstimateMethod::distance);
}

MlpEstimate mlp_by_probability(const std::vector<Trajectory>& ensemble, const PhysParams& p,
                               double frac) {
    if (ensemble.empty()) throw ConfigError("empty ensemble");
    const std::size_t take = member_count(ensemble.size(), frac);
    std::vector<double> key(ensemble.size());
    for (std::size_t i = 0; i < key.size(); ++i) key[i] = -log_path_probability(ensemble[i], p);
    return average_members(ensemble, ranked_prefix(ensemble, key, take),
                           EstimateMethod::probability);
}

double band_coverage(const MlpEstimate& est, const MlpEstimate& band, const MlpPath& reference) {
    if (est.mean.size() != band.mean.size()) throw ConfigError("estimates on different grids");
    std::size_t inside = 0;
    for (std::size_t k = 0; k < est.mean.size(); ++k) {
        const BlochState ref = interpolate(reference, est.grid.time(k));
        if (std::abs(est.mean[k].x - ref.x) <= band.x_std[k] &&
            std::abs(est.mean[k].z - ref.z) <= band.z_std[k]) {
            ++inside;
        }
    }
    return static_cast<double>(inside) / static_cast<double>(est.mean.size());
}

double band_coverage(const MlpEstimate& est, const MlpPath& reference, double k) {
    MlpEstimate scaled = est;
    for (auto& v : scaled.x_std) v *= k;
    for (auto& v : scaled.z_std) v *= k;
    return band_coverage(est, scaled, reference);
}

double rms_deviation(const MlpEstimate& est, const MlpPath& reference) {
    double acc = 0.0;
    for (std::size_t k = 0; k < est.mean.size(); ++k) {
        const BlochState ref = interpolate(reference, est.grid.time(k));
        const double dx = est.mean[k].x - ref.x, dz = est.mean[k].z - ref.z;
        acc += dx * dx + dz * dz;
    }
    return std::sqrt(acc / static_cast<double>(est.mean.size()));
}

std::string mlp_estimate_csv(const MlpEstimate& est) {
    std::ostringstream os;
    os.precision(10);
    os << "# method=" << to_string(est.method) << "\n";
    os << "t,x_mean,z_mean,x_std,z_std,n_members\n";
    for (std::size_t k = 0; k < est.mean.size(); ++k) {
        os << est.grid.time(k) << ',' << est.mean[k].x << ',' << est.mean[k].z << ','
           << est.x_std[k] << ',' << est.z_std[k] << ',' << est.count << '\n';
    }
    return os.str();
}

}  // namespace caustiq
