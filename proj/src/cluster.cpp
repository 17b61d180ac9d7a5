#include "caustiq/cluster.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "caustiq/pathprob.hpp"

namespace caustiq {

namespace {

double set_mean(double total, std::size_t n) {
    return n >= 2 ? total / (static_cast<double>(n) * static_cast<double>(n - 1)) : 0.0;
}

double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<double> weights_from_log(const std::vector<double>& log_prob) {
    if (log_prob.empty()) return {};
    const auto [lo, hi] = std::minmax_element(log_prob.begin(), log_prob.end());
    const double span = *hi - *lo;
    std::vector<double> w(log_prob.size(), 1.0);
    if (!(span > 0.0)) return w;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = kWeightFloor + (1.0 - kWeightFloor) * (log_prob[i] - *lo) / span;
    }
    return w;
}

std::vector<double> weights(const std::vector<Trajectory>& ensemble, const PhysParams& p) {
    std::vector<double> lp(ensemble.size());
    for (std::size_t i = 0; i < lp.size(); ++i) lp[i] = log_path_probability(ensemble[i], p);
    return weights_from_log(lp);
}

double partition_objective(const std::vector<double>& dist, const std::vector<double>& w,
                           const std::vector<int>& label) {
    const std::size_t m = label.size();
    std::array<double, 2> total{0.0, 0.0};
    std::array<std::size_t, 2> n{0, 0};
    for (std::size_t i = 0; i < m; ++i) {
        const int s = label[i] - 1;
        ++n[s];
        for (std::size_t j = 0; j < m; ++j) {
            if (j != i && label[j] == label[i]) total[s] += w[j] * dist[i * m + j];
        }
    }
    return set_mean(total[0], n[0]) + set_mean(total[1], n[1]);
}

ClusterPartition bipartition(const std::vector<double>& dist, const std::vector<double>& w,
                             std::uint64_t seed) {
    const std::size_t m = w.size();
    if (m < 2) throw ConfigError("bipartition needs at least two trajectories");
    if (dist.size() != m * m) throw ConfigError("distance matrix does not match weights");

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<int> label(m);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < m; ++i) label[i] = coin(rng) ? 1 : 2;
    label[order[0]] = 1;
    label[order[1]] = 2;

    // a[i][s], b[i][s]: weighted / unweighted distance sums from i to set s (excluding i)
    std::vector<std::array<double, 2>> a(m, {0.0, 0.0}), b(m, {0.0, 0.0});
    std::array<double, 2> total{0.0, 0.0};
    std::array<std::size_t, 2> n{0, 0};
    for (std::size_t i = 0; i < m; ++i) {
        ++n[label[i] - 1];
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            a[i][label[j] - 1] += w[j] * dist[i * m + j];
            b[i][label[j] - 1] += dist[i * m + j];
        }
    }
    for (std::size_t i = 0; i < m; ++i) total[label[i] - 1] += a[i][label[i] - 1];

    ClusterPartition part;
    double current = set_mean(total[0], n[0]) + set_mean(total[1], n[1]);
    part.history.push_back(current);
    const std::size_t cap = 10 * m;

    while (part.iterations < cap) {
        bool moved = false;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i : order) {
            if (part.iterations >= cap) break;
            ++part.iterations;
            const int s = label[i] - 1, o = 1 - s;
            if (n[s] <= 1) continue;
            const double ts = total[s] - a[i][s] - w[i] * b[i][s];
            const double to = total[o] + a[i][o] + w[i] * b[i][o];
            const double trial = set_mean(ts, n[s] - 1) + set_mean(to, n[o] + 1);
            if (!(trial < current - 1e-12 * std::max(1.0, std::abs(current)))) continue;

            total[s] = ts;
            total[o] = to;
            --n[s];
            ++n[o];
            label[i] = o + 1;
            for (std::size_t j = 0; j < m; ++j) {
                if (j == i) continue;
                const double d = dist[j * m + i];
                a[j][s] -= w[i] * d;
                b[j][s] -= d;
                a[j][o] += w[i] * d;
                b[j][o] += d;
            }
            current = trial;
            part.history.push_back(current);
            moved = true;
        }
        if (!moved) {
            part.converged = true;
            break;
        }
    }

    for (std::size_t i = 0; i < m; ++i) (label[i] == 1 ? part.set1 : part.set2).push_back(i);
    part.label = std::move(label);
    part.weights = w;
    part.objective = partition_objective(dist, w, part.label);
    return part;
}

ClusterPartition bipartition(const std::vector<Trajectory>& ensemble,
                             const std::vector<double>& w, std::uint64_t seed, unsigned threads) {
    if (ensemble.size() < 2) throw ConfigError("bipartition needs at least two trajectories");
    return bipartition(distance_matrix(ensemble, threads), w, seed);
}

double multiplicity_log(double e, std::size_t n) {
    if (!(e > 0.0)) throw ConfigError("multiplicity needs a positive distance");
    if (n < 1) throw ConfigError("multiplicity needs N >= 1");
    const double h = 0.5 * static_cast<double>(n);
    return std::log(2.0) + h * std::log(std::numbers::pi) +
           static_cast<double>(n - 1) * std::log(e) - std::lgamma(h);
}

double sigma_from_mode(double e_peak, std::size_t n) {
    if (n < 2) throw ConfigError("sigma_from_mode needs N >= 2");
    return e_peak / std::sqrt(static_cast<double>(n - 1));
}

std::vector<double> freedman_diaconis_edges(std::vector<double> samples, std::size_t min_bins) {
    if (samples.empty()) throw ConfigError("cannot bin an empty sample");
    std::sort(samples.begin(), samples.end());
    double lo = samples.front(), hi = samples.back();
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double iqr = quantile(samples, 0.75) - quantile(samples, 0.25);
    std::size_t bins = min_bins;
    if (iqr > 0.0) {
        const double width = 2.0 * iqr / std::cbrt(static_cast<double>(samples.size()));
        bins = std::max(min_bins, static_cast<std::size_t>(std::ceil((hi - lo) / width)));
    }
    std::vector<double> edges(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) {
        edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
    }
    return edges;
}

DistanceHistogram make_histogram(const std::vector<double>& e, const std::vector<double>& edges,
                                 std::size_t n_dim) {
    if (edges.size() < 2) throw ConfigError("histogram needs at least one bin");
    DistanceHistogram h;
    h.edges = edges;
    h.n_dim = n_dim;
    h.counts.assign(edges.size() - 1, 0);
    for (double v : e) {
        if (v < edges.front() || v > edges.back()) continue;
        auto it = std::upper_bound(edges.begin(), edges.end(), v);
        auto b = static_cast<std::size_t>(std::distance(edges.begin(), it)) - 1;
        h.counts[std::min(b, h.counts.size() - 1)] += 1;
    }
    const auto peak = static_cast<std::size_t>(
        std::distance(h.counts.begin(), std::max_element(h.counts.begin(), h.counts.end())));
    if (h.counts[peak] == 0) throw NumericError("histogram has no samples inside its edges");
    h.sigma = sigma_from_mode(h.center(peak), n_dim);
    if (!(h.sigma > 0.0)) throw NumericError("histogram mode at zero distance");

    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t b = 0; b < h.bins(); ++b) {
        const double c = h.center(b);
        if (h.counts[b] == 0 || !(c > 0.0)) continue;
        sum += std::log(static_cast<double>(h.counts[b])) + c * c / (2.0 * h.sigma * h.sigma) -
               multiplicity_log(c, n_dim);
        ++used;
    }
    h.log_p0 = sum / static_cast<double>(used);
    return h;
}

std::vector<double> distances_to(const std::vector<Trajectory>& ensemble,
                                 const std::vector<std::size_t>& members,
                                 const std::vector<BlochState>& reference) {
    std::vector<double> out;
    out.reserve(members.size());
    for (std::size_t i : members) {
        const Trajectory& t = ensemble.at(i);
        if (t.states.size() != reference.size()) {
            throw ConfigError("reference path is on a different grid");
        }
        double d = 0.0;
        for (std::size_t k = 0; k < reference.size(); ++k) {
            const double dx = t.states[k].x - reference[k].x;
            const double dz = t.states[k].z - reference[k].z;
            d += dx * dx + dz * dz;
        }
        out.push_back(std::sqrt(d));
    }
    return out;
}

double RatioFit::ratio() const { return std::exp(log_ratio); }

RatioFit fit_relative_probability(const DistanceHistogram& h1, const DistanceHistogram& h2) {
    if (h1.edges.size() != h2.edges.size()) throw ConfigError("histograms use different bins");
    for (std::size_t b = 0; b < h1.edges.size(); ++b) {
        if (std::abs(h1.edges[b] - h2.edges[b]) > 1e-12 * std::max(1.0, std::abs(h1.edges[b]))) {
            throw ConfigError("histograms use different bins");
        }
    }
    const double slope = 0.5 * (1.0 / (h1.sigma * h1.sigma) - 1.0 / (h2.sigma * h2.sigma));
    std::vector<double> terms;
    for (std::size_t b = 0; b < h1.bins(); ++b) {
        if (h1.counts[b] == 0 || h2.counts[b] == 0) continue;
        const double c = h1.center(b);
        terms.push_back(std::log(static_cast<double>(h1.counts[b]) /
                                 static_cast<double>(h2.counts[b])) +
                        c * c * slope);
    }
    if (terms.size() < 3) throw NumericError("fewer than three overlapping histogram bins");
    RatioFit fit;
    fit.bins_used = terms.size();
    const double nb = static_cast<double>(terms.size());
    fit.log_ratio = std::accumulate(terms.begin(), terms.end(), 0.0) / nb;
    double ss = 0.0;
    for (double t : terms) ss += (t - fit.log_ratio) * (t - fit.log_ratio);
    fit.std_error = std::sqrt(ss / (nb - 1.0)) / std::sqrt(nb);
    return fit;
}

SyntheticBenchmark synthetic_benchmark(std::size_t per_bundle, double noise, std::uint64_t seed,
                                       const PhysParams& p, const TimeGrid& g) {
    if (per_bundle < 1) throw ConfigError("synthetic bundles need at least one member");
    if (!(noise >= 0.0)) throw ConfigError("synthetic noise must be non-negative");
    g.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::normal_distribution<double> xi(0.0, 1.0 / std::sqrt(g.dt));
    SyntheticBenchmark out;
    for (int bundle = 1; bundle <= 2; ++bundle) {
        const double sign = bundle == 1 ? -1.0 : 1.0;
        for (std::size_t m = 0; m < per_bundle; ++m) {
            Trajectory t;
            t.grid = g;
            t.seed = seed;
            const double ox = noise * jitter(rng), oz = noise * jitter(rng);
            for (std::size_t k = 0; k <= g.n_steps; ++k) {
                const double time = g.time(k);
                const double damp = std::exp(-0.75 * p.gamma * time);
                const double phase = p.omega_rabi * time;
                t.states.push_back({sign * 0.8 * std::sin(phase) * damp + ox + noise * jitter(rng),
                                    0.0, -std::cos(phase) * damp + oz + noise * jitter(rng)});
            }
            for (std::size_t k = 0; k < g.n_steps; ++k) {
                t.record.push_back(emit_record(t.states[k], xi(rng), p, g.dt));
            }
            out.ensemble.push_back(std::move(t));
            out.truth.push_back(bundle);
        }
    }
    return out;
}

std::string partition_ndjson(const ClusterPartition& part) {
    std::string out;
    for (std::size_t i = 0; i < part.label.size(); ++i) {
        nlohmann::json j = {{"index", i}, {"set", part.label[i]}, {"weight", part.weights[i]}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::string histogram_csv(const DistanceHistogram& h) {
    std::ostringstream os;
    os.precision(12);
    os << "# N=" << h.n_dim << "\n# sigma=" << h.sigma << "\n# log_p0=" << h.log_p0 << "\n";
    os << "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < h.bins(); ++b) {
        os << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
    }
    return os.str();
}

}  // namespace caustiq
