#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "caustiq/core.hpp"
#include "caustiq/sde.hpp"

namespace caustiq {

inline constexpr double kWeightFloor = 1e-3;

/// Min-max map of log path probabilities onto [kWeightFloor, 1].
/// All-equal input maps to all ones.
std::vector<double> weights_from_log(const std::vector<double>& log_prob);
std::vector<double> weights(const std::vector<Trajectory>& ensemble, const PhysParams& p);

struct ClusterPartition {
    std::vector<std::size_t> set1;
    std::vector<std::size_t> set2;
    std::vector<int> label;               ///< 1 or 2 per trajectory
    std::vector<double> weights;
    double objective = 0.0;               ///< weighted mean distance of set 1 plus set 2
    std::vector<double> history;          ///< objective after the initial split and each accepted move
    std::size_t iterations = 0;           ///< reassignment proposals evaluated
    bool converged = false;               ///< a full sweep ended without an accepted move
};

/// Objective for a given labelling of a precomputed M x M distance matrix.
double partition_objective(const std::vector<double>& dist, const std::vector<double>& w,
                           const std::vector<int>& label);

/// Random split followed by greedy single-trajectory moves.
/// `dist` is a row-major M x M matrix of euclid_distance values.
ClusterPartition bipartition(const std::vector<double>& dist, const std::vector<double>& w,
                             std::uint64_t seed);
ClusterPartition bipartition(const std::vector<Trajectory>& ensemble,
                             const std::vector<double>& w, std::uint64_t seed,
                             unsigned threads = 0);

/// log of the N-sphere area factor 2 pi^{N/2} E^{N-1} / Gamma(N/2).
double multiplicity_log(double e, std::size_t n);

/// sigma = E_peak / sqrt(N - 1).
double sigma_from_mode(double e_peak, std::size_t n);

struct DistanceHistogram {
    std::vector<double> edges;            ///< n_bins + 1 ascending edges
    std::vector<std::size_t> counts;
    std::size_t n_dim = 0;                ///< N, number of time steps
    double sigma = 0.0;
    double log_p0 = 0.0;                  ///< fitted log P(0)

    [[nodiscard]] std::size_t bins() const { return counts.size(); }
    [[nodiscard]] double center(std::size_t b) const { return 0.5 * (edges[b] + edges[b + 1]); }
};

/// Bin edges for the pooled samples: Freedman-Diaconis width, at least min_bins bins.
std::vector<double> freedman_diaconis_edges(std::vector<double> samples,
                                            std::size_t min_bins = 10);

/// Histogram of the distances `e` on the given edges; sigma from the modal bin
/// and log P(0) from the mean residual of the hypersphere model over nonzero bins.
DistanceHistogram make_histogram(const std::vector<double>& e, const std::vector<double>& edges,
                                 std::size_t n_dim);

/// sqrt(sum_k |q_k - ref_k|^2) for each listed trajectory.
std::vector<double> distances_to(const std::vector<Trajectory>& ensemble,
                                 const std::vector<std::size_t>& members,
                                 const std::vector<BlochState>& reference);

struct RatioFit {
    double log_ratio = 0.0;               ///< log P1(0)/P2(0)
    double std_error = 0.0;
    std::size_t bins_used = 0;

    [[nodiscard]] double ratio() const;
};

/// Mean over shared nonzero bins of log(H1/H2) + (E^2/2)(1/sigma1^2 - 1/sigma2^2).
/// Needs identical edges and at least three usable bins.
RatioFit fit_relative_probability(const DistanceHistogram& h1, const DistanceHistogram& h2);

/// Two bundles of damped-Rabi-like curves mirrored in x, each member offset by
/// a random constant and per-node Gaussian jitter of size `noise`. Records are
/// drawn as homodyne increments of the member states, so path weights vary.
struct SyntheticBenchmark {
    std::vector<Trajectory> ensemble;
    std::vector<int> truth;   ///< 1 or 2, bundle of each member
};
SyntheticBenchmark synthetic_benchmark(std::size_t per_bundle, double noise, std::uint64_t seed,
                                       const PhysParams& p, const TimeGrid& g);

/// NDJSON lines {"index":i,"set":1|2,"weight":P_i}.
std::string partition_ndjson(const ClusterPartition& part);

/// CSV: bin_lo,bin_hi,count with '#' lines for N, sigma, log_p0.
std::string histogram_csv(const DistanceHistogram& h);

}  // namespace caustiq
