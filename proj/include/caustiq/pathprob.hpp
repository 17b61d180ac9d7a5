#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "caustiq/core.hpp"
#include "caustiq/mlp.hpp"
#include "caustiq/sde.hpp"

namespace caustiq {

enum class WindowShape { box, disc };

/// Boundary-condition filter: a trajectory is kept when its states at t = 0
/// and t = t_final both lie within `tol` of the requested points.
struct PostselectRule {
    BlochState initial;
    BlochState final;
    double t_final = 1.94;
    double tol = 0.05;
    WindowShape shape = WindowShape::box;   ///< box: |dx|,|dz| <= tol; disc: hypot <= tol

    void validate() const;
    [[nodiscard]] bool accepts(const Trajectory& t) const;
};

enum class EstimateMethod { distance, probability, plain_mean };

std::string to_string(EstimateMethod m);

/// Average of a selected set of trajectories with a per-time standard deviation.
struct MlpEstimate {
    TimeGrid grid;
    std::vector<BlochState> mean;
    std::vector<double> x_std;
    std::vector<double> z_std;
    std::size_t count = 0;
    EstimateMethod method = EstimateMethod::plain_mean;
    std::vector<std::size_t> members;   ///< indices into the input ensemble
};

/// Gaussian log density of the stored record given the stored states
/// (mean sqrt(eta) gamma x_k dt, variance gamma dt per increment).
double log_path_probability(const Trajectory& t, const PhysParams& p);

/// Sum over time nodes of squared x-z separation.
double euclid_distance(const Trajectory& a, const Trajectory& b);

/// Full symmetric matrix of euclid_distance, row-major M x M.
std::vector<double> distance_matrix(const std::vector<Trajectory>& ensemble, unsigned threads = 0);

/// d_i = (1/(M-1)) sum_{j != i} euclid_distance(i, j).
double mean_distance(std::size_t i, const std::vector<Trajectory>& ensemble);
std::vector<double> mean_distances(const std::vector<Trajectory>& ensemble, unsigned threads = 0);

std::vector<std::size_t> postselect_indices(const std::vector<Trajectory>& ensemble,
                                            const PostselectRule& rule);
std::vector<Trajectory> postselect(const std::vector<Trajectory>& ensemble,
                                   const PostselectRule& rule);

/// Mean and standard deviation of the listed members.
MlpEstimate average_members(const std::vector<Trajectory>& ensemble,
                            std::vector<std::size_t> members, EstimateMethod method);

/// Plain mean of the whole (sub-)ensemble.
MlpEstimate plain_mean(const std::vector<Trajectory>& ensemble);

MlpEstimate mlp_by_distance(const std::vector<Trajectory>& ensemble, double frac = 0.05,
                            unsigned threads = 0);
MlpEstimate mlp_by_probability(const std::vector<Trajectory>& ensemble, const PhysParams& p,
                               double frac = 0.05);

/// Number of members taken for a fraction frac of M: ceil(frac M), at least 1.
std::size_t member_count(std::size_t m, double frac);

/// Fraction of time nodes at which the reference path lies inside the
/// estimate's band (|x - x_ref| <= k x_std and |z - z_ref| <= k z_std).
/// The path is linearly interpolated onto the estimate's grid.
double band_coverage(const MlpEstimate& est, const MlpPath& reference, double k = 1.0);

/// Same band test, but with the band of `band` and the mean of `est`.
double band_coverage(const MlpEstimate& est, const MlpEstimate& band, const MlpPath& reference);

/// Root-mean-square x-z separation between the estimate mean and the
/// reference path over the estimate's time nodes.
double rms_deviation(const MlpEstimate& est, const MlpPath& reference);

/// CSV: t,x_mean,z_mean,x_std,z_std,n_members.
std::string mlp_estimate_csv(const MlpEstimate& est);

}  // namespace caustiq
