#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "caustiq/core.hpp"
#include "caustiq/ode.hpp"

namespace caustiq {

/// Point of the four-dimensional most-likely-path phase space.
struct PhasePoint {
    double x = 0.0;
    double z = 0.0;
    double px = 0.0;
    double pz = 0.0;
};

/// Time derivatives (x', z', px', pz') of a phase point.
struct PhaseRates {
    double dx = 0.0;
    double dz = 0.0;
    double dpx = 0.0;
    double dpz = 0.0;
};

/// Stochastic Hamiltonian of the x-z plane problem for readout r.
///
/// Written in (x, z, px, pz). The compact variable u of the six-dimensional
/// form is identified with 1 - z (and p_u with -p_z); with that identification
/// Hamilton's equations reproduce eom_rhs exactly.
double hamiltonian(const PhasePoint& pt, double r, const PhysParams& p);

/// Full three-dimensional Hamiltonian including the y / p_y sector.
/// At y = 0 it is independent of p_y and equals hamiltonian().
double hamiltonian_full(double x, double y, double z, double px, double py, double pz,
                        double r, const PhysParams& p);

/// Readout r* that makes the Hamiltonian stationary in r.
double optimal_readout(const PhasePoint& pt, const PhysParams& p);

/// Hamiltonian with the optimal readout substituted: the conserved
/// stochastic energy E of a path.
double stochastic_energy(const PhasePoint& pt, const PhysParams& p);

/// Integrand of the stochastic action, -q'.p + H, at the optimal readout.
double action_rate(const PhasePoint& pt, const PhysParams& p);

/// Most-likely-path equations of motion with r = r*.
PhaseRates eom_rhs(const PhasePoint& pt, const PhysParams& p);

/// A deterministic extremal path sampled on a uniform grid.
struct MlpPath {
    PhysParams params;                ///< parameters the path was integrated with
    TimeGrid grid;
    std::vector<PhasePoint> points;   ///< n_steps + 1 samples
    std::vector<double> readout;      ///< r*(t), us^-1/2
    double energy = 0.0;              ///< stochastic energy E, rad/us
    double action = 0.0;              ///< S = int (-q'.p + H) dt
    int winding = 0;                  ///< net revolutions about the x-z great circle

    [[nodiscard]] const PhasePoint& start() const { return points.front(); }
    [[nodiscard]] const PhasePoint& end() const { return points.back(); }
    [[nodiscard]] BlochState state(std::size_t k) const {
        return {points[k].x, 0.0, points[k].z};
    }
};

struct IntegrateOptions {
    double output_dt = kDefaultDt;   ///< sampling step of the returned path
    double tolerance = 1e-10;        ///< local error tolerance (abs and rel)
    double momentum_limit = 1e3;     ///< |p| beyond this aborts the shot
};

/// Integrates the MLP equations from `start` for a time horizon T.
/// Throws NumericError (with the failure time) on step underflow or
/// momentum blowup.
MlpPath integrate_mlp(const PhasePoint& start, const PhysParams& p, double horizon,
                      const IntegrateOptions& opt = {});

/// Final phase point only, with the action accumulated alongside. Cheaper
/// than integrate_mlp; returns nullopt instead of throwing on failure.
struct ShotResult {
    PhasePoint final;
    double action = 0.0;
};
std::optional<ShotResult> shoot_final(const PhasePoint& start, const PhysParams& p,
                                      double horizon, const IntegrateOptions& opt = {});

/// Net number of clockwise-from-z revolutions of the Bloch angle along a path
/// (the angle theta = atan2(x, z) unwrapped).
double unwrapped_angle_change(const MlpPath& path);

/// Rectangular search region for initial momenta.
struct MomentumBox {
    double px_lo = -5.0;
    double px_hi = 5.0;
    double pz_lo = -5.0;
    double pz_hi = 5.0;
};

struct ShootOptions {
    MomentumBox box;
    std::size_t n_grid = 61;
    double coarse_threshold = 0.25;   ///< grid residual below which a local minimum is refined
    double tolerance = 1e-6;          ///< required |q(T) - q_f| of a solution
    std::size_t max_newton = 60;
    IntegrateOptions integrate;
    unsigned threads = 0;             ///< 0 = CAUSTIQ_THREADS or hardware default
};

/// Diagnostics kept when the search comes back empty or partially fails.
struct ShootDiagnostics {
    std::size_t grid_nodes = 0;
    std::size_t singular_nodes = 0;   ///< shots aborted by momentum blowup / underflow
    std::size_t candidates = 0;       ///< local minima handed to refinement
    std::size_t converged = 0;
    double min_residual = 0.0;        ///< smallest grid residual seen
};

struct ShootResult {
    std::vector<MlpPath> solutions;   ///< distinct, ordered by action descending
    ShootDiagnostics diagnostics;
};

/// Finds all most-likely paths from q_i to q_f in time T by a grid scan of
/// initial momenta followed by damped Newton refinement.
ShootResult shoot_bvp(const BlochState& q_initial, const BlochState& q_final, double horizon,
                      const PhysParams& p, const ShootOptions& opt = {});

/// S_a - S_b; the predicted probability ratio of the two paths is exp of this.
/// Throws ConfigError when the paths do not share endpoints and horizon.
double action_difference(const MlpPath& a, const MlpPath& b, double endpoint_tol = 1e-5);

/// Highest-action path of each winding class, ordered by action descending.
std::vector<MlpPath> dominant_per_winding(const std::vector<MlpPath>& paths);

/// CSV: t,x,z,p_x,p_z,r,H with '#' header lines carrying E, S and endpoints.
std::string mlp_path_csv(const MlpPath& path);

}  // namespace caustiq
