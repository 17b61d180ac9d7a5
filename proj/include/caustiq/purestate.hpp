#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "caustiq/core.hpp"

namespace caustiq::pure {

// Pure-state (R = 1, eta = 1) reduction of the most-likely-path problem.
// theta = atan2(x, z) is kept unwrapped; p is its conjugate momentum.
// Only gamma and omega_rabi of PhysParams are used.

struct PolarPoint {
    double theta = 0.0;
    double p = 0.0;
};

struct PolarCoords {
    double r = 0.0;
    double theta = 0.0;
    double p_r = 0.0;
    double p = 0.0;
};

/// (x, z, p_x, p_z) -> (R, theta, p_R, p_theta) with x = R sin(theta), z = R cos(theta).
PolarCoords polar_map(double x, double z, double px, double pz);

struct CartesianCoords {
    double x = 0.0;
    double z = 0.0;
    double px = 0.0;
    double pz = 0.0;
};
CartesianCoords polar_unmap(const PolarCoords& c);

/// h* = a p^2 + b p + c and derivatives of the coefficients in theta.
struct Coeffs {
    double a = 0.0, b = 0.0, c = 0.0;
};
Coeffs h_star_coeffs(double theta, const PhysParams& p);
Coeffs h_star_coeffs_d1(double theta, const PhysParams& p);
Coeffs h_star_coeffs_d2(double theta, const PhysParams& p);

/// Pure-state Hamiltonian for an arbitrary readout r.
double h_polar(double theta, double p, double r, const PhysParams& params);
/// Readout that makes h_polar stationary: -sqrt(gamma) (p (cos - 1) + sin).
double optimal_readout(double theta, double p, const PhysParams& params);
double h_star(double theta, double p, const PhysParams& params);

/// Action rate gamma sin^2(theta/2) (p^2 (cos theta - 1) + cos theta).
double sdot(double theta, double p, const PhysParams& params);

/// Discriminant b^2 + 4 a (E - c); theta' = +-sqrt(D) on the two branches.
double discriminant(double theta, double energy, const PhysParams& params);

struct MomentumRoots {
    double plus = 0.0;    ///< rightward branch (theta' > 0)
    double minus = 0.0;   ///< leftward branch
    bool linear = false;  ///< a == 0: single root (E - c) / b stored in both
};
std::optional<MomentumRoots> p_pm(double theta, double energy, const PhysParams& params);

struct PolarRates {
    double dtheta = 0.0;
    double dp = 0.0;
};
PolarRates eom_2d(double theta, double p, const PhysParams& params);

enum class FixedPointKind { elliptic, hyperbolic };
std::string to_string(FixedPointKind k);

struct FixedPoint {
    double theta = 0.0;
    double p = 0.0;
    FixedPointKind kind = FixedPointKind::hyperbolic;
    double energy = 0.0;
    double residual = 0.0;   ///< |(theta', p')| at the point
};

/// Roots of a' q^2 - b' q + c' (q = b/2a) on (0, 2 pi), scanned on n_scan
/// samples and refined to 1e-10; p = -b/2a. Spurious sign changes at poles are
/// dropped by requiring a vanishing eom_2d residual.
std::vector<FixedPoint> fixed_points(const PhysParams& params, std::size_t n_scan = 20000);

/// Convenience: gamma and omega = Omega / gamma.
std::vector<FixedPoint> fixed_points_ratio(double omega, double gamma = 1.0,
                                           std::size_t n_scan = 20000);

struct BranchSample {
    double omega = 0.0;
    std::vector<FixedPoint> points;
};

struct BifurcationScan {
    std::optional<double> omega_c;      ///< empty when the count never changes in range
    double bracket_lo = 0.0;            ///< count differs between bracket_lo and bracket_hi
    double bracket_hi = 0.0;
    std::size_t count_below = 0;
    std::size_t count_above = 0;
    std::vector<BranchSample> branches;
};

/// Fixed-point count on n samples of omega in [lo, hi] (gamma = 1), then
/// bisection of the first change in count to `tol`.
BifurcationScan bifurcation_scan(double omega_lo, double omega_hi, std::size_t n,
                                 double tol = 1e-6);

struct WindingOptions {
    double energy_max = 40.0;         ///< upper end of the energy scan, rad/us
    std::size_t n_energy = 240;       ///< scan samples per branch
    double theta_step = 0.25;         ///< marching step of the time-of-flight integrals
    std::size_t max_turns = 64;
    double root_tolerance = 1e-7;     ///< required |theta(T) - theta_f| of an accepted root
    double output_dt = kDefaultDt;
};

struct WindingSolution {
    double energy = 0.0;
    int initial_branch = 0;           ///< +1 starts on p+, -1 on p-
    std::size_t turns = 0;            ///< turning points passed
    char region = '?';                ///< A: leftward only, B: turns, C: rightward only
    double action = 0.0;
    double endpoint_error = 0.0;      ///< |theta(T) - theta_f| of the reconstructed path
    std::vector<double> time;
    std::vector<PolarPoint> path;
};

/// Final angle after time T on the constant-energy contour, starting on branch
/// `dir` (+1 rightward / -1 leftward) and reversing at zeros of D. Empty if the
/// motion runs rightward through a multiple of 2 pi (p diverges there).
std::optional<double> flight_endpoint(double theta_i, int dir, double energy, double horizon,
                                      const PhysParams& params, const WindingOptions& opt = {});

/// All constant-energy paths from theta_i to the unwrapped theta_f in time T,
/// ordered by energy.
std::vector<WindingSolution> winding_bvp(double theta_i, double theta_f, double horizon,
                                         const PhysParams& params,
                                         const WindingOptions& opt = {});

/// CSV grid theta,p,h,sdot for contour plots.
std::string portrait_csv(const PhysParams& params, double theta_lo, double theta_hi,
                         double p_lo, double p_hi, std::size_t n_theta, std::size_t n_p);
/// CSV theta,p,kind,E.
std::string fixed_points_csv(const std::vector<FixedPoint>& fps);
/// CSV omega,theta,p,kind.
std::string bifurcation_csv(const BifurcationScan& scan);
/// CSV t,theta,p,x,z with '#' header (E, branch, region, S).
std::string winding_csv(const WindingSolution& sol);

}  // namespace caustiq::pure
