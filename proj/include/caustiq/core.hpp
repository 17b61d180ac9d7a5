#pragma once

#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace caustiq {

/// Raised for invalid user-supplied parameters or configuration files.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical procedure cannot produce a result
/// (integrator underflow, momentum blowup, no root in bracket).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Physical constants of one run.
///
/// Units: time in microseconds, every rate or angular frequency in rad/us.
/// Energies computed from these parameters carry the same rad/us unit and are
/// labelled "MHz" in output files.
struct PhysParams {
    double gamma = 1.42;                  ///< radiative decay rate, 1/us
    double eta = 0.45;                    ///< homodyne quantum efficiency
    double omega_rabi = kTwoPi * 0.9;     ///< angular Rabi frequency, rad/us
    double phi = 0.0;                     ///< homodyne phase; only 0 is supported

    /// Dimensionless drive omega = Omega / gamma.
    [[nodiscard]] double drive_ratio() const { return omega_rabi / gamma; }
    [[nodiscard]] double omega_over_2pi_mhz() const { return omega_rabi / kTwoPi; }

    /// Throws ConfigError unless gamma > 0, 0 <= eta <= 1 and phi == 0.
    void validate() const;
};

/// Builds PhysParams from the configuration convention (Omega/2pi in MHz).
PhysParams convert_config(double omega_over_2pi_mhz, double gamma, double eta);

/// Parameters of the resonance-fluorescence experiment being reproduced.
inline PhysParams reference_params() { return convert_config(0.9, 1.42, 0.45); }

/// Bloch vector. Dynamics in this library are confined to the x-z plane;
/// y is carried only for the decoupling check of the full Hamiltonian.
struct BlochState {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const BlochState&, const BlochState&) = default;
};

double bloch_norm(const BlochState& s);

/// Uniform time discretisation; states live on n_steps + 1 nodes.
struct TimeGrid {
    double dt = 0.002;
    std::size_t n_steps = 1;

    [[nodiscard]] double total() const { return dt * static_cast<double>(n_steps); }
    [[nodiscard]] double time(std::size_t k) const { return dt * static_cast<double>(k); }
    void validate() const;

    /// Grid of step dt covering [0, horizon]; horizon is rounded to a whole
    /// number of steps.
    static TimeGrid covering(double horizon, double dt);

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

/// Default digitisation step, us. Checked against a halved step in the tests.
inline constexpr double kDefaultDt = 0.002;

/// Run configuration as read from / written to JSON:
/// {"gamma_per_us", "eta", "omega_over_2pi_mhz", "dt_us", "t_final_us", "seed"}.
struct RunConfig {
    double gamma_per_us = 1.42;
    double eta = 0.45;
    double omega_over_2pi_mhz = 0.9;
    double dt_us = kDefaultDt;
    double t_final_us = 1.94;
    std::uint64_t seed = 1;

    [[nodiscard]] PhysParams params() const;
    [[nodiscard]] TimeGrid grid() const;

    static RunConfig from_json_text(const std::string& text);
    static RunConfig load(const std::string& path);
    [[nodiscard]] std::string to_json_text() const;
};

}  // namespace caustiq
