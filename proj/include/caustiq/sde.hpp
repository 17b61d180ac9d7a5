#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "caustiq/core.hpp"

namespace caustiq {

/// One conditioned quantum trajectory and the homodyne record that drove it.
struct Trajectory {
    TimeGrid grid;
    std::vector<BlochState> states;   ///< n_steps + 1 entries
    std::vector<double> record;       ///< dI_t per step, n_steps entries
    std::uint64_t seed = 0;
    std::size_t clamp_count = 0;      ///< steps that needed projection back onto the ball

    [[nodiscard]] const BlochState& final_state() const { return states.back(); }
};

/// State update rule used to turn a record increment into a state increment.
enum class Scheme {
    /// Measurement-operator (Kraus) update rho -> M rho M^T + (1-eta) L rho L^T dt,
    /// renormalised. Agrees with Euler-Maruyama to first order, keeps the state
    /// inside the Bloch ball and keeps pure states pure when eta = 1.
    measurement_operator,
    /// Literal explicit Euler-Maruyama step of the Ito Bloch equations.
    euler_maruyama,
};

/// Explicit Euler-Maruyama step of the Bloch-form SME (Ito reading).
/// `xi` is one draw of a zero-mean Gaussian with variance 1/dt. A result
/// outside the Bloch ball is projected back onto the unit sphere; `clamped`
/// reports whether that happened.
BlochState step_sme(const BlochState& s, double xi, const PhysParams& p, double dt,
                    bool* clamped = nullptr);

/// Homodyne increment dI = sqrt(eta) gamma x dt + sqrt(gamma) xi dt.
double emit_record(const BlochState& s, double xi, const PhysParams& p, double dt);

/// Noise draw recovered from a record increment (inverse of emit_record).
double noise_from_record(const BlochState& s, double dI, const PhysParams& p, double dt);

/// Measurement-operator update driven directly by the record increment dI.
BlochState update_from_record(const BlochState& s, double dI, const PhysParams& p, double dt);

/// Advances one step with the chosen scheme, drawing the record from xi.
/// Returns the record increment and writes the new state.
double advance(BlochState& s, double xi, const PhysParams& p, double dt, Scheme scheme,
               bool* clamped = nullptr);

/// Deterministic per-trajectory seed derived from a root seed and an index,
/// so trajectory i of a run does not depend on how the ensemble is split.
std::uint64_t trajectory_seed(std::uint64_t root, std::uint64_t index);

Trajectory simulate_trajectory(const BlochState& s0, const PhysParams& p, const TimeGrid& g,
                               std::uint64_t seed,
                               Scheme scheme = Scheme::measurement_operator);

/// Recomputes the states of a trajectory from its stored record.
std::vector<BlochState> replay_record(const BlochState& s0, const std::vector<double>& record,
                                      const PhysParams& p, const TimeGrid& g,
                                      Scheme scheme = Scheme::measurement_operator);

struct EnsembleOptions {
    Scheme scheme = Scheme::measurement_operator;
    unsigned threads = 0;
    /// Optional acceptance filter; rejected trajectories are dropped as soon
    /// as they are generated so large ensembles need not fit in memory.
    std::function<bool(const Trajectory&)> keep;
};

/// Simulates trajectories 0..n-1 (seeds from trajectory_seed(root, i)) and
/// returns the kept ones in index order.
std::vector<Trajectory> simulate_ensemble(const BlochState& s0, const PhysParams& p,
                                          const TimeGrid& g, std::size_t n,
                                          std::uint64_t root_seed,
                                          const EnsembleOptions& opt = {});

/// Trajectories first .. first+count-1 of the same seeded sequence.
std::vector<Trajectory> simulate_batch(const BlochState& s0, const PhysParams& p,
                                       const TimeGrid& g, std::size_t first, std::size_t count,
                                       std::uint64_t root_seed, const EnsembleOptions& opt = {});

/// Pointwise mean of n independent trajectories (same seeding as simulate_ensemble).
std::vector<BlochState> ensemble_mean(const BlochState& s0, const PhysParams& p,
                                      const TimeGrid& g, std::size_t n, std::uint64_t root_seed,
                                      const EnsembleOptions& opt = {});

/// Unconditioned (noise-averaged) evolution x' = -Omega z - gamma x / 2,
/// z' = Omega x + gamma (1 - z), sampled on the grid.
std::vector<BlochState> lindblad_mean(const BlochState& s0, const PhysParams& p,
                                      const TimeGrid& g);

}  // namespace caustiq
