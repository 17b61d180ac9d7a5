#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "caustiq/core.hpp"
#include "caustiq/mlp.hpp"

namespace caustiq {

/// Final states reached from one initial state over a square grid of initial
/// momenta. Node (i, j) has p_x0 = px_axis[i], p_z0 = pz_axis[j] and lives at
/// flat index i * n + j.
struct ManifoldSheet {
    BlochState q_initial;
    double horizon = 0.0;
    PhysParams params;
    std::size_t n = 0;
    std::vector<double> px_axis;
    std::vector<double> pz_axis;
    std::vector<double> x_final;
    std::vector<double> z_final;
    std::vector<double> energy;
    std::vector<std::uint8_t> valid;   ///< 0 where the shot hit the momentum limit or underflowed

    [[nodiscard]] std::size_t index(std::size_t i, std::size_t j) const { return i * n + j; }
    [[nodiscard]] std::size_t size() const { return n * n; }
    [[nodiscard]] double valid_fraction() const;
};

/// Default nodes per axis of a sheet; fine enough that the final-state spacing
/// near the reference boundary conditions stays below the pin radius.
inline constexpr std::size_t kSheetGrid = 201;

ManifoldSheet sweep(const BlochState& q_initial, const PhysParams& p, double horizon,
                    const MomentumBox& box = {}, std::size_t n_grid = kSheetGrid,
                    const IntegrateOptions& opt = {}, unsigned threads = 0);

inline constexpr double kDefaultPinRadius = 0.05;

/// Layers of the sheet above q_f: valid nodes whose final state is within
/// `radius`, grouped into 8-connected components of the momentum grid.
struct PinResult {
    std::size_t layers = 0;
    std::vector<std::vector<std::size_t>> components;   ///< flat node indices, sorted
};

PinResult pin_test(const ManifoldSheet& sheet, const BlochState& q_final,
                   double radius = kDefaultPinRadius);

/// Determinant of d(x_f, z_f)/d(p_x0, p_z0) at each node by finite differences
/// on the grid (central inside, one-sided at the border). NaN where a needed
/// neighbour is invalid.
std::vector<double> jacobian_determinants(const ManifoldSheet& sheet);

inline constexpr double kFoldFloor = 1e-8;

struct FoldPoint {
    double px0 = 0.0;
    double pz0 = 0.0;
    double x_final = 0.0;
    double z_final = 0.0;
    std::size_t node = 0;
};

/// Nodes adjacent (4-neighbour) to a sign change of the Jacobian determinant,
/// ignoring pairs where either |det| is below `floor`. Of each flipping pair the
/// node with the smaller |det| is reported; duplicates removed.
std::vector<FoldPoint> detect_fold(const ManifoldSheet& sheet, double floor = kFoldFloor);

/// CSV: p_x0,p_z0,x_f,z_f,E,valid.
std::string sheet_csv(const ManifoldSheet& sheet);

/// CSV: p_x0,p_z0,x_f,z_f.
std::string fold_csv(const std::vector<FoldPoint>& fold);

}  // namespace caustiq
