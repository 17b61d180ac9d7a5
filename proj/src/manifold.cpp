#include "caustiq/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "caustiq/parallel.hpp"

namespace caustiq {

double ManifoldSheet::valid_fraction() const {
    if (valid.empty()) return 0.0;
    return static_cast<double>(std::count(valid.begin(), valid.end(), 1)) /
           static_cast<double>(valid.size());
}

ManifoldSheet sweep(const BlochState& q_initial, const PhysParams& p, double horizon,
                    const MomentumBox& box, std::size_t n_grid, const IntegrateOptions& opt,
                    unsigned threads) {
    p.validate();
    if (!(horizon > 0.0)) throw ConfigError("sweep horizon must be positive");
    if (n_grid < 2) throw ConfigError("momentum grid needs at least 2 nodes per axis");
    if (!(box.px_hi > box.px_lo) || !(box.pz_hi > box.pz_lo)) {
        throw ConfigError("momentum box must be non-empty");
    }
    ManifoldSheet s;
    s.q_initial = q_initial;
    s.horizon = horizon;
    s.params = p;
    s.n = n_grid;
    const double step = 1.0 / static_cast<double>(n_grid - 1);
    for (std::size_t i = 0; i < n_grid; ++i) {
        const double u = static_cast<double>(i) * step;
        s.px_axis.push_back(box.px_lo + (box.px_hi - box.px_lo) * u);
        s.pz_axis.push_back(box.pz_lo + (box.pz_hi - box.pz_lo) * u);
    }
    const std::size_t total = n_grid * n_grid;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.x_final.assign(total, nan);
    s.z_final.assign(total, nan);
    s.energy.assign(total, nan);
    s.valid.assign(total, 0);

    parallel_for(total, threads, [&](std::size_t idx) {
        const PhasePoint start{q_initial.x, q_initial.z, s.px_axis[idx / n_grid],
                               s.pz_axis[idx % n_grid]};
        s.energy[idx] = stochastic_energy(start, p);
        if (const auto shot = shoot_final(start, p, horizon, opt)) {
            s.x_final[idx] = shot->final.x;
            s.z_final[idx] = shot->final.z;
            s.valid[idx] = 1;
        }
    });
    return s;
}

PinResult pin_test(const ManifoldSheet& sheet, const BlochState& q_final, double radius) {
    if (!(radius > 0.0)) throw ConfigError("pin radius must be positive");
    const std::size_t n = sheet.n;
    std::vector<std::uint8_t> hit(sheet.size(), 0);
    for (std::size_t k = 0; k < sheet.size(); ++k) {
        hit[k] = sheet.valid[k] && std::hypot(sheet.x_final[k] - q_final.x,
                                              sheet.z_final[k] - q_final.z) <= radius;
    }
    PinResult out;
    std::vector<std::uint8_t> seen(sheet.size(), 0);
    for (std::size_t start = 0; start < sheet.size(); ++start) {
        if (!hit[start] || seen[start]) continue;
        std::vector<std::size_t> comp, stack{start};
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t k = stack.back();
            stack.pop_back();
            comp.push_back(k);
            const auto i = static_cast<std::ptrdiff_t>(k / n);
            const auto j = static_cast<std::ptrdiff_t>(k % n);
            for (std::ptrdiff_t di = -1; di <= 1; ++di) {
                for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
                    const std::ptrdiff_t ii = i + di, jj = j + dj;
                    const auto sn = static_cast<std::ptrdiff_t>(n);
                    if (ii < 0 || jj < 0 || ii >= sn || jj >= sn) continue;
                    const std::size_t nb = static_cast<std::size_t>(ii * sn + jj);
                    if (hit[nb] && !seen[nb]) {
                        seen[nb] = 1;
                        stack.push_back(nb);
                    }
                }
            }
        }
        std::sort(comp.begin(), comp.end());
        out.components.push_back(std::move(comp));
    }
    out.layers = out.components.size();
    return out;
}

std::vector<double> jacobian_determinants(const ManifoldSheet& sheet) {
    const std::size_t n = sheet.n;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> det(sheet.size(), nan);
    const auto diff = [&](std::size_t lo, std::size_t hi, double h, double& dx, double& dz) {
        if (!sheet.valid[lo] || !sheet.valid[hi]) return false;
        dx = (sheet.x_final[hi] - sheet.x_final[lo]) / h;
        dz = (sheet.z_final[hi] - sheet.z_final[lo]) / h;
        return true;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (!sheet.valid[sheet.index(i, j)]) continue;
            const std::size_t il = i == 0 ? 0 : i - 1, ih = i + 1 == n ? i : i + 1;
            const std::size_t jl = j == 0 ? 0 : j - 1, jh = j + 1 == n ? j : j + 1;
            double xpx, zpx, xpz, zpz;
            if (!diff(sheet.index(il, j), sheet.index(ih, j),
                      sheet.px_axis[ih] - sheet.px_axis[il], xpx, zpx) ||
                !diff(sheet.index(i, jl), sheet.index(i, jh),
                      sheet.pz_axis[jh] - sheet.pz_axis[jl], xpz, zpz)) {
                continue;
            }
            det[sheet.index(i, j)] = xpx * zpz - xpz * zpx;
        }
    }
    return det;
}

std::vector<FoldPoint> detect_fold(const ManifoldSheet& sheet, double floor) {
    const std::vector<double> det = jacobian_determinants(sheet);
    const std::size_t n = sheet.n;
    std::vector<std::uint8_t> mark(sheet.size(), 0);
    const auto interior = [n](std::size_t k) {
        const std::size_t i = k / n, j = k % n;
        return i > 0 && j > 0 && i + 1 < n && j + 1 < n;
    };
    const auto check = [&](std::size_t a, std::size_t b) {
        if (!interior(a) || !interior(b)) return;
        const double da = det[a], db = det[b];
        if (!std::isfinite(da) || !std::isfinite(db)) return;
        if (std::abs(da) < floor || std::abs(db) < floor) return;
        if ((da > 0.0) == (db > 0.0)) return;
        mark[std::abs(da) <= std::abs(db) ? a : b] = 1;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i + 1 < n) check(sheet.index(i, j), sheet.index(i + 1, j));
            if (j + 1 < n) check(sheet.index(i, j), sheet.index(i, j + 1));
        }
    }
    std::vector<FoldPoint> out;
    for (std::size_t k = 0; k < sheet.size(); ++k) {
        if (!mark[k]) continue;
        out.push_back({sheet.px_axis[k / n], sheet.pz_axis[k % n], sheet.x_final[k],
                       sheet.z_final[k], k});
    }
    return out;
}

std::string sheet_csv(const ManifoldSheet& sheet) {
    std::ostringstream os;
    os.precision(12);
    os << "# q_i=(" << sheet.q_initial.x << "," << sheet.q_initial.z << ") T=" << sheet.horizon
       << "\n";
    os << "p_x0,p_z0,x_f,z_f,E,valid\n";
    for (std::size_t k = 0; k < sheet.size(); ++k) {
        os << sheet.px_axis[k / sheet.n] << ',' << sheet.pz_axis[k % sheet.n] << ','
           << sheet.x_final[k] << ',' << sheet.z_final[k] << ',' << sheet.energy[k] << ','
           << static_cast<int>(sheet.valid[k]) << '\n';
    }
    return os.str();
}

std::string fold_csv(const std::vector<FoldPoint>& fold) {
    std::ostringstream os;
    os.precision(12);
    os << "p_x0,p_z0,x_f,z_f\n";
    for (const auto& f : fold) {
        os << f.px0 << ',' << f.pz0 << ',' << f.x_final << ',' << f.z_final << '\n';
    }
    return os.str();
}

}  // namespace caustiq
