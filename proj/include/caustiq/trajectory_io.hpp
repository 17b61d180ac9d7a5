#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "caustiq/sde.hpp"

namespace caustiq {

// Text format: one JSON object per line,
//   {"seed": u64, "dt": f64, "states": [[x, z], ...], "record": [dI, ...]}
// "dt" is optional on input; readers fall back to the caller's grid.
//
// Binary format (little-endian):
//   char[8]  "CAUSTIQ1"
//   u64      trajectory count
//   u64      n_steps
//   f64      dt
//   then per trajectory, columns in this order:
//   u64      seed
//   f64      x[n_steps + 1]
//   f64      z[n_steps + 1]
//   f64      dI[n_steps]

std::string to_ndjson_line(const Trajectory& t);
Trajectory from_ndjson_line(const std::string& line, std::optional<double> dt = std::nullopt);

void write_ndjson(const std::string& path, const std::vector<Trajectory>& ts);
std::vector<Trajectory> read_ndjson(const std::string& path,
                                    std::optional<double> dt = std::nullopt);

inline constexpr char kBinaryMagic[9] = "CAUSTIQ1";

/// Appends trajectories of one grid to a binary file; the count in the header
/// is patched on close().
class BinaryWriter {
public:
    BinaryWriter(const std::string& path, const TimeGrid& grid);
    ~BinaryWriter();
    BinaryWriter(const BinaryWriter&) = delete;
    BinaryWriter& operator=(const BinaryWriter&) = delete;

    void append(const Trajectory& t);
    void close();
    [[nodiscard]] std::uint64_t count() const { return count_; }

private:
    std::ofstream out_;
    TimeGrid grid_;
    std::uint64_t count_ = 0;
};

void write_binary(const std::string& path, const std::vector<Trajectory>& ts);
std::vector<Trajectory> read_binary(const std::string& path);

/// Reads either format, choosing by the magic bytes.
std::vector<Trajectory> read_trajectories(const std::string& path,
                                          std::optional<double> dt = std::nullopt);

}  // namespace caustiq
