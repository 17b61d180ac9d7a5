#include <filesystem>
#include <fstream>

#include "caustiq/trajectory_io.hpp"
#include "doctest.h"

using namespace caustiq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "caustiq_test_io";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<Trajectory> sample(std::size_t n = 5) {
    return simulate_ensemble({0.0, 0.0, -0.97}, reference_params(),
                             TimeGrid::covering(0.1, kDefaultDt), n, 8);
}

void check_same(const std::vector<Trajectory>& a, const std::vector<Trajectory>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].seed == b[i].seed);
        CHECK(a[i].grid == b[i].grid);
        CHECK(a[i].record == b[i].record);
        REQUIRE(a[i].states.size() == b[i].states.size());
        for (std::size_t k = 0; k < a[i].states.size(); ++k) {
            CHECK(a[i].states[k].x == b[i].states[k].x);
            CHECK(a[i].states[k].z == b[i].states[k].z);
        }
    }
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("NDJSON round trip is exact") {
    const auto ens = sample();
    const fs::path path = scratch("round.ndjson");
    write_ndjson(path.string(), ens);
    check_same(ens, read_ndjson(path.string()));
    check_same(ens, read_trajectories(path.string()));

    std::ifstream in(path);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == ens.size());
}

TEST_CASE("NDJSON line without dt uses the caller's grid") {
    const std::string line = R"({"seed": 3, "states": [[0, -1], [0.1, -0.9]], "record": [0.01]})";
    const Trajectory t = from_ndjson_line(line, 0.004);
    CHECK(t.seed == 3);
    CHECK(t.grid.dt == 0.004);
    CHECK(t.grid.n_steps == 1);
    CHECK(t.states[1].x == 0.1);
    CHECK_THROWS(from_ndjson_line(line));
    CHECK_THROWS(from_ndjson_line(R"({"seed": 3, "dt": 0.002, "states": [[0, -1]], "record": [0.1]})"));
    CHECK_THROWS(from_ndjson_line("not json"));
}

TEST_CASE("binary round trip and layout") {
    const auto ens = sample(4);
    const fs::path path = scratch("round.bin");
    write_binary(path.string(), ens);
    check_same(ens, read_binary(path.string()));
    check_same(ens, read_trajectories(path.string()));

    const std::size_t n = ens.front().grid.n_steps;
    const std::size_t expected = 8 + 8 + 8 + 8 + ens.size() * (8 + 8 * (2 * (n + 1) + n));
    CHECK(fs::file_size(path) == expected);

    std::ifstream in(path, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "CAUSTIQ1");
    std::uint64_t count = 0, steps = 0;
    double dt = 0.0;
    in.read(reinterpret_cast<char*>(&count), 8);
    in.read(reinterpret_cast<char*>(&steps), 8);
    in.read(reinterpret_cast<char*>(&dt), 8);
    CHECK(count == ens.size());
    CHECK(steps == n);
    CHECK(dt == kDefaultDt);
    std::uint64_t seed = 0;
    double x0 = 1.0;
    in.read(reinterpret_cast<char*>(&seed), 8);
    in.read(reinterpret_cast<char*>(&x0), 8);
    CHECK(seed == ens.front().seed);
    CHECK(x0 == ens.front().states.front().x);
}

TEST_CASE("streaming writer patches the count") {
    const auto ens = sample(3);
    const fs::path path = scratch("stream.bin");
    {
        BinaryWriter w(path.string(), ens.front().grid);
        for (const auto& t : ens) w.append(t);
        CHECK(w.count() == 3);
    }
    check_same(ens, read_binary(path.string()));

    BinaryWriter w(scratch("wrong.bin").string(), TimeGrid{0.001, 4});
    CHECK_THROWS(w.append(ens.front()));
}

TEST_CASE("corrupt files are rejected") {
    const fs::path path = scratch("bad.bin");
    {
        std::ofstream out(path, std::ios::binary);
        out << "CAUSTIQ1garbage";
    }
    CHECK_THROWS(read_binary(path.string()));
    CHECK_THROWS(read_ndjson(scratch("missing.ndjson").string()));
}

}
