#include "caustiq/trajectory_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <json.hpp>

namespace caustiq {

static_assert(std::endian::native == std::endian::little,
              "binary trajectory files assume a little-endian host");

namespace {

using nlohmann::json;

template <class T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw ConfigError("truncated binary trajectory file");
    return v;
}

}  // namespace

std::string to_ndjson_line(const Trajectory& t) {
    json j;
    j["seed"] = t.seed;
    j["dt"] = t.grid.dt;
    json states = json::array();
    for (const auto& s : t.states) states.push_back({s.x, s.z});
    j["states"] = std::move(states);
    j["record"] = t.record;
    return j.dump();
}

Trajectory from_ndjson_line(const std::string& line, std::optional<double> dt) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad trajectory line: ") + e.what());
    }
    Trajectory t;
    try {
        t.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& s : j.at("states")) {
            t.states.push_back({s.at(0).get<double>(), 0.0, s.at(1).get<double>()});
        }
        t.record = j.at("record").get<std::vector<double>>();
        if (j.contains("dt")) dt = j["dt"].get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad trajectory line: ") + e.what());
    }
    if (!dt) throw ConfigError("trajectory line carries no dt and none was supplied");
    if (t.states.size() != t.record.size() + 1) {
        throw ConfigError("trajectory needs one more state than record entries");
    }
    t.grid = TimeGrid{*dt, t.record.size()};
    t.grid.validate();
    return t;
}

void write_ndjson(const std::string& path, const std::vector<Trajectory>& ts) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    for (const auto& t : ts) out << to_ndjson_line(t) << '\n';
    if (!out) throw ConfigError("write failed: " + path);
}

std::vector<Trajectory> read_ndjson(const std::string& path, std::optional<double> dt) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::vector<Trajectory> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(from_ndjson_line(line, dt));
    }
    return out;
}

BinaryWriter::BinaryWriter(const std::string& path, const TimeGrid& grid)
    : out_(path, std::ios::binary), grid_(grid) {
    if (!out_) throw ConfigError("cannot write " + path);
    grid_.validate();
    out_.write(kBinaryMagic, 8);
    put<std::uint64_t>(out_, 0);
    put<std::uint64_t>(out_, grid_.n_steps);
    put<double>(out_, grid_.dt);
}

BinaryWriter::~BinaryWriter() {
    try {
        close();
    } catch (...) {
    }
}

void BinaryWriter::append(const Trajectory& t) {
    if (!(t.grid == grid_)) throw ConfigError("trajectory grid differs from file grid");
    put<std::uint64_t>(out_, t.seed);
    for (const auto& s : t.states) put<double>(out_, s.x);
    for (const auto& s : t.states) put<double>(out_, s.z);
    for (double v : t.record) put<double>(out_, v);
    ++count_;
}

void BinaryWriter::close() {
    if (!out_.is_open()) return;
    out_.seekp(8);
    put<std::uint64_t>(out_, count_);
    out_.close();
    if (out_.fail()) throw ConfigError("binary trajectory write failed");
}

void write_binary(const std::string& path, const std::vector<Trajectory>& ts) {
    if (ts.empty()) throw ConfigError("nothing to write");
    BinaryWriter w(path, ts.front().grid);
    for (const auto& t : ts) w.append(t);
    w.close();
}

std::vector<Trajectory> read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kBinaryMagic, 8) != 0) {
        throw ConfigError(path + " is not a CAUSTIQ1 file");
    }
    const auto n = get<std::uint64_t>(in);
    TimeGrid g{0.0, 0};
    g.n_steps = get<std::uint64_t>(in);
    g.dt = get<double>(in);
    g.validate();
    std::vector<Trajectory> out(n);
    for (auto& t : out) {
        t.grid = g;
        t.seed = get<std::uint64_t>(in);
        t.states.resize(g.n_steps + 1);
        for (auto& s : t.states) s.x = get<double>(in);
        for (auto& s : t.states) s.z = get<double>(in);
        t.record.resize(g.n_steps);
        for (auto& v : t.record) v = get<double>(in);
    }
    return out;
}

std::vector<Trajectory> read_trajectories(const std::string& path, std::optional<double> dt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    char magic[8] = {};
    in.read(magic, 8);
    if (in && std::memcmp(magic, kBinaryMagic, 8) == 0) return read_binary(path);
    return read_ndjson(path, dt);
}

}  // namespace caustiq
