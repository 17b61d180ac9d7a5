#include "caustiq/core.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace caustiq {

void PhysParams::validate() const {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
        throw ConfigError("gamma must be positive, got " + std::to_string(gamma));
    }
    if (!(eta >= 0.0 && eta <= 1.0)) {
        throw ConfigError("eta must lie in [0,1], got " + std::to_string(eta));
    }
    if (!std::isfinite(omega_rabi)) {
        throw ConfigError("Rabi frequency must be finite");
    }
    if (phi != 0.0) {
        throw ConfigError("only homodyne phase phi = 0 is supported");
    }
}

PhysParams convert_config(double omega_over_2pi_mhz, double gamma, double eta) {
    PhysParams p;
    p.gamma = gamma;
    p.eta = eta;
    p.omega_rabi = kTwoPi * omega_over_2pi_mhz;
    p.phi = 0.0;
    p.validate();
    return p;
}

double bloch_norm(const BlochState& s) {
    return std::sqrt(s.x * s.x + s.y * s.y + s.z * s.z);
}

void TimeGrid::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
    if (n_steps < 1) throw ConfigError("time grid needs at least one step");
}

TimeGrid TimeGrid::covering(double horizon, double dt) {
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    const auto n = static_cast<std::size_t>(std::llround(horizon / dt));
    TimeGrid g{dt, n < 1 ? 1 : n};
    return g;
}

PhysParams RunConfig::params() const {
    return convert_config(omega_over_2pi_mhz, gamma_per_us, eta);
}

TimeGrid RunConfig::grid() const { return TimeGrid::covering(t_final_us, dt_us); }

RunConfig RunConfig::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    try {
        c.gamma_per_us = j.value("gamma_per_us", c.gamma_per_us);
        c.eta = j.value("eta", c.eta);
        c.omega_over_2pi_mhz = j.value("omega_over_2pi_mhz", c.omega_over_2pi_mhz);
        c.dt_us = j.value("dt_us", c.dt_us);
        c.t_final_us = j.value("t_final_us", c.t_final_us);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config field has wrong type: ") + e.what());
    }
    (void)c.params();
    c.grid().validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
    nlohmann::json j{{"gamma_per_us", gamma_per_us},
                     {"eta", eta},
                     {"omega_over_2pi_mhz", omega_over_2pi_mhz},
                     {"dt_us", dt_us},
                     {"t_final_us", t_final_us},
                     {"seed", seed}};
    return j.dump(2);
}

}  // namespace caustiq
