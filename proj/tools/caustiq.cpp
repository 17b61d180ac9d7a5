// caustiq command-line driver.
//
// Every subcommand writes into runs/<timestamp>-<tag>/ (or --run-dir) and
// starts by writing manifest.json, which is completed when the run ends.
// Exit codes: 0 ok, 1 configuration or I/O error, 2 numerical failure,
// 3 empty post-selection.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "caustiq/cluster.hpp"
#include "caustiq/core.hpp"
#include "caustiq/manifold.hpp"
#include "caustiq/mlp.hpp"
#include "caustiq/parallel.hpp"
#include "caustiq/pathprob.hpp"
#include "caustiq/purestate.hpp"
#include "caustiq/sde.hpp"
#include "caustiq/trajectory_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace caustiq;

namespace {

constexpr const char* kVersion = "0.1.0";

template <class T>
struct Unwrap {
    using type = T;
};
template <class T>
struct Unwrap<std::optional<T>> {
    using type = T;
};

struct EmptySelection : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Options whose value may come from the subcommand's section of the config
// file when the flag is absent on the command line.
class Fallbacks {
public:
    template <class T>
    CLI::Option* add(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
        CLI::Option* opt = app->add_option("--" + name, var, desc);
        entries_.push_back({app->get_name(), [opt, name, &var](const json& section) {
                                if (opt->count() == 0 && section.contains(name)) {
                                    var = section.at(name).get<typename Unwrap<T>::type>();
                                }
                            }});
        return opt;
    }
    CLI::Option* flag(CLI::App* app, const std::string& name, bool& var, const std::string& desc) {
        CLI::Option* opt = app->add_flag("--" + name, var, desc);
        entries_.push_back({app->get_name(), [opt, name, &var](const json& section) {
                                if (opt->count() == 0 && section.contains(name)) {
                                    var = section.at(name).get<bool>();
                                }
                            }});
        return opt;
    }
    void apply(const std::string& sub, const json& config) const {
        const json section = config.contains(sub) ? config.at(sub) : json::object();
        for (const auto& e : entries_) {
            if (e.sub != sub) continue;
            try {
                e.fn(section);
            } catch (const json::exception& ex) {
                throw ConfigError("config section '" + sub + "': " + ex.what());
            }
        }
    }

private:
    struct Entry {
        std::string sub;
        std::function<void(const json&)> fn;
    };
    std::vector<Entry> entries_;
};

struct Global {
    std::string config_path;
    std::string out_root = "runs";
    std::string run_dir;
    std::string tag;
    unsigned threads = 0;
    std::optional<std::uint64_t> seed;
    std::optional<double> gamma, eta, omega_mhz, dt, t_final;
};

class Run {
public:
    Run(std::string command, const Global& g, RunConfig cfg, json options, json argv)
        : command_(std::move(command)), cfg_(cfg), options_(std::move(options)),
          argv_(std::move(argv)), start_(std::chrono::steady_clock::now()) {
        if (!g.run_dir.empty()) {
            dir_ = g.run_dir;
        } else {
            const std::time_t now = std::time(nullptr);
            std::tm tm{};
            gmtime_r(&now, &tm);
            std::ostringstream name;
            name << std::put_time(&tm, "%Y%m%dT%H%M%SZ") << '-'
                 << (g.tag.empty() ? command_ : g.tag);
            dir_ = fs::path(g.out_root) / name.str();
            for (int k = 2; fs::exists(dir_); ++k) {
                dir_ = fs::path(g.out_root) / (name.str() + "-" + std::to_string(k));
            }
        }
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw ConfigError("cannot create " + dir_.string() + ": " + ec.message());
        threads_ = worker_count(g.threads);
        write_manifest("running", 0);
    }

    [[nodiscard]] const RunConfig& config() const { return cfg_; }
    [[nodiscard]] unsigned threads() const { return threads_; }
    [[nodiscard]] fs::path path(const std::string& name) const { return dir_ / name; }

    void note_output(const std::string& name) { outputs_.push_back(name); }

    void write(const std::string& name, const std::string& text) {
        std::ofstream out(path(name));
        out << text;
        if (!out) throw ConfigError("cannot write " + path(name).string());
        note_output(name);
    }
    void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

    void lap(const std::string& label) {
        const auto now = std::chrono::steady_clock::now();
        timings_[label] = std::chrono::duration<double>(now - last_).count();
        last_ = now;
    }

    void finish(const std::string& status, int code) { write_manifest(status, code); }

    [[nodiscard]] const fs::path& dir() const { return dir_; }

private:
    void write_manifest(const std::string& status, int code) {
        json m;
        m["command"] = command_;
        m["argv"] = argv_;
        m["status"] = status;
        m["exit_code"] = code;
        m["config"] = json::parse(cfg_.to_json_text());
        m["seed"] = cfg_.seed;
        m["threads"] = threads_;
        m["options"] = options_;
        m["versions"] = {{"caustiq", kVersion},
                         {"compiler", __VERSION__},
                         {"cplusplus", static_cast<long>(__cplusplus)}};
        m["outputs"] = outputs_;
        json t = timings_;
        t["total_s"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        m["timings"] = t;
        std::ofstream out(dir_ / "manifest.json");
        out << m.dump(2) << "\n";
    }

    std::string command_;
    RunConfig cfg_;
    json options_;
    json argv_;
    fs::path dir_;
    unsigned threads_ = 1;
    std::vector<std::string> outputs_;
    json timings_ = json::object();
    std::chrono::steady_clock::time_point start_;
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

WindowShape parse_shape(const std::string& s) {
    if (s == "box") return WindowShape::box;
    if (s == "disc") return WindowShape::disc;
    throw ConfigError("shape must be 'box' or 'disc', got '" + s + "'");
}

Scheme parse_scheme(const std::string& s) {
    if (s == "kraus") return Scheme::measurement_operator;
    if (s == "euler") return Scheme::euler_maruyama;
    throw ConfigError("scheme must be 'kraus' or 'euler', got '" + s + "'");
}

MomentumBox box_from(const std::vector<double>& v) {
    if (v.size() != 4) throw ConfigError("--box needs px_lo,px_hi,pz_lo,pz_hi");
    return {v[0], v[1], v[2], v[3]};
}

// Ensemble either read from a file or generated in-process with on-the-fly
// post-selection.
struct Source {
    std::string input;
    std::size_t simulate = 0;
    double xi = 0.0, zi = -0.97;
    std::optional<double> xf, zf;
    double tol = 0.05;
    std::string shape = "box";
    std::string scheme = "kraus";

    void add_to(CLI::App* app, Fallbacks& fb) {
        fb.add(app, "input", input, "trajectory file (NDJSON or CAUSTIQ1 binary)");
        fb.add(app, "simulate", simulate, "generate this many trajectories instead of --input");
        fb.add(app, "xi", xi, "initial x");
        fb.add(app, "zi", zi, "initial z");
        fb.add(app, "xf", xf, "post-selection final x");
        fb.add(app, "zf", zf, "post-selection final z");
        fb.add(app, "tol", tol, "post-selection half-width");
        fb.add(app, "shape", shape, "post-selection window: box or disc");
        fb.add(app, "scheme", scheme, "state update: kraus or euler");
    }

    [[nodiscard]] json to_json() const {
        json j{{"input", input}, {"simulate", simulate}, {"xi", xi},     {"zi", zi},
               {"tol", tol},     {"shape", shape},       {"scheme", scheme}};
        if (xf) j["xf"] = *xf;
        if (zf) j["zf"] = *zf;
        return j;
    }

    [[nodiscard]] std::optional<PostselectRule> rule(const RunConfig& cfg) const {
        if (!xf && !zf) return std::nullopt;
        if (!xf || !zf) throw ConfigError("--xf and --zf must be given together");
        PostselectRule r{{xi, 0.0, zi}, {*xf, 0.0, *zf}, cfg.t_final_us, tol, parse_shape(shape)};
        r.validate();
        return r;
    }

    std::vector<Trajectory> load(const Run& run, json& info) const {
        const RunConfig& cfg = run.config();
        const auto r = rule(cfg);
        std::vector<Trajectory> ens;
        if (simulate > 0) {
            if (!input.empty()) throw ConfigError("give either --input or --simulate, not both");
            if (!r) throw ConfigError("--simulate needs a post-selection target (--xf, --zf)");
            EnsembleOptions opt;
            opt.scheme = parse_scheme(scheme);
            opt.threads = run.threads();
            opt.keep = [&](const Trajectory& t) { return r->accepts(t); };
            ens = simulate_ensemble({xi, 0.0, zi}, cfg.params(), cfg.grid(), simulate, cfg.seed,
                                    opt);
            info["simulated"] = simulate;
        } else {
            if (input.empty()) throw ConfigError("need --input or --simulate");
            ens = read_trajectories(input, cfg.dt_us);
            info["read"] = ens.size();
            if (r) ens = postselect(ens, *r);
        }
        info["selected"] = ens.size();
        if (ens.empty()) throw EmptySelection("post-selection kept no trajectories");
        return ens;
    }
};

json path_summary(const MlpPath& p) {
    return {{"energy", p.energy},       {"action", p.action},     {"winding", p.winding},
            {"px0", p.start().px},       {"pz0", p.start().pz},    {"x_final", p.end().x},
            {"z_final", p.end().z}};
}

json estimate_summary(const MlpEstimate& e) {
    return {{"method", to_string(e.method)}, {"members", e.count}};
}

// ---------------------------------------------------------------- simulate

struct SimulateOpts {
    std::size_t n = 1000;
    double x0 = 0.0, z0 = -0.97;
    std::string format = "ndjson";
    std::string scheme = "kraus";
    std::optional<double> xf, zf;
    double tol = 0.05;
    std::string shape = "box";
    std::size_t batch = 4096;
};

int cmd_simulate(Run& run, const SimulateOpts& o) {
    const RunConfig& cfg = run.config();
    const PhysParams p = cfg.params();
    const TimeGrid g = cfg.grid();
    if (o.n < 1) throw ConfigError("--n must be at least 1");
    if (o.batch < 1) throw ConfigError("--batch must be at least 1");
    if (o.format != "ndjson" && o.format != "binary") {
        throw ConfigError("--format must be ndjson or binary");
    }
    std::optional<PostselectRule> rule;
    if (o.xf || o.zf) {
        if (!o.xf || !o.zf) throw ConfigError("--xf and --zf must be given together");
        rule = PostselectRule{{o.x0, 0.0, o.z0}, {*o.xf, 0.0, *o.zf}, cfg.t_final_us, o.tol,
                              parse_shape(o.shape)};
        rule->validate();
    }
    EnsembleOptions opt;
    opt.scheme = parse_scheme(o.scheme);
    opt.threads = run.threads();
    if (rule) opt.keep = [&](const Trajectory& t) { return rule->accepts(t); };

    const std::string name = o.format == "binary" ? "trajectories.bin" : "trajectories.ndjson";
    std::optional<BinaryWriter> bin;
    std::ofstream text;
    if (o.format == "binary") {
        bin.emplace(run.path(name).string(), g);
    } else {
        text.open(run.path(name));
        if (!text) throw ConfigError("cannot write " + run.path(name).string());
    }

    std::size_t written = 0, clamps = 0;
    double max_norm = 0.0, sum_x = 0.0, sum_z = 0.0;
    for (std::size_t first = 0; first < o.n; first += o.batch) {
        const std::size_t count = std::min(o.batch, o.n - first);
        const auto batch = simulate_batch({o.x0, 0.0, o.z0}, p, g, first, count, cfg.seed, opt);
        for (const auto& t : batch) {
            if (bin) {
                bin->append(t);
            } else {
                text << to_ndjson_line(t) << '\n';
            }
            ++written;
            clamps += t.clamp_count;
            for (const auto& s : t.states) max_norm = std::max(max_norm, bloch_norm(s));
            sum_x += t.final_state().x;
            sum_z += t.final_state().z;
        }
    }
    if (bin) bin->close();
    text.close();
    run.note_output(name);
    run.lap("simulate_s");

    json summary{{"simulated", o.n},
                 {"written", written},
                 {"clamp_events", clamps},
                 {"max_bloch_norm", max_norm},
                 {"n_steps", g.n_steps},
                 {"dt", g.dt}};
    if (written > 0) {
        summary["mean_final_x"] = sum_x / static_cast<double>(written);
        summary["mean_final_z"] = sum_z / static_cast<double>(written);
    }
    run.write_json("summary.json", summary);
    if (rule && written == 0) throw EmptySelection("post-selection kept no trajectories");
    return 0;
}

// ---------------------------------------------------------------- postselect

struct EstimateOpts {
    Source src;
    double frac = 0.05;
    std::string format = "ndjson";
    bool theory = true;
    std::vector<double> box{-5.0, 5.0, -5.0, 5.0};
    std::size_t n_grid = 61;
};

int cmd_postselect(Run& run, const EstimateOpts& o) {
    const RunConfig& cfg = run.config();
    const PhysParams p = cfg.params();
    json info;
    const auto ens = o.src.load(run, info);
    run.lap("ensemble_s");

    if (o.format == "binary") {
        write_binary(run.path("selected.bin").string(), ens);
        run.note_output("selected.bin");
    } else if (o.format == "ndjson") {
        write_ndjson(run.path("selected.ndjson").string(), ens);
        run.note_output("selected.ndjson");
    } else if (o.format != "none") {
        throw ConfigError("--format must be ndjson, binary or none");
    }

    const MlpEstimate by_dist = mlp_by_distance(ens, o.frac, run.threads());
    const MlpEstimate by_prob = mlp_by_probability(ens, p, o.frac);
    const MlpEstimate mean = plain_mean(ens);
    run.write("mlp_distance.csv", mlp_estimate_csv(by_dist));
    run.write("mlp_probability.csv", mlp_estimate_csv(by_prob));
    run.write("plain_mean.csv", mlp_estimate_csv(mean));
    run.lap("estimates_s");

    json report{{"ensemble", info},
                {"estimates",
                 {estimate_summary(by_dist), estimate_summary(by_prob), estimate_summary(mean)}}};
    const auto rule = o.src.rule(cfg);
    if (o.theory && rule) {
        ShootOptions so;
        so.box = box_from(o.box);
        so.n_grid = o.n_grid;
        so.threads = run.threads();
        const auto sr = shoot_bvp(rule->initial, rule->final, rule->t_final, p, so);
        json sols = json::array();
        for (std::size_t k = 0; k < sr.solutions.size(); ++k) {
            const MlpPath& s = sr.solutions[k];
            run.write("theory_" + std::to_string(k) + ".csv", mlp_path_csv(s));
            json j = path_summary(s);
            j["coverage_distance"] = band_coverage(by_dist, s);
            j["coverage_probability"] = band_coverage(by_prob, s);
            j["plain_mean_outside_distance_band"] = 1.0 - band_coverage(mean, by_dist, s);
            j["rms_distance"] = rms_deviation(by_dist, s);
            j["rms_probability"] = rms_deviation(by_prob, s);
            j["rms_plain_mean"] = rms_deviation(mean, s);
            sols.push_back(j);
        }
        report["theory"] = sols;
        run.lap("theory_s");
    }
    run.write_json("postselect.json", report);
    return 0;
}

// ---------------------------------------------------------------- stats

struct StatsOpts {
    std::string input;
    double frac = 0.05;
};

int cmd_stats(Run& run, const StatsOpts& o) {
    const RunConfig& cfg = run.config();
    const PhysParams p = cfg.params();
    if (o.input.empty()) throw ConfigError("stats needs --input");
    const auto ens = read_trajectories(o.input, cfg.dt_us);
    if (ens.empty()) throw EmptySelection(o.input + " holds no trajectories");

    double max_norm = 0.0, xi_sum = 0.0, xi_sq = 0.0, logp = 0.0;
    std::size_t xi_n = 0;
    for (const auto& t : ens) {
        for (std::size_t k = 0; k < t.record.size(); ++k) {
            const double xi = noise_from_record(t.states[k], t.record[k], p, t.grid.dt);
            xi_sum += xi * t.grid.dt;
            xi_sq += xi * xi * t.grid.dt * t.grid.dt;
            ++xi_n;
        }
        for (const auto& s : t.states) max_norm = std::max(max_norm, bloch_norm(s));
        logp += log_path_probability(t, p);
    }
    const double n = static_cast<double>(xi_n);
    const double mean_dw = xi_sum / n;
    json report{{"trajectories", ens.size()},
                {"n_steps", ens.front().grid.n_steps},
                {"dt", ens.front().grid.dt},
                {"max_bloch_norm", max_norm},
                {"noise_increment_mean", mean_dw},
                {"noise_increment_variance_over_dt",
                 (xi_sq / n - mean_dw * mean_dw) / ens.front().grid.dt},
                {"mean_log_path_probability", logp / static_cast<double>(ens.size())}};
    if (o.frac > 0.0) {
        const MlpEstimate mean = plain_mean(ens);
        run.write("plain_mean.csv", mlp_estimate_csv(mean));
        if (ens.size() >= 2) {
            run.write("mlp_distance.csv", mlp_estimate_csv(mlp_by_distance(ens, o.frac, run.threads())));
        }
        run.write("mlp_probability.csv", mlp_estimate_csv(mlp_by_probability(ens, p, o.frac)));
    }
    run.write_json("stats.json", report);
    return 0;
}

// ---------------------------------------------------------------- mlp

struct MlpOpts {
    double xi = 0.0, zi = -1.0, xf = -0.62, zf = 0.21;
    std::optional<double> horizon;
    std::vector<double> box{-5.0, 5.0, -5.0, 5.0};
    std::size_t n_grid = 61;
};

int cmd_mlp(Run& run, const MlpOpts& o) {
    const RunConfig& cfg = run.config();
    ShootOptions so;
    so.box = box_from(o.box);
    so.n_grid = o.n_grid;
    so.threads = run.threads();
    so.integrate.output_dt = cfg.dt_us;
    const double horizon = o.horizon.value_or(cfg.t_final_us);
    const auto sr = shoot_bvp({o.xi, 0.0, o.zi}, {o.xf, 0.0, o.zf}, horizon, cfg.params(), so);
    run.lap("shoot_s");
    json sols = json::array();
    for (std::size_t k = 0; k < sr.solutions.size(); ++k) {
        run.write("mlp_" + std::to_string(k) + ".csv", mlp_path_csv(sr.solutions[k]));
        sols.push_back(path_summary(sr.solutions[k]));
    }
    const auto& d = sr.diagnostics;
    run.write_json("solutions.json",
                   {{"horizon", horizon},
                    {"solutions", sols},
                    {"diagnostics",
                     {{"grid_nodes", d.grid_nodes},
                      {"singular_nodes", d.singular_nodes},
                      {"candidates", d.candidates},
                      {"converged", d.converged},
                      {"min_residual", d.min_residual}}}});
    return 0;
}

// ---------------------------------------------------------------- manifold

struct ManifoldOpts {
    double xi = 0.0, zi = -1.0;
    std::optional<double> horizon;
    std::vector<double> box{-5.0, 5.0, -5.0, 5.0};
    std::size_t n_grid = kSheetGrid;
    std::vector<double> pin;
    double radius = kDefaultPinRadius;
    bool no_sheet = false;
};

int cmd_manifold(Run& run, const ManifoldOpts& o) {
    const RunConfig& cfg = run.config();
    if (o.pin.size() % 2 != 0) throw ConfigError("--pin takes x,z pairs");
    const double horizon = o.horizon.value_or(cfg.t_final_us);
    IntegrateOptions io;
    io.output_dt = cfg.dt_us;
    const ManifoldSheet sheet =
        sweep({o.xi, 0.0, o.zi}, cfg.params(), horizon, box_from(o.box), o.n_grid, io,
              run.threads());
    run.lap("sweep_s");
    if (!o.no_sheet) run.write("sheet.csv", sheet_csv(sheet));
    const auto fold = detect_fold(sheet);
    run.write("fold.csv", fold_csv(fold));
    json pins = json::array();
    for (std::size_t k = 0; k + 1 < o.pin.size(); k += 2) {
        const PinResult r = pin_test(sheet, {o.pin[k], 0.0, o.pin[k + 1]}, o.radius);
        json sizes = json::array();
        for (const auto& c : r.components) sizes.push_back(c.size());
        pins.push_back({{"x", o.pin[k]}, {"z", o.pin[k + 1]}, {"layers", r.layers},
                        {"component_sizes", sizes}});
    }
    run.write_json("manifold.json", {{"horizon", horizon},
                                     {"n_grid", sheet.n},
                                     {"valid_fraction", sheet.valid_fraction()},
                                     {"fold_points", fold.size()},
                                     {"radius", o.radius},
                                     {"pins", pins}});
    return 0;
}

// ---------------------------------------------------------------- cluster

struct ClusterOpts {
    EstimateOpts est;
    bool synthetic = false;
    std::size_t synthetic_size = 40;
    double synthetic_noise = 0.02;
    std::optional<std::uint64_t> partition_seed;
    bool uniform_weights = false;
};

int cmd_cluster(Run& run, const ClusterOpts& o) {
    const RunConfig& cfg = run.config();
    const PhysParams p = cfg.params();
    json info;
    std::vector<Trajectory> ens;
    std::vector<int> truth;
    if (o.synthetic) {
        auto bench =
            synthetic_benchmark(o.synthetic_size, o.synthetic_noise, cfg.seed, p, cfg.grid());
        ens = std::move(bench.ensemble);
        truth = std::move(bench.truth);
        info["synthetic"] = ens.size();
    } else {
        ens = o.est.src.load(run, info);
    }
    if (ens.size() < 2) throw EmptySelection("clustering needs at least two trajectories");
    run.lap("ensemble_s");

    const auto dist = distance_matrix(ens, run.threads());
    const auto w = o.uniform_weights ? std::vector<double>(ens.size(), 1.0) : weights(ens, p);
    const ClusterPartition part = bipartition(dist, w, o.partition_seed.value_or(cfg.seed));
    run.write("partition.ndjson", partition_ndjson(part));
    run.lap("partition_s");

    json report{{"ensemble", info},
                {"sizes", {part.set1.size(), part.set2.size()}},
                {"objective", part.objective},
                {"iterations", part.iterations},
                {"converged", part.converged}};
    if (!truth.empty()) {
        std::size_t agree = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) agree += part.label[i] == truth[i];
        report["truth_agreement"] =
            static_cast<double>(std::max(agree, truth.size() - agree)) / truth.size();
    }

    std::vector<Trajectory> c1, c2;
    for (auto i : part.set1) c1.push_back(ens[i]);
    for (auto i : part.set2) c2.push_back(ens[i]);
    const MlpEstimate e1 = mlp_by_distance(c1, o.est.frac, run.threads());
    const MlpEstimate e2 = mlp_by_distance(c2, o.est.frac, run.threads());
    run.write("cluster1.csv", mlp_estimate_csv(e1));
    run.write("cluster2.csv", mlp_estimate_csv(e2));

    const auto d1 = distances_to(ens, part.set1, e1.mean);
    const auto d2 = distances_to(ens, part.set2, e2.mean);
    std::vector<double> pool = d1;
    pool.insert(pool.end(), d2.begin(), d2.end());
    const auto edges = freedman_diaconis_edges(pool);
    const std::size_t n_dim = ens.front().grid.n_steps;
    const DistanceHistogram h1 = make_histogram(d1, edges, n_dim);
    const DistanceHistogram h2 = make_histogram(d2, edges, n_dim);
    std::optional<RatioFit> fit;
    try {
        fit = fit_relative_probability(h1, h2);
    } catch (const NumericError& e) {
        report["fit_error"] = e.what();
    }
    std::string fit_line;
    if (fit) {
        std::ostringstream os;
        os.precision(10);
        os << "# log_ratio=" << fit->log_ratio << " std_error=" << fit->std_error
           << " bins_used=" << fit->bins_used << "\n";
        fit_line = os.str();
        report["fit"] = {{"log_ratio", fit->log_ratio},
                         {"std_error", fit->std_error},
                         {"bins_used", fit->bins_used}};
    }
    run.write("histogram1.csv", fit_line + histogram_csv(h1));
    run.write("histogram2.csv", fit_line + histogram_csv(h2));

    const auto rule = o.est.src.rule(cfg);
    if (o.est.theory && rule && !o.synthetic) {
        ShootOptions so;
        so.box = box_from(o.est.box);
        so.n_grid = o.est.n_grid;
        so.threads = run.threads();
        const auto sr = shoot_bvp(rule->initial, rule->final, rule->t_final, p, so);
        const auto pair = dominant_per_winding(sr.solutions);
        json sols = json::array();
        for (std::size_t k = 0; k < pair.size(); ++k) {
            run.write("theory_" + std::to_string(k) + ".csv", mlp_path_csv(pair[k]));
            json j = path_summary(pair[k]);
            j["coverage_cluster1"] = band_coverage(e1, pair[k]);
            j["coverage_cluster2"] = band_coverage(e2, pair[k]);
            j["rms_cluster1"] = rms_deviation(e1, pair[k]);
            j["rms_cluster2"] = rms_deviation(e2, pair[k]);
            sols.push_back(j);
        }
        report["theory"] = sols;
        if (pair.size() >= 2) {
            // cluster 1 is matched to whichever of the two leading paths it is closer to
            const bool direct = rms_deviation(e1, pair[0]) + rms_deviation(e2, pair[1]) <=
                                rms_deviation(e1, pair[1]) + rms_deviation(e2, pair[0]);
            const MlpPath& a = direct ? pair[0] : pair[1];
            const MlpPath& b = direct ? pair[1] : pair[0];
            report["cluster1_matches_winding"] = a.winding;
            report["cluster2_matches_winding"] = b.winding;
            report["action_difference_1_minus_2"] = action_difference(a, b);
        }
        run.lap("theory_s");
    }
    run.write_json("cluster.json", report);
    return 0;
}

// ---------------------------------------------------------------- purestate / portrait

struct PureOpts {
    std::string mode = "fixed-points";
    std::optional<double> omega;
    double omega_lo = 0.05, omega_hi = 0.4;
    std::size_t n_omega = 36;
    double theta_i = 3.141592653589793, theta_f = -1.24 - kTwoPi;
    std::optional<double> horizon;
};

pure::WindingOptions winding_opts(const RunConfig& cfg) {
    pure::WindingOptions w;
    w.output_dt = cfg.dt_us;
    return w;
}

PhysParams pure_params(const RunConfig& cfg, const std::optional<double>& omega) {
    if (!omega) return cfg.params();
    PhysParams p;
    p.gamma = 1.0;
    p.eta = 1.0;
    p.omega_rabi = *omega;
    p.validate();
    return p;
}

int cmd_purestate(Run& run, const PureOpts& o) {
    const RunConfig& cfg = run.config();
    const PhysParams p = pure_params(cfg, o.omega);
    json report{{"mode", o.mode}, {"gamma", p.gamma}, {"omega_rabi", p.omega_rabi},
                {"drive_ratio", p.drive_ratio()}};
    if (o.mode == "fixed-points") {
        const auto fps = pure::fixed_points(p);
        run.write("fixed_points.csv", pure::fixed_points_csv(fps));
        json list = json::array();
        for (const auto& f : fps) {
            list.push_back({{"theta", f.theta}, {"p", f.p}, {"kind", pure::to_string(f.kind)},
                            {"energy", f.energy}});
        }
        report["fixed_points"] = list;
    } else if (o.mode == "bifurcation") {
        const auto scan = pure::bifurcation_scan(o.omega_lo, o.omega_hi, o.n_omega);
        run.write("bifurcation.csv", pure::bifurcation_csv(scan));
        report["omega_c"] = scan.omega_c ? json(*scan.omega_c) : json(nullptr);
        report["count_below"] = scan.count_below;
        report["count_above"] = scan.count_above;
    } else if (o.mode == "winding") {
        const double horizon = o.horizon.value_or(cfg.t_final_us);
        const auto sols = pure::winding_bvp(o.theta_i, o.theta_f, horizon, p, winding_opts(cfg));
        json list = json::array();
        for (std::size_t k = 0; k < sols.size(); ++k) {
            run.write("winding_" + std::to_string(k) + ".csv", pure::winding_csv(sols[k]));
            list.push_back({{"energy", sols[k].energy},
                            {"initial_branch", sols[k].initial_branch},
                            {"turns", sols[k].turns},
                            {"region", std::string(1, sols[k].region)},
                            {"action", sols[k].action},
                            {"endpoint_error", sols[k].endpoint_error}});
        }
        report["horizon"] = horizon;
        report["solutions"] = list;
    } else {
        throw ConfigError("--mode must be fixed-points, bifurcation or winding");
    }
    run.write_json("purestate.json", report);
    return 0;
}

struct PortraitOpts {
    std::optional<double> omega;
    double theta_lo = 0.0, theta_hi = kTwoPi, p_lo = -6.0, p_hi = 6.0;
    std::size_t n_theta = 200, n_p = 200;
};

int cmd_portrait(Run& run, const PortraitOpts& o) {
    const PhysParams p = pure_params(run.config(), o.omega);
    run.write("portrait.csv",
              pure::portrait_csv(p, o.theta_lo, o.theta_hi, o.p_lo, o.p_hi, o.n_theta, o.n_p));
    run.write("fixed_points.csv", pure::fixed_points_csv(pure::fixed_points(p)));
    return 0;
}

RunConfig resolve_config(const Global& g, json& raw) {
    RunConfig cfg;
    raw = json::object();
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw ConfigError("cannot open config " + g.config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        cfg = RunConfig::from_json_text(ss.str());
        raw = json::parse(ss.str());
    }
    if (g.gamma) cfg.gamma_per_us = *g.gamma;
    if (g.eta) cfg.eta = *g.eta;
    if (g.omega_mhz) cfg.omega_over_2pi_mhz = *g.omega_mhz;
    if (g.dt) cfg.dt_us = *g.dt;
    if (g.t_final) cfg.t_final_us = *g.t_final;
    if (g.seed) cfg.seed = *g.seed;
    (void)cfg.params();
    cfg.grid().validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"caustiq: homodyne fluorescence trajectories and most-likely paths"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kVersion);

    Global g;
    app.add_option("--config", g.config_path, "JSON config file");
    app.add_option("--out", g.out_root, "root directory for run folders");
    app.add_option("--run-dir", g.run_dir, "exact output directory (overrides --out/--tag)");
    app.add_option("--tag", g.tag, "suffix of the run folder name");
    app.add_option("--threads", g.threads, "worker count (0: CAUSTIQ_THREADS or hardware)");
    app.add_option("--seed", g.seed, "root seed");
    app.add_option("--gamma", g.gamma, "decay rate, 1/us");
    app.add_option("--eta", g.eta, "detection efficiency");
    app.add_option("--omega-mhz", g.omega_mhz, "Rabi frequency Omega/2pi, MHz");
    app.add_option("--dt", g.dt, "time step, us");
    app.add_option("--t-final", g.t_final, "duration / post-selection time, us");

    Fallbacks fb;

    SimulateOpts sim;
    auto* s_sim = app.add_subcommand("simulate", "generate a trajectory ensemble");
    fb.add(s_sim, "n", sim.n, "number of trajectories");
    fb.add(s_sim, "x0", sim.x0, "initial x");
    fb.add(s_sim, "z0", sim.z0, "initial z");
    fb.add(s_sim, "format", sim.format, "ndjson or binary");
    fb.add(s_sim, "scheme", sim.scheme, "kraus or euler");
    fb.add(s_sim, "xf", sim.xf, "keep only trajectories ending near this x");
    fb.add(s_sim, "zf", sim.zf, "keep only trajectories ending near this z");
    fb.add(s_sim, "tol", sim.tol, "post-selection half-width");
    fb.add(s_sim, "shape", sim.shape, "box or disc");
    fb.add(s_sim, "batch", sim.batch, "trajectories held in memory at once");

    const auto add_estimate = [&fb](CLI::App* sub, EstimateOpts& e) {
        e.src.add_to(sub, fb);
        fb.add(sub, "frac", e.frac, "fraction of trajectories averaged by the estimators");
        fb.add(sub, "n-grid", e.n_grid, "momentum grid of the theory search");
        fb.add(sub, "box", e.box, "momentum box px_lo,px_hi,pz_lo,pz_hi")->delimiter(',');
        auto* no = sub->add_flag("--no-theory", "skip the shooting comparison");
        no->each([&e](const std::string&) { e.theory = false; });
    };

    EstimateOpts post;
    auto* s_post = app.add_subcommand("postselect", "post-select and estimate the MLP");
    add_estimate(s_post, post);
    fb.add(s_post, "format", post.format, "selected ensemble format: ndjson, binary or none");

    StatsOpts stats;
    auto* s_stats = app.add_subcommand("stats", "summary statistics of a trajectory file");
    fb.add(s_stats, "input", stats.input, "trajectory file");
    fb.add(s_stats, "frac", stats.frac, "estimator fraction (0 to skip estimates)");

    MlpOpts mlp;
    auto* s_mlp = app.add_subcommand("mlp", "solve the most-likely-path boundary value problem");
    fb.add(s_mlp, "xi", mlp.xi, "initial x");
    fb.add(s_mlp, "zi", mlp.zi, "initial z");
    fb.add(s_mlp, "xf", mlp.xf, "final x");
    fb.add(s_mlp, "zf", mlp.zf, "final z");
    fb.add(s_mlp, "horizon", mlp.horizon, "duration T, us (default: t_final)");
    fb.add(s_mlp, "box", mlp.box, "momentum box px_lo,px_hi,pz_lo,pz_hi")->delimiter(',');
    fb.add(s_mlp, "n-grid", mlp.n_grid, "momentum grid nodes per axis");

    ManifoldOpts man;
    auto* s_man = app.add_subcommand("manifold", "sweep initial momenta, find folds and layers");
    fb.add(s_man, "xi", man.xi, "initial x");
    fb.add(s_man, "zi", man.zi, "initial z");
    fb.add(s_man, "horizon", man.horizon, "duration T, us (default: t_final)");
    fb.add(s_man, "box", man.box, "momentum box px_lo,px_hi,pz_lo,pz_hi")->delimiter(',');
    fb.add(s_man, "n-grid", man.n_grid, "nodes per axis");
    fb.add(s_man, "pin", man.pin, "final states to pin-test, x,z[,x,z...]")->delimiter(',');
    fb.add(s_man, "radius", man.radius, "pin radius");
    fb.flag(s_man, "no-sheet", man.no_sheet, "do not write sheet.csv");

    ClusterOpts clu;
    auto* s_clu = app.add_subcommand("cluster", "bipartition a post-selected ensemble");
    add_estimate(s_clu, clu.est);
    fb.flag(s_clu, "synthetic", clu.synthetic, "use the two-bundle synthetic benchmark");
    fb.add(s_clu, "synthetic-size", clu.synthetic_size, "members per synthetic bundle");
    fb.add(s_clu, "synthetic-noise", clu.synthetic_noise, "synthetic jitter");
    fb.add(s_clu, "partition-seed", clu.partition_seed, "seed of the random initial split");
    fb.flag(s_clu, "uniform-weights", clu.uniform_weights, "set every path weight to 1");

    PureOpts pure_o;
    auto* s_pure = app.add_subcommand("purestate", "pure-state reduction: fixed points, bifurcation, winding");
    fb.add(s_pure, "mode", pure_o.mode, "fixed-points, bifurcation or winding");
    fb.add(s_pure, "omega", pure_o.omega, "drive ratio Omega/gamma with gamma = 1");
    fb.add(s_pure, "omega-lo", pure_o.omega_lo, "bifurcation scan start");
    fb.add(s_pure, "omega-hi", pure_o.omega_hi, "bifurcation scan end");
    fb.add(s_pure, "n-omega", pure_o.n_omega, "bifurcation scan samples");
    fb.add(s_pure, "theta-i", pure_o.theta_i, "winding: initial angle");
    fb.add(s_pure, "theta-f", pure_o.theta_f, "winding: final unwrapped angle");
    fb.add(s_pure, "horizon", pure_o.horizon, "winding: duration, us (default: t_final)");

    PortraitOpts por;
    auto* s_por = app.add_subcommand("portrait", "h* and action-rate grid for contour plots");
    fb.add(s_por, "omega", por.omega, "drive ratio Omega/gamma with gamma = 1");
    fb.add(s_por, "theta-lo", por.theta_lo, "");
    fb.add(s_por, "theta-hi", por.theta_hi, "");
    fb.add(s_por, "p-lo", por.p_lo, "");
    fb.add(s_por, "p-hi", por.p_hi, "");
    fb.add(s_por, "n-theta", por.n_theta, "");
    fb.add(s_por, "n-p", por.n_p, "");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    json argv_json = json::array();
    for (int i = 0; i < argc; ++i) argv_json.push_back(argv[i]);

    std::optional<Run> run;
    int code = 0;
    std::string status = "ok";
    try {
        json raw;
        const RunConfig cfg = resolve_config(g, raw);
        fb.apply(name, raw);
        json opts = raw.contains(name) ? raw.at(name) : json::object();
        for (const CLI::Option* opt : sub->get_options()) {
            if (opt->count() > 0 && opt->get_name() != "--help") {
                opts[opt->get_name().substr(2)] = opt->as<std::string>();
            }
        }
        run.emplace(name, g, cfg, opts, argv_json);
        if (name == "simulate") code = cmd_simulate(*run, sim);
        else if (name == "postselect") code = cmd_postselect(*run, post);
        else if (name == "stats") code = cmd_stats(*run, stats);
        else if (name == "mlp") code = cmd_mlp(*run, mlp);
        else if (name == "manifold") code = cmd_manifold(*run, man);
        else if (name == "cluster") code = cmd_cluster(*run, clu);
        else if (name == "purestate") code = cmd_purestate(*run, pure_o);
        else if (name == "portrait") code = cmd_portrait(*run, por);
    } catch (const EmptySelection& e) {
        std::cerr << "caustiq: " << e.what() << "\n";
        code = 3;
        status = "empty_selection";
    } catch (const NumericError& e) {
        std::cerr << "caustiq: numerical failure: " << e.what() << "\n";
        code = 2;
        status = "numeric_error";
    } catch (const std::exception& e) {
        std::cerr << "caustiq: " << e.what() << "\n";
        code = 1;
        status = "config_error";
    }
    if (run) {
        run->finish(status, code);
        if (code == 0) std::cout << run->dir().string() << "\n";
    }
    return code;
}
