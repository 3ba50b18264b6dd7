// Command-line front end: fit, calibrate-cap, infer, simulate, stress-test.
//
// Exit codes are stable contracts:
//   0 ok, 1 I/O error, 2 validation/usage error, 3 fit did not converge,
//   4 singular inference, 5 simulation failure threshold exceeded.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nmfre/complexity.hpp"
#include "nmfre/estimator.hpp"
#include "nmfre/inference.hpp"
#include "nmfre/parallel.hpp"
#include "nmfre/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* k_tool_version = "0.1.0";

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw nmfre::IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw nmfre::IoError("cannot write " + path);
    out << content;
}

std::string fnv1a64_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

int thread_count_from(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("NMFRE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return nmfre::default_thread_count();
}

struct ManifestWriter {
    std::string command;
    std::vector<std::string> argv;
    json config = json::object();
    json inputs = json::array();
    std::uint64_t master_seed = 0;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void add_input(const std::string& path, const std::string& bytes) {
        inputs.push_back({{"path", path}, {"fnv1a64", fnv1a64_hex(bytes)}});
    }

    void write(const fs::path& out_dir) {
        json m;
        m["command"] = command;
        m["argv"] = argv;
        m["tool_version"] = k_tool_version;
        m["config"] = config;
        m["inputs"] = inputs;
        m["master_seed"] = master_seed;
        m["outputs"] = outputs;
        m["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const std::string path = (out_dir / ("manifest_" + command + ".json")).string();
        write_file(path, m.dump(2) + "\n");
    }
};

fs::path prepare_out_dir(const std::string& out) {
    fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw nmfre::IoError("cannot create output directory " + dir.string());
    return dir;
}

std::string diagnostics_csv(const std::string& dataset, const nmfre::DataSet& data,
                            const nmfre::FitResult& res) {
    std::ostringstream out;
    out << "dataset,n,p,q,nq,df_u,r,r_max,lambda,cap\n";
    const auto& d = res.diagnostics;
    char buf[256];
    const long q = static_cast<long>(res.params.q());
    std::snprintf(buf, sizeof(buf), "%s,%ld,%ld,%ld,%ld,%.2f,%.3f,", dataset.c_str(),
                  static_cast<long>(data.n()), static_cast<long>(data.p()), q,
                  static_cast<long>(data.n()) * q, d.df_u, d.saturation_ratio);
    out << buf;
    if (d.cap_ratio > 0.0) {
        std::snprintf(buf, sizeof(buf), "%.3g", d.cap_ratio);
        out << buf;
    } else {
        out << "off";
    }
    std::snprintf(buf, sizeof(buf), ",%.4g,%s\n", d.lambda_final,
                  d.cap_ever_activated ? "Yes" : "No");
    out << buf;
    return out.str();
}

std::string trace_csv(const nmfre::ObjectiveTrace& trace) {
    std::ostringstream out;
    out << "iteration,objective,objective_start,lambda,df_u,cap_activated,safeguard_triggered\n";
    char buf[256];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%d,%d\n", r.iteration,
                      r.objective, r.objective_start, r.lambda, r.df_u, r.cap_activated ? 1 : 0,
                      r.safeguard_triggered ? 1 : 0);
        out << buf;
    }
    return out.str();
}

json labels_json(const nmfre::DataSet& data) {
    return {{"variables", data.row_labels_y},
            {"covariates", data.row_labels_a},
            {"columns", data.col_labels}};
}

double parse_cap(const std::string& cap) {
    if (cap == "off" || cap == "none") return -1.0;
    try {
        return std::stod(cap);
    } catch (const std::exception&) {
        throw nmfre::ParseError("--cap expects a ratio in (0,1] or 'off'");
    }
}

nmfre::ErrorDist parse_error_dist(const std::string& s) {
    if (s == "gaussian") return nmfre::ErrorDist::Gaussian;
    if (s == "exp" || s == "exp_centered") return nmfre::ErrorDist::ExpCentered;
    throw nmfre::ParseError("--error expects gaussian or exp_centered");
}

nmfre::Scenario parse_scenario(const std::string& s) {
    if (s == "null") return nmfre::Scenario::NullBoundary;
    if (s == "alt" || s == "alternative") return nmfre::Scenario::AlternativeInterior;
    throw nmfre::ParseError("--scenario expects null or alt");
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitArgs {
    std::string y_path, a_path, config_path, out_dir, cap = "";
    int q = -1;
    double lambda_init = -1.0;
    double tol = -1.0;
    int maxit = -1;
    int restarts = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string dataset_name = "dataset";
};

int cmd_fit(const FitArgs& args, const std::vector<std::string>& argv) {
    nmfre::FitConfig cfg;
    if (!args.config_path.empty()) cfg = nmfre::fit_config_from_json(read_file_bytes(args.config_path));
    if (args.q > 0) cfg.q = args.q;
    if (args.q <= 0 && args.config_path.empty())
        throw nmfre::ParseError("--q is required unless --config provides it");
    if (!args.cap.empty()) cfg.cap_ratio = parse_cap(args.cap);
    if (args.lambda_init > 0) cfg.lambda_init = args.lambda_init;
    if (args.tol > 0) cfg.tol = args.tol;
    if (args.maxit > 0) cfg.maxit = args.maxit;
    if (args.restarts > 0) cfg.n_restarts = args.restarts;
    if (args.seed_set) cfg.rng_seed = args.seed;
    nmfre::validate_fit_config(cfg);

    const fs::path out_dir = prepare_out_dir(args.out_dir);
    ManifestWriter manifest{"fit", argv};
    manifest.config = json::parse(nmfre::fit_config_to_json(cfg));
    manifest.master_seed = cfg.rng_seed;

    const std::string y_bytes = read_file_bytes(args.y_path);
    const std::string a_bytes = read_file_bytes(args.a_path);
    manifest.add_input(args.y_path, y_bytes);
    manifest.add_input(args.a_path, a_bytes);

    const nmfre::DataSet data = nmfre::load_dataset(args.y_path, args.a_path);
    const nmfre::FitResult result = nmfre::fit(data, cfg);

    json fit_doc;
    fit_doc["fit"] = json::parse(nmfre::fit_result_to_json(result));
    fit_doc["config"] = json::parse(nmfre::fit_config_to_json(cfg));
    fit_doc["inputs"] = {{"y_path", fs::absolute(args.y_path).string()},
                         {"a_path", fs::absolute(args.a_path).string()},
                         {"y_fnv1a64", fnv1a64_hex(y_bytes)},
                         {"a_fnv1a64", fnv1a64_hex(a_bytes)}};
    fit_doc["labels"] = labels_json(data);
    fit_doc["tool_version"] = k_tool_version;

    const std::string fit_path = (out_dir / "fit.json").string();
    write_file(fit_path, fit_doc.dump(2) + "\n");
    const std::string diag_path = (out_dir / "diagnostics.csv").string();
    write_file(diag_path, diagnostics_csv(args.dataset_name, data, result));
    const std::string trace_path = (out_dir / "trace.csv").string();
    write_file(trace_path, trace_csv(result.trace));
    manifest.outputs = {fit_path, diag_path, trace_path};
    manifest.write(out_dir);

    std::cout << diagnostics_csv(args.dataset_name, data, result);
    if (!result.converged) {
        std::cerr << "warning: fit did not converge within maxit = " << cfg.maxit << "\n";
        return 3;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// calibrate-cap
// ---------------------------------------------------------------------------

struct CalibrateArgs {
    std::string y_path, a_path, out_dir;
    int q = 1;
    double lambda_min = 1.0;
    std::uint64_t seed = 0;
};

int cmd_calibrate_cap(const CalibrateArgs& args, const std::vector<std::string>& argv) {
    const fs::path out_dir = prepare_out_dir(args.out_dir);
    ManifestWriter manifest{"calibrate-cap", argv};
    manifest.master_seed = args.seed;
    manifest.config = {{"q", args.q}, {"lambda_min", args.lambda_min}};

    const std::string y_bytes = read_file_bytes(args.y_path);
    const std::string a_bytes = read_file_bytes(args.a_path);
    manifest.add_input(args.y_path, y_bytes);
    manifest.add_input(args.a_path, a_bytes);

    const nmfre::DataSet data = nmfre::load_dataset(args.y_path, args.a_path);
    nmfre::FitConfig cfg;
    cfg.q = args.q;
    cfg.rng_seed = args.seed;
    nmfre::Rng rng(nmfre::derive_seed(cfg.rng_seed, 0));
    const auto [x_fix, theta_fix] = nmfre::init_covariate_nmf(data, cfg, rng);

    const nmfre::CapCalibration cal = nmfre::calibrate_cap(x_fix, args.lambda_min, data.n());
    const double nq = static_cast<double>(data.n()) * args.q;

    const std::string lookup_path = (out_dir / "lambda_r_lookup.csv").string();
    nmfre::write_lookup_csv(lookup_path, cal);

    json doc;
    doc["lambda_min"] = args.lambda_min;
    doc["df_max"] = cal.df_max;
    doc["r_max"] = cal.df_max / nq;
    doc["nq"] = nq;
    const std::string cal_path = (out_dir / "calibration.json").string();
    write_file(cal_path, doc.dump(2) + "\n");
    manifest.outputs = {lookup_path, cal_path};
    manifest.write(out_dir);

    std::printf("df_max = %.6g  (r_max = %.6g at lambda_min = %.6g)\n", cal.df_max, cal.df_max / nq,
                args.lambda_min);
    return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferArgs {
    std::string fit_path, y_path, a_path, out_dir;
    int b = 1000;
    std::uint64_t seed = 0;
    double ci_level = 0.95;
    bool two_sided = false;
    bool dump_replicates = false;
    std::string df_mode = "fixed";
    std::string multiplier = "exp_centered";
};

int cmd_infer(const InferArgs& args, const std::vector<std::string>& argv) {
    const fs::path out_dir = prepare_out_dir(args.out_dir);
    ManifestWriter manifest{"infer", argv};
    manifest.master_seed = args.seed;

    const std::string fit_bytes = read_file_bytes(args.fit_path);
    manifest.add_input(args.fit_path, fit_bytes);
    json fit_doc;
    try {
        fit_doc = json::parse(fit_bytes);
    } catch (const json::exception& e) {
        throw nmfre::ParseError(std::string("fit file: ") + e.what());
    }
    if (!fit_doc.contains("fit")) throw nmfre::ParseError("fit file lacks a 'fit' object");
    const nmfre::FitResult fit_res = nmfre::fit_result_from_json(fit_doc.at("fit").dump());

    std::string y_path = args.y_path, a_path = args.a_path;
    if (y_path.empty() || a_path.empty()) {
        if (!fit_doc.contains("inputs"))
            throw nmfre::ParseError("fit file lacks input paths; pass --y/--a explicitly");
        y_path = fit_doc.at("inputs").at("y_path").get<std::string>();
        a_path = fit_doc.at("inputs").at("a_path").get<std::string>();
    }
    const std::string y_bytes = read_file_bytes(y_path);
    const std::string a_bytes = read_file_bytes(a_path);
    manifest.add_input(y_path, y_bytes);
    manifest.add_input(a_path, a_bytes);
    if (fit_doc.contains("inputs")) {
        const auto& in = fit_doc.at("inputs");
        if (in.contains("y_fnv1a64") && in.at("y_fnv1a64").get<std::string>() != fnv1a64_hex(y_bytes))
            std::cerr << "warning: " << y_path << " differs from the bytes used by the fit\n";
        if (in.contains("a_fnv1a64") && in.at("a_fnv1a64").get<std::string>() != fnv1a64_hex(a_bytes))
            std::cerr << "warning: " << a_path << " differs from the bytes used by the fit\n";
    }
    const nmfre::DataSet data = nmfre::load_dataset(y_path, a_path);

    nmfre::InferenceConfig cfg;
    cfg.b = args.b;
    cfg.rng_seed = args.seed;
    cfg.ci_level = args.ci_level;
    cfg.default_side =
        args.two_sided ? nmfre::TestSide::TwoSided : nmfre::TestSide::OneSidedBoundary;
    if (args.df_mode == "active")
        cfg.df_theta_mode = nmfre::DfThetaMode::ActiveSet;
    else if (args.df_mode != "fixed")
        throw nmfre::ParseError("--df-theta-mode expects fixed or active");
    if (args.multiplier == "rademacher")
        cfg.multiplier_dist = nmfre::MultiplierDist::Rademacher;
    else if (args.multiplier == "gaussian")
        cfg.multiplier_dist = nmfre::MultiplierDist::Gaussian;
    else if (args.multiplier != "exp_centered" && args.multiplier != "exp")
        throw nmfre::ParseError("--multiplier expects exp_centered, rademacher, or gaussian");
    manifest.config = {{"b", cfg.b},
                       {"ci_level", cfg.ci_level},
                       {"df_theta_mode", args.df_mode},
                       {"multiplier", args.multiplier},
                       {"two_sided", args.two_sided}};

    const nmfre::InferenceReport report = nmfre::run_inference(data, fit_res, cfg);
    if (cfg.b < 2) std::cerr << "warning: B < 2, bootstrap SE is undefined (reported as null)\n";

    const std::string csv_path = (out_dir / "report.csv").string();
    write_file(csv_path, nmfre::report_to_csv(report));
    const std::string json_path = (out_dir / "report.json").string();
    write_file(json_path, nmfre::report_to_json(report, args.dump_replicates) + "\n");
    manifest.outputs = {csv_path, json_path};
    manifest.write(out_dir);

    std::cout << nmfre::report_to_csv(report);
    return 0;
}

// ---------------------------------------------------------------------------
// simulate / stress-test
// ---------------------------------------------------------------------------

struct SimArgs {
    int n = 27;
    std::string error = "gaussian";
    std::string scenario = "null";
    std::string cap = "0.21";
    int r = 200;
    int b = 200;
    bool full = false;
    std::uint64_t seed = 0;
    int threads = 0;
    bool dump_replicates = false;
    std::string out_dir;
};

int run_sim_command(const std::string& command, const SimArgs& args,
                    const std::vector<std::string>& argv) {
    const fs::path out_dir = prepare_out_dir(args.out_dir);
    ManifestWriter manifest{command, argv};
    manifest.master_seed = args.seed;

    int r = args.r, b = args.b;
    if (args.full) r = b = 1000;

    nmfre::SimDesign design;
    if (command == "simulate") {
        design = nmfre::orthodont_baseline_design(args.n, parse_error_dist(args.error),
                                                  parse_scenario(args.scenario), r, b, args.seed);
        design.fit_cfg.cap_ratio = parse_cap(args.cap);
    } else {
        nmfre::CapSetting cap_setting;
        if (args.cap == "0.21")
            cap_setting = nmfre::CapSetting::Strict021;
        else if (args.cap == "0.99")
            cap_setting = nmfre::CapSetting::Loose099;
        else if (args.cap == "off")
            cap_setting = nmfre::CapSetting::Off;
        else
            throw nmfre::ParseError("stress-test --cap expects 0.21, 0.99, or off");
        design = nmfre::stress_design(cap_setting, parse_error_dist(args.error),
                                      parse_scenario(args.scenario), r, b, args.seed);
    }
    manifest.config = {{"n", design.n},       {"q", design.q},   {"error", args.error},
                       {"scenario", args.scenario}, {"cap", args.cap}, {"r", r},
                       {"b", b},              {"threads", thread_count_from(args.threads)}};

    std::vector<nmfre::ReplicateRecord> records;
    const nmfre::MonteCarloSummary summary = nmfre::run_monte_carlo(
        design, thread_count_from(args.threads), args.dump_replicates ? &records : nullptr);

    const std::string summary_path = (out_dir / "summary.csv").string();
    write_file(summary_path, nmfre::summary_csv_header() + nmfre::summary_csv_row(design, summary));
    manifest.outputs = {summary_path};
    if (args.dump_replicates) {
        const std::string rep_path = (out_dir / "replicates.csv").string();
        write_file(rep_path, nmfre::replicates_csv(records));
        manifest.outputs.push_back(rep_path);
    }
    manifest.write(out_dir);

    std::cout << nmfre::summary_csv_header() << nmfre::summary_csv_row(design, summary);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NMF with random effects: penalized fitting, df_U complexity control, "
                 "post-regularization inference, and Monte Carlo studies"};
    app.require_subcommand(1);
    std::vector<std::string> argv_vec(argv, argv + argc);

    FitArgs fit_args;
    auto* fit_cmd = app.add_subcommand("fit", "fit NMF-RE to CSV matrices");
    fit_cmd->add_option("--y", fit_args.y_path, "response matrix CSV (P x N)")->required();
    fit_cmd->add_option("--a", fit_args.a_path, "covariate matrix CSV (K x N)")->required();
    fit_cmd->add_option("--q", fit_args.q, "latent dimension");
    fit_cmd->add_option("--config", fit_args.config_path, "fit config JSON");
    fit_cmd->add_option("--cap", fit_args.cap, "cap ratio df_U^max/(NQ) in (0,1], or 'off'");
    fit_cmd->add_option("--lambda-init", fit_args.lambda_init, "initial ridge penalty");
    fit_cmd->add_option("--tol", fit_args.tol, "relative objective tolerance");
    fit_cmd->add_option("--maxit", fit_args.maxit, "iteration cap");
    fit_cmd->add_option("--restarts", fit_args.restarts, "number of random restarts");
    auto* seed_opt = fit_cmd->add_option("--seed", fit_args.seed, "master RNG seed");
    fit_cmd->add_option("--out", fit_args.out_dir, "output directory");
    fit_cmd->add_option("--name", fit_args.dataset_name, "dataset label for diagnostics");

    CalibrateArgs cal_args;
    auto* cal_cmd = app.add_subcommand("calibrate-cap", "translate a lambda floor into df_U^max");
    cal_cmd->add_option("--y", cal_args.y_path)->required();
    cal_cmd->add_option("--a", cal_args.a_path)->required();
    cal_cmd->add_option("--q", cal_args.q)->required();
    cal_cmd->add_option("--lambda-min", cal_args.lambda_min, "smallest plausible lambda")->required();
    cal_cmd->add_option("--seed", cal_args.seed);
    cal_cmd->add_option("--out", cal_args.out_dir);

    InferArgs infer_args;
    auto* infer_cmd = app.add_subcommand("infer", "sandwich + one-step bootstrap inference for Theta");
    infer_cmd->add_option("--fit", infer_args.fit_path, "fit.json from the fit command")->required();
    infer_cmd->add_option("--y", infer_args.y_path, "override response CSV path");
    infer_cmd->add_option("--a", infer_args.a_path, "override covariate CSV path");
    infer_cmd->add_option("--b", infer_args.b, "bootstrap replicates");
    infer_cmd->add_option("--seed", infer_args.seed);
    infer_cmd->add_option("--ci-level", infer_args.ci_level);
    infer_cmd->add_flag("--two-sided", infer_args.two_sided, "force two-sided tests");
    infer_cmd->add_flag("--dump-replicates", infer_args.dump_replicates);
    infer_cmd->add_option("--df-theta-mode", infer_args.df_mode, "fixed | active");
    infer_cmd->add_option("--multiplier", infer_args.multiplier,
                          "exp_centered | rademacher | gaussian");
    infer_cmd->add_option("--out", infer_args.out_dir);

    SimArgs sim_args;
    auto* sim_cmd = app.add_subcommand("simulate", "Orthodont-based Monte Carlo study");
    sim_cmd->add_option("--n", sim_args.n, "units per dataset (27, 100, 200, ...)");
    sim_cmd->add_option("--error", sim_args.error, "gaussian | exp_centered");
    sim_cmd->add_option("--scenario", sim_args.scenario, "null | alt");
    sim_cmd->add_option("--cap", sim_args.cap, "cap ratio or 'off'");
    sim_cmd->add_option("--r", sim_args.r, "Monte Carlo replicates");
    sim_cmd->add_option("--b", sim_args.b, "bootstrap replicates per run");
    sim_cmd->add_flag("--full", sim_args.full, "full scale R = B = 1000");
    sim_cmd->add_option("--seed", sim_args.seed);
    sim_cmd->add_option("--threads", sim_args.threads, "worker cap (default: NMFRE_THREADS or all cores)");
    sim_cmd->add_flag("--dump-replicates", sim_args.dump_replicates);
    sim_cmd->add_option("--out", sim_args.out_dir);

    SimArgs stress_args;
    stress_args.r = 100;
    auto* stress_cmd = app.add_subcommand("stress-test", "dfU-cap saturation stress test (P=4, Q=3, N=100)");
    stress_cmd->add_option("--cap", stress_args.cap, "0.21 | 0.99 | off")->required();
    stress_cmd->add_option("--error", stress_args.error);
    stress_cmd->add_option("--scenario", stress_args.scenario);
    stress_cmd->add_option("--r", stress_args.r);
    stress_cmd->add_option("--b", stress_args.b);
    stress_cmd->add_flag("--full", stress_args.full);
    stress_cmd->add_option("--seed", stress_args.seed);
    stress_cmd->add_option("--threads", stress_args.threads);
    stress_cmd->add_flag("--dump-replicates", stress_args.dump_replicates);
    stress_cmd->add_option("--out", stress_args.out_dir);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (fit_cmd->parsed()) {
            fit_args.seed_set = seed_opt->count() > 0;
            return cmd_fit(fit_args, argv_vec);
        }
        if (cal_cmd->parsed()) return cmd_calibrate_cap(cal_args, argv_vec);
        if (infer_cmd->parsed()) return cmd_infer(infer_args, argv_vec);
        if (sim_cmd->parsed()) return run_sim_command("simulate", sim_args, argv_vec);
        if (stress_cmd->parsed()) return run_sim_command("stress-test", stress_args, argv_vec);
    } catch (const nmfre::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nmfre::SingularInformation& e) {
        std::cerr << "error: singular information: " << e.what() << "\n";
        return 4;
    } catch (const nmfre::SimulationFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
