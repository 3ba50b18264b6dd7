#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const std::string k_cli = NMFRE_CLI_PATH;
const std::string k_data_dir = NMFRE_DATA_DIR;

int run(const std::string& args) {
    const std::string cmd = k_cli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const std::string k_orthodont =
    " --y " + k_data_dir + "/orthodont_y.csv --a " + k_data_dir + "/orthodont_a.csv";

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run("fit --y " + k_data_dir + "/orthodont_y.csv --q 1") == 2);  // missing --a
    CHECK(run("fit" + k_orthodont) == 2);                                 // missing --q
    CHECK(run("definitely-not-a-command") == 2);
    CHECK(run("simulate --error sometimes") == 2);
}

TEST_CASE("missing input file exits with code 1") {
    CHECK(run("fit --y /no/such/file.csv --a " + k_data_dir + "/orthodont_a.csv --q 1") == 1);
}

TEST_CASE("fit writes outputs and the summary diagnostics row") {
    const fs::path out = fresh_dir("nmfre_cli_fit");
    const int code =
        run("fit" + k_orthodont + " --q 1 --cap 0.21 --seed 7 --name Orthodont --out " +
            out.string());
    CHECK(code == 0);
    CHECK(fs::exists(out / "fit.json"));
    CHECK(fs::exists(out / "diagnostics.csv"));
    CHECK(fs::exists(out / "trace.csv"));
    CHECK(fs::exists(out / "manifest_fit.json"));

    const std::string diag = slurp(out / "diagnostics.csv");
    CHECK(diag.find("Orthodont,27,4,1,27,5.42,0.201,0.21,") != std::string::npos);
    CHECK(diag.find(",No\n") != std::string::npos);

    const auto manifest = nlohmann::json::parse(slurp(out / "manifest_fit.json"));
    CHECK(manifest.at("command") == "fit");
    CHECK(manifest.at("inputs").size() == 2);
    CHECK(manifest.at("outputs").size() == 3);
}

TEST_CASE("non-convergence exits with code 3 but still writes outputs") {
    const fs::path out = fresh_dir("nmfre_cli_noconv");
    const int code = run("fit" + k_orthodont + " --q 1 --maxit 1 --seed 7 --out " + out.string());
    CHECK(code == 3);
    CHECK(fs::exists(out / "fit.json"));
    CHECK(fs::exists(out / "diagnostics.csv"));
    const auto fit = nlohmann::json::parse(slurp(out / "fit.json"));
    CHECK_FALSE(fit.at("fit").at("converged").get<bool>());
}

TEST_CASE("fit accepts a config file with flag overrides") {
    const fs::path cfg = fs::temp_directory_path() / "nmfre_cfg.json";
    std::ofstream(cfg) << R"({"q": 1, "cap_ratio": 0.21, "n_restarts": 2, "rng_seed": 9})";
    const fs::path out = fresh_dir("nmfre_cli_cfg");
    CHECK(run("fit" + k_orthodont + " --config " + cfg.string() + " --out " + out.string()) == 0);
    const auto manifest = nlohmann::json::parse(slurp(out / "manifest_fit.json"));
    CHECK(manifest.at("config").at("n_restarts") == 2);
    CHECK(manifest.at("config").at("rng_seed") == 9);
}

TEST_CASE("fit is byte-identical under a fixed seed") {
    const fs::path out1 = fresh_dir("nmfre_cli_det1");
    const fs::path out2 = fresh_dir("nmfre_cli_det2");
    CHECK(run("fit" + k_orthodont + " --q 1 --seed 7 --out " + out1.string()) == 0);
    CHECK(run("fit" + k_orthodont + " --q 1 --seed 7 --out " + out2.string()) == 0);
    CHECK(slurp(out1 / "fit.json") == slurp(out2 / "fit.json"));
}

TEST_CASE("infer consumes fit.json and is deterministic") {
    const fs::path fit_out = fresh_dir("nmfre_cli_fit_for_infer");
    REQUIRE(run("fit" + k_orthodont + " --q 1 --seed 7 --out " + fit_out.string()) == 0);

    const fs::path inf1 = fresh_dir("nmfre_cli_inf1");
    const fs::path inf2 = fresh_dir("nmfre_cli_inf2");
    const std::string fit_path = (fit_out / "fit.json").string();
    CHECK(run("infer --fit " + fit_path + " --b 200 --seed 3 --out " + inf1.string()) == 0);
    CHECK(run("infer --fit " + fit_path + " --b 200 --seed 3 --out " + inf2.string()) == 0);
    CHECK(slurp(inf1 / "report.csv") == slurp(inf2 / "report.csv"));

    const std::string csv = slurp(inf1 / "report.csv");
    CHECK(csv.find("covariate,basis,estimate,se,bse,z,p") == 0);
    CHECK(csv.find("intercept,Basis1,90.5") != std::string::npos);
    CHECK(csv.find("male,Basis1,9.4") != std::string::npos);

    SUBCASE("degenerate B = 1 still produces a report") {
        const fs::path inf3 = fresh_dir("nmfre_cli_inf3");
        CHECK(run("infer --fit " + fit_path + " --b 1 --seed 3 --out " + inf3.string()) == 0);
        const auto rep = nlohmann::json::parse(slurp(inf3 / "report.json"));
        CHECK(rep.at("coefficients").at(0).at("bse").is_null());
    }
}

TEST_CASE("calibrate-cap reports r_max and writes the lookup table") {
    const fs::path out = fresh_dir("nmfre_cli_cal");
    CHECK(run("calibrate-cap" + k_orthodont + " --q 1 --lambda-min 0.944 --seed 1 --out " +
              out.string()) == 0);
    const auto cal = nlohmann::json::parse(slurp(out / "calibration.json"));
    CHECK(std::abs(cal.at("r_max").get<double>() - 0.21) < 0.002);
    const std::string lookup = slurp(out / "lambda_r_lookup.csv");
    CHECK(lookup.find("lambda,r") == 0);

    const fs::path out_hi = fresh_dir("nmfre_cli_cal_hi");
    CHECK(run("calibrate-cap" + k_orthodont + " --q 1 --lambda-min 1e12 --out " +
              out_hi.string()) == 0);
    const auto cal_hi = nlohmann::json::parse(slurp(out_hi / "calibration.json"));
    CHECK(cal_hi.at("r_max").get<double>() < 1e-9);

    const fs::path out_lo = fresh_dir("nmfre_cli_cal_lo");
    CHECK(run("calibrate-cap" + k_orthodont + " --q 1 --lambda-min 1e-12 --out " +
              out_lo.string()) == 0);
    const auto cal_lo = nlohmann::json::parse(slurp(out_lo / "calibration.json"));
    CHECK(cal_lo.at("r_max").get<double>() > 1.0 - 1e-9);
}

TEST_CASE("validation failures exit with code 2") {
    const fs::path bad = fs::temp_directory_path() / "nmfre_bad_y.csv";
    std::ofstream(bad) << "r,u1,u2\nv1,1,-3\n";
    const fs::path a = fs::temp_directory_path() / "nmfre_bad_a.csv";
    std::ofstream(a) << "r,u1,u2\nintercept,1,1\n";
    CHECK(run("fit --y " + bad.string() + " --a " + a.string() + " --q 1") == 2);
}

TEST_CASE("simulate writes a summary row") {
    const fs::path out = fresh_dir("nmfre_cli_sim");
    CHECK(run("simulate --n 27 --error gaussian --scenario null --cap 0.21 --r 6 --b 20 "
              "--seed 5 --threads 2 --dump-replicates --out " +
              out.string()) == 0);
    const std::string summary = slurp(out / "summary.csv");
    CHECK(summary.find("n,q,scenario,error,cap") == 0);
    CHECK(summary.find("27,1,null,gaussian,0.21") != std::string::npos);
    CHECK(fs::exists(out / "replicates.csv"));
    CHECK(fs::exists(out / "manifest_simulate.json"));
}
