#include "nmfre/data_model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace nmfre {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_cell(const std::string& cell, const std::string& path, std::size_t row,
                  std::size_t col) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(cell, &pos);
    } catch (const std::exception&) {
        throw ParseError(path + ": cannot parse numeric cell at row " + std::to_string(row) +
                         ", column " + std::to_string(col) + ": '" + cell + "'");
    }
    while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
    if (pos != cell.size()) {
        throw ParseError(path + ": trailing characters in numeric cell at row " +
                         std::to_string(row) + ", column " + std::to_string(col));
    }
    return v;
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

LabeledMatrix load_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    auto header = split_csv_line(line);
    if (header.size() < 2) throw ParseError(path + ": header must list at least one column");

    LabeledMatrix m;
    m.col_labels.assign(header.begin() + 1, header.end());
    const std::size_t ncol = m.col_labels.size();

    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != ncol + 1) {
            throw ParseError(path + ": row " + std::to_string(lineno) + " has " +
                             std::to_string(cells.size() ? cells.size() - 1 : 0) +
                             " values, expected " + std::to_string(ncol));
        }
        m.row_labels.push_back(cells[0]);
        std::vector<double> vals(ncol);
        for (std::size_t j = 0; j < ncol; ++j) vals[j] = parse_cell(cells[j + 1], path, lineno, j + 1);
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw ParseError(path + ": no data rows");

    m.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ncol));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < ncol; ++j)
            m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return m;
}

void write_matrix_csv(const std::string& path, const Matrix& values,
                      const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels) {
    if (static_cast<Eigen::Index>(row_labels.size()) != values.rows() ||
        static_cast<Eigen::Index>(col_labels.size()) != values.cols()) {
        throw DimensionMismatch("write_matrix_csv: label counts do not match matrix shape");
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "row";
    for (const auto& c : col_labels) out << ',' << c;
    out << '\n';
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        out << row_labels[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < values.cols(); ++j) out << ',' << format_value(values(i, j));
        out << '\n';
    }
}

void validate_dataset(const DataSet& data) {
    if (data.Y.rows() < 1 || data.Y.cols() < 1) throw DimensionMismatch("Y must be at least 1x1");
    if (data.A.rows() < 1) throw DimensionMismatch("A must have at least one covariate row");
    if (data.A.cols() != data.Y.cols()) {
        throw DimensionMismatch("Y has " + std::to_string(data.Y.cols()) + " columns but A has " +
                                std::to_string(data.A.cols()));
    }
    if (!data.Y.allFinite()) throw NonFinite("Y contains NaN or infinite entries");
    if (!data.A.allFinite()) throw NonFinite("A contains NaN or infinite entries");
    for (Eigen::Index j = 0; j < data.Y.cols(); ++j)
        for (Eigen::Index i = 0; i < data.Y.rows(); ++i)
            if (data.Y(i, j) < 0.0) {
                throw NegativeData("Y(" + std::to_string(i) + "," + std::to_string(j) +
                                   ") = " + std::to_string(data.Y(i, j)) + " is negative");
            }
}

DataSet load_dataset(const std::string& path_y, const std::string& path_a) {
    LabeledMatrix y = load_matrix_csv(path_y);
    LabeledMatrix a = load_matrix_csv(path_a);
    DataSet data;
    data.Y = std::move(y.values);
    data.A = std::move(a.values);
    data.row_labels_y = std::move(y.row_labels);
    data.row_labels_a = std::move(a.row_labels);
    data.col_labels = std::move(y.col_labels);
    validate_dataset(data);
    return data;
}

void write_dataset(const DataSet& data, const std::string& path_y, const std::string& path_a) {
    write_matrix_csv(path_y, data.Y, data.row_labels_y, data.col_labels);
    write_matrix_csv(path_a, data.A, data.row_labels_a, data.col_labels);
}

std::pair<Vector, Vector> expand_signed_covariate(const Vector& row) {
    if (!row.allFinite()) throw NonFinite("covariate row contains NaN or infinite entries");
    Vector plus = row.cwiseMax(0.0);
    Vector minus = (-row).cwiseMax(0.0);
    return {plus, minus};
}

std::vector<std::string> validate_params(const ModelParams& p) {
    std::vector<std::string> issues;
    for (Eigen::Index j = 0; j < p.X.cols(); ++j)
        for (Eigen::Index i = 0; i < p.X.rows(); ++i)
            if (p.X(i, j) < 0.0) {
                issues.push_back("X(" + std::to_string(i) + "," + std::to_string(j) + ") < 0");
            }
    for (Eigen::Index j = 0; j < p.Theta.cols(); ++j)
        for (Eigen::Index i = 0; i < p.Theta.rows(); ++i)
            if (p.Theta(i, j) < 0.0) {
                issues.push_back("Theta(" + std::to_string(i) + "," + std::to_string(j) + ") < 0");
            }
    for (Eigen::Index j = 0; j < p.X.cols(); ++j) {
        const double s = p.X.col(j).sum();
        if (std::abs(s - 1.0) > k_column_sum_tol) {
            issues.push_back("X column " + std::to_string(j) + " sums to " + std::to_string(s) +
                             ", expected 1");
        }
    }
    for (Eigen::Index i = 0; i < p.U.rows(); ++i) {
        if (p.U.cols() == 0) break;
        const double m = p.U.row(i).mean();
        if (std::abs(m) > k_row_center_tol) {
            issues.push_back("U row " + std::to_string(i) + " has mean " + std::to_string(m) +
                             ", expected 0");
        }
    }
    if (!(p.lambda > 0.0)) issues.push_back("lambda must be positive");
    return issues;
}

void validate_fit_config(const FitConfig& cfg) {
    if (cfg.q < 1) throw Error("fit config: q must be >= 1");
    if (!(cfg.lambda_init > 0.0)) throw Error("fit config: lambda_init must be positive");
    if (cfg.cap_enabled() && cfg.cap_ratio > 1.0) throw Error("fit config: cap_ratio must lie in (0,1]");
    if (!(cfg.tol > 0.0)) throw Error("fit config: tol must be positive");
    if (cfg.maxit < 1) throw Error("fit config: maxit must be >= 1");
    if (cfg.n_restarts < 1) throw Error("fit config: n_restarts must be >= 1");
    if (cfg.warm_start.freeze_iters < 0) throw Error("fit config: freeze_iters must be >= 0");
    if (!(cfg.warm_start.ema_rate > 0.0 && cfg.warm_start.ema_rate <= 1.0))
        throw Error("fit config: ema_rate must lie in (0,1]");
    if (!(cfg.damping_eta > 0.0 && cfg.damping_eta <= 1.0))
        throw Error("fit config: damping_eta must lie in (0,1]");
}

FitConfig fit_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("fit config: ") + e.what());
    }
    FitConfig cfg;
    try {
        if (j.contains("q")) cfg.q = j.at("q").get<int>();
        if (j.contains("lambda_init")) cfg.lambda_init = j.at("lambda_init").get<double>();
        if (j.contains("cap_ratio")) {
            cfg.cap_ratio = j.at("cap_ratio").is_null() ? -1.0 : j.at("cap_ratio").get<double>();
        }
        if (j.contains("tol")) cfg.tol = j.at("tol").get<double>();
        if (j.contains("maxit")) cfg.maxit = j.at("maxit").get<int>();
        if (j.contains("n_restarts")) cfg.n_restarts = j.at("n_restarts").get<int>();
        if (j.contains("rng_seed")) cfg.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        if (j.contains("warm_start")) {
            const auto& w = j.at("warm_start");
            if (w.contains("freeze_iters")) cfg.warm_start.freeze_iters = w.at("freeze_iters").get<int>();
            if (w.contains("ema_rate")) cfg.warm_start.ema_rate = w.at("ema_rate").get<double>();
        }
        if (j.contains("damping_eta")) cfg.damping_eta = j.at("damping_eta").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("fit config: ") + e.what());
    }
    validate_fit_config(cfg);
    return cfg;
}

std::string fit_config_to_json(const FitConfig& cfg) {
    nlohmann::json j;
    j["q"] = cfg.q;
    j["lambda_init"] = cfg.lambda_init;
    if (cfg.cap_enabled())
        j["cap_ratio"] = cfg.cap_ratio;
    else
        j["cap_ratio"] = nullptr;
    j["tol"] = cfg.tol;
    j["maxit"] = cfg.maxit;
    j["n_restarts"] = cfg.n_restarts;
    j["rng_seed"] = cfg.rng_seed;
    j["warm_start"] = {{"freeze_iters", cfg.warm_start.freeze_iters},
                       {"ema_rate", cfg.warm_start.ema_rate}};
    j["damping_eta"] = cfg.damping_eta;
    return j.dump(2);
}

}  // namespace nmfre
