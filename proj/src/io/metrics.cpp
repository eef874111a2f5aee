#include "siren/io/metrics.h"

#include <cstdio>
#include <filesystem>
#include <sstream>

namespace siren::io {

const CsvSchema& loss_schema() {
    static const CsvSchema s{"loss", {"step", "layer", "ce"}};
    return s;
}

const CsvSchema& reward_schema() {
    static const CsvSchema s{"reward", {"step", "mean_reward", "std_reward", "retained_fraction"}};
    return s;
}

CsvSink::CsvSink(const std::string& path, CsvSchema schema, int flush_every, bool append)
    : path_(path), schema_(std::move(schema)), flush_every_(flush_every) {
    if (flush_every_ < 1 || flush_every_ > 50) {
        throw std::invalid_argument("csv flush period must lie in [1, 50]");
    }
    std::error_code ec;
    const bool keep = append && std::filesystem::exists(path_, ec) && std::filesystem::file_size(path_, ec) > 0;
    out_.open(path_, keep ? std::ios::out | std::ios::app : std::ios::out | std::ios::trunc);
    if (!out_) {
        throw MetricsError("cannot open metrics file '" + path_ + "'");
    }
    out_.precision(9);
    if (keep) {
        return;
    }
    for (size_t i = 0; i < schema_.columns.size(); ++i) {
        out_ << (i ? "," : "") << schema_.columns[i];
    }
    out_ << '\n';
    flush();
}

CsvSink::~CsvSink() {
    try {
        close();
    } catch (const MetricsError&) {
    }
}

void CsvSink::write(const std::vector<double>& row) {
    if (!out_.is_open()) {
        throw MetricsError("metrics file '" + path_ + "' is closed");
    }
    if (row.size() != schema_.columns.size()) {
        throw std::invalid_argument(schema_.name + " record has " + std::to_string(row.size()) + " fields, expected " +
                                    std::to_string(schema_.columns.size()));
    }
    for (size_t i = 0; i < row.size(); ++i) {
        out_ << (i ? "," : "") << row[i];
    }
    out_ << '\n';
    ++rows_;
    if (++pending_ >= flush_every_) {
        flush();
    }
}

void CsvSink::flush() {
    out_.flush();
    if (!out_) {
        throw MetricsError("write to '" + path_ + "' failed (disk full or device error)");
    }
    pending_ = 0;
}

void CsvSink::close() {
    if (!out_.is_open()) {
        return;
    }
    flush();
    out_.close();
    if (!out_) {
        throw MetricsError("closing '" + path_ + "' failed");
    }
}

std::vector<std::vector<double>> read_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) {
        throw MetricsError("cannot read metrics file '" + path + "'");
    }
    std::string line;
    std::getline(in, line);
    std::string expected;
    for (size_t i = 0; i < schema.columns.size(); ++i) {
        expected += (i ? "," : "") + schema.columns[i];
    }
    if (line != expected) {
        throw MetricsError("'" + path + "' header is '" + line + "', expected '" + expected + "'");
    }
    std::vector<std::vector<double>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw MetricsError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
            }
        }
        if (row.size() != schema.columns.size()) {
            throw MetricsError(path + ":" + std::to_string(lineno) + ": wrong field count");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::out | std::ios::trunc);
        if (!out) {
            throw MetricsError("cannot open '" + tmp + "'");
        }
        out << j.dump(2) << '\n';
        out.flush();
        if (!out) {
            throw MetricsError("write to '" + tmp + "' failed (disk full or device error)");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw MetricsError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
    }
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw MetricsError("cannot read '" + path + "'");
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw MetricsError("'" + path + "' is not valid JSON: " + e.what());
    }
}

}  // namespace siren::io
