#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace siren::io {

// Raised when a metrics file cannot be opened, written or flushed (for
// example when the disk is full).
class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CsvSchema {
    std::string name;
    std::vector<std::string> columns;
};

const CsvSchema& loss_schema();    // step,layer,ce
const CsvSchema& reward_schema();  // step,mean_reward,std_reward,retained_fraction

// Time-series CSV with a fixed header. Rows are flushed at least every
// `flush_every` records and on close. In append mode an existing non-empty
// file keeps its rows and header.
class CsvSink {
public:
    CsvSink(const std::string& path, CsvSchema schema, int flush_every = 50, bool append = false);
    ~CsvSink();
    CsvSink(const CsvSink&) = delete;
    CsvSink& operator=(const CsvSink&) = delete;

    void write(const std::vector<double>& row);
    void close();
    int64_t rows() const { return rows_; }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    CsvSchema schema_;
    int flush_every_;
    int pending_ = 0;
    int64_t rows_ = 0;
    std::ofstream out_;

    void flush();
};

std::vector<std::vector<double>> read_csv(const std::string& path, const CsvSchema& schema);

// Atomic JSON write: temporary file then rename.
void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

}  // namespace siren::io
