#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ets {

// CSV dialect used everywhere: comma separator, '.' decimal point, values
// printed with 17 significant digits so doubles round-trip exactly.

std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;  // rows x header.size()
};

std::string to_csv(const std::vector<std::string>& header, const Eigen::MatrixXd& rows);
CsvTable parse_csv(const std::string& text, const std::string& origin = "<string>");

CsvTable read_csv_file(const std::filesystem::path& path);

// Writes via a temp file in the same directory plus rename, so readers never
// observe a partially written file.
void atomic_write_file(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

// FNV-1a 64 over the raw bytes, hex-encoded. Used for manifest input digests.
std::string file_digest(const std::filesystem::path& path);
std::string bytes_digest(const std::string& bytes);

}  // namespace ets
