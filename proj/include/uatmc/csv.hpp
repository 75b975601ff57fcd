#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace uatmc {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Formats a double for CSV output; "nan" for non-finite values.
std::string fmt_num(double v);

// In-memory CSV with a header row and a trailing `# checksum: sha256=<hex>`
// line covering every byte before it.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> cells);
  // `# key: value` line written after the rows, covered by the checksum.
  void add_note(const std::string& key, const std::string& value);
  std::size_t rows() const { return rows_.size(); }
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& data() const { return rows_; }

  std::string body() const;
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::string> notes_;
};

// Checks the trailing checksum line of a CSV written by CsvTable.
bool verify_csv_checksum(const std::filesystem::path& path);

}  // namespace uatmc
