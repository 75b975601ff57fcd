#include "uatmc/csv.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "uatmc/errors.hpp"

namespace uatmc {

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 digest failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int k = 0; k < len; ++k) hex += fmt::format("{:02x}", md[k]);
  return hex;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::string fmt_num(double v) {
  if (!std::isfinite(v)) return "nan";
  return fmt::format("{:.10g}", v);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != header_.size()) {
    throw ContractError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(header_.size()));
  }
  rows_.push_back(std::move(cells));
}

void CsvTable::add_note(const std::string& key, const std::string& value) {
  notes_.push_back("# " + key + ": " + value + "\n");
}

std::string CsvTable::body() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) out += ',';
      out += cells[k];
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  for (const auto& n : notes_) out += n;
  return out;
}

std::string CsvTable::str() const {
  std::string b = body();
  return b + "# checksum: sha256=" + sha256_hex(b) + "\n";
}

void CsvTable::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << str();
  if (!out) throw DataError("write failed for " + path.string());
}

bool verify_csv_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string all = ss.str();
  const std::string marker = "# checksum: sha256=";
  const auto pos = all.rfind(marker);
  if (pos == std::string::npos) return false;
  std::string digest = all.substr(pos + marker.size());
  while (!digest.empty() && (digest.back() == '\n' || digest.back() == '\r')) digest.pop_back();
  return digest == sha256_hex(std::string_view(all).substr(0, pos));
}

}  // namespace uatmc
