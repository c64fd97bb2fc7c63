#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vaelab::io {

// Shortest representation that round-trips a double exactly (17 significant
// digits). All CSV output goes through this so reruns are byte-identical.
std::string format_double(double v);

// Minimal CSV emitter. Numeric cells use format_double.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void header(const std::vector<std::string>& names);
  void begin_row();
  void cell(double v);
  void cell(int v);
  void cell(const std::string& v);
  void end_row();
  void close();

 private:
  struct Impl;
  Impl* impl_;
};

// SHA-256 (FIPS 180-4), self-contained.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

}  // namespace vaelab::io
