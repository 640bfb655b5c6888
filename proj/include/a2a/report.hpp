#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace a2a {

// Canonical number formatting for reports (shortest round-trip, stable
// across runs so reruns produce byte-identical files).
std::string format_double(double v);

// FNV-1a 64-bit hex digest; embedded in study reports as the config hash.
std::string fnv1a_hex(const std::string& text);

// Minimal CSV writer: quotes only when needed, '\n' line endings.
class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> header);
    void add_row(std::vector<std::string> cells);
    std::string str() const;
    void write_file(const std::string& path) const;

  private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace a2a
