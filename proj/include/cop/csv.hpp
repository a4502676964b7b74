#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cop::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row

  std::optional<std::size_t> column(std::string_view name) const;
};

// RFC 4180 subset: comma separated, double-quote quoting, header row required.
Table read(std::istream& in);
Table read_file(const std::filesystem::path& path);

std::string escape(std::string_view field);

// Shortest representation that parses back to the same double.
std::string format(double value);
std::string format(const std::optional<double>& value);

class Writer {
 public:
  explicit Writer(std::vector<std::string> header);
  void row(const std::vector<std::string>& fields);
  const std::string& str() const noexcept { return buffer_; }

 private:
  std::size_t width_;
  std::string buffer_;
};

// Writes via a sibling temp file and rename so readers never see a partial file.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_text(const std::filesystem::path& path);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex(std::uint64_t value);

}  // namespace cop::csv
