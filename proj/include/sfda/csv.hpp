#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace sfda {

struct CsvRow {
  std::size_t line = 0;  // 1-based physical line where the row starts
  std::vector<std::string> fields;
};

/// RFC-4180 reader: quoted fields, doubled quotes, embedded newlines, CRLF.
std::vector<CsvRow> read_csv(std::istream& in);

/// Quotes a field only when it contains a comma, quote, CR or LF.
std::string csv_escape(const std::string& field);

/// Accumulates an RFC-4180 document in memory; written out in one go so that
/// byte-level output only depends on the rows appended.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  void row(const std::vector<std::string>& fields);
  const std::string& str() const { return buffer_; }
  std::size_t rows() const { return rows_; }

 private:
  std::size_t width_;
  std::size_t rows_ = 0;
  std::string buffer_;
};

}  // namespace sfda
