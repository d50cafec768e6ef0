#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cbbreg/inference.hpp"
#include "cbbreg/regression.hpp"
#include "cbbreg/simulation.hpp"

namespace cbbreg {

/// Column layout of a CSV input. Trials come either from a column or from a
/// constant shared by every row.
struct CsvSchema {
  std::string response_column;
  std::optional<std::string> trials_column;
  std::optional<std::int64_t> trials_constant;
  /// Columns read as covariates; others are ignored.
  std::vector<std::string> covariate_columns;
  char delimiter = ',';
  /// Without a header, columns are named V1, V2, ….
  bool header = true;

  void validate() const;
};

/// Error in an input file; `line()` is the 1-based line of the offending record (0 if none).
class InputError : public std::runtime_error {
 public:
  InputError(const std::string& message, std::size_t line)
      : std::runtime_error(message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// RFC 4180 records: quoted fields, doubled quotes, CRLF or LF line ends.
/// Each record carries the line number it starts on.
struct CsvRecord {
  std::size_t line = 0;
  std::vector<std::string> fields;
};
std::vector<CsvRecord> parse_csv(std::string_view text, char delimiter = ',');

/// Numeric covariates are read as-is. A column with any non-numeric value is
/// categorical and expands to indicator columns "name[level]" for every level
/// but the first in sorted order.
Dataset parse_dataset(std::string_view text, const CsvSchema& schema,
                      const std::string& source = "<input>");
Dataset read_dataset(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes y, m and the covariate columns with round-trip precision.
void write_dataset(const Dataset& data, const std::filesystem::path& path, char delimiter = ',');

enum class ReportFormat { json, table };
ReportFormat parse_format(std::string_view text);

std::string render_report(const FitResult& fit, const InferenceReport& report, ReportFormat format,
                          const ModelComparison* comparison = nullptr);
void write_report(const FitResult& fit, const InferenceReport& report,
                  const std::filesystem::path& path, ReportFormat format,
                  const ModelComparison* comparison = nullptr);

std::string render_comparison(const ModelComparison& comparison);
std::string render_study(const StudyReport& study, ReportFormat format);

/// Writes `text` to `path`, or to standard output when `path` is empty or "-".
void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace cbbreg
