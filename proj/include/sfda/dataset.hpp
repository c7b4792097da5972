#pragma once

#include "sfda/common.hpp"

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sfda {

/// One input row: a time-stamped text and/or numeric vector for a subject.
struct RawRecord {
  std::string subject_id;
  double timestamp = 0.0;
  std::optional<std::string> text;
  std::optional<std::vector<double>> vector;
  std::map<std::string, std::string> metadata;
  std::size_t line = 0;  // source line, 1-based
};

enum class RecordFormat { kJsonl, kCsv };

RecordFormat parse_record_format(std::string_view name);

/// Column / key names. CSV vectors are read either from `vector_key`
/// (semicolon-separated) or from columns `<vector_prefix>1..p`.
struct RecordSchema {
  std::string subject_key = "subject_id";
  std::string timestamp_key = "timestamp";
  std::string text_key = "text";
  std::string vector_key = "vector";
  std::string vector_prefix = "v";
  std::string metadata_key = "metadata";
};

std::vector<RawRecord> load_records(const std::filesystem::path& path, RecordFormat format,
                                    const RecordSchema& schema = {});
std::vector<RawRecord> parse_records_jsonl(std::istream& in, const RecordSchema& schema = {});
std::vector<RawRecord> parse_records_csv(std::istream& in, const RecordSchema& schema = {});

using CovariateTable = std::map<std::string, std::vector<double>>;

/// Covariates CSV: subject_id, z1..zq.
CovariateTable load_covariates(const std::filesystem::path& path);
CovariateTable parse_covariates_csv(std::istream& in);

struct Observation {
  double t = 0.0;
  std::vector<double> y;  // empty until embedded when only text was supplied
  std::optional<std::string> text;
  std::map<std::string, std::string> metadata;
};

struct SubjectTrajectory {
  std::string subject_id;
  std::vector<Observation> records;  // stable-sorted by t
  std::vector<double> covariates;

  bool needs_embedding() const;
  std::size_t size() const { return records.size(); }
};

/// Canonical sparse longitudinal dataset. Treated as immutable once built.
struct Dataset {
  std::vector<SubjectTrajectory> subjects;  // ordered by first appearance
  std::size_t p = 0;
  std::size_t q = 0;
  double t_min = 0.0;
  double t_max = 0.0;

  std::size_t size() const { return subjects.size(); }
  std::size_t record_count() const;
  bool needs_embedding() const;
  /// Index of a subject id; throws DataError when unknown.
  std::size_t index_of(const std::string& subject_id) const;
  /// Copy restricted to the given subject indices (in that order); keeps the
  /// parent time domain so that all sub-fits share one grid.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

Dataset build_dataset(const std::vector<RawRecord>& records, const CovariateTable& covariates = {});

}  // namespace sfda
