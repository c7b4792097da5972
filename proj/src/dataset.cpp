#include "sfda/dataset.hpp"

#include "sfda/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace sfda {

namespace {

using nlohmann::json;

std::string at_line(std::size_t line) { return " at line " + std::to_string(line); }

void require_finite(const std::vector<double>& v, std::size_t line) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DataError("non-finite value in vector" + at_line(line));
  }
}

std::vector<double> split_vector_cell(const std::string& cell, std::size_t line) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= cell.size()) {
    const std::size_t end = std::min(cell.find(';', start), cell.size());
    const std::string token = cell.substr(start, end - start);
    double value = 0.0;
    try {
      value = parse_double(token);
    } catch (const DataError&) {
      throw DataError("cannot parse vector entry '" + token + "'" + at_line(line));
    }
    out.push_back(value);
    start = end + 1;
  }
  require_finite(out, line);
  return out;
}

void check_payload(const RawRecord& r) {
  if (!r.text && !r.vector) throw DataError("neither text nor vector present" + at_line(r.line));
  if (!std::isfinite(r.timestamp)) throw DataError("non-finite timestamp" + at_line(r.line));
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

RecordFormat parse_record_format(std::string_view name) {
  if (name == "jsonl") return RecordFormat::kJsonl;
  if (name == "csv") return RecordFormat::kCsv;
  throw ConfigError("unknown record format '" + std::string(name) + "'");
}

std::vector<RawRecord> parse_records_jsonl(std::istream& in, const RecordSchema& schema) {
  std::vector<RawRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("invalid JSON" + at_line(lineno) + ": " + e.what());
    }
    if (!obj.is_object()) throw DataError("expected a JSON object" + at_line(lineno));

    RawRecord r;
    r.line = lineno;
    auto sid = obj.find(schema.subject_key);
    if (sid == obj.end() || sid->is_null()) throw DataError("missing subject_id" + at_line(lineno));
    r.subject_id = sid->is_string() ? sid->get<std::string>() : sid->dump();

    auto ts = obj.find(schema.timestamp_key);
    if (ts == obj.end() || ts->is_null()) throw DataError("missing timestamp" + at_line(lineno));
    if (!ts->is_number()) throw DataError("timestamp is not a number" + at_line(lineno));
    r.timestamp = ts->get<double>();

    if (auto tx = obj.find(schema.text_key); tx != obj.end() && !tx->is_null()) {
      if (!tx->is_string()) throw DataError("text is not a string" + at_line(lineno));
      r.text = tx->get<std::string>();
    }
    if (auto vec = obj.find(schema.vector_key); vec != obj.end() && !vec->is_null()) {
      if (!vec->is_array()) throw DataError("vector is not an array" + at_line(lineno));
      std::vector<double> v;
      for (const auto& x : *vec) {
        if (!x.is_number()) throw DataError("non-finite value in vector" + at_line(lineno));
        v.push_back(x.get<double>());
      }
      require_finite(v, lineno);
      r.vector = std::move(v);
    }
    if (auto md = obj.find(schema.metadata_key); md != obj.end() && md->is_object()) {
      for (auto it = md->begin(); it != md->end(); ++it) {
        r.metadata[it.key()] = it->is_string() ? it->get<std::string>() : it->dump();
      }
    }
    check_payload(r);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<RawRecord> parse_records_csv(std::istream& in, const RecordSchema& schema) {
  const auto rows = read_csv(in);
  if (rows.empty()) return {};
  const auto& header = rows.front().fields;
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;

  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = col.find(name);
    if (it == col.end()) return std::nullopt;
    return it->second;
  };
  const auto sid_col = find(schema.subject_key);
  const auto ts_col = find(schema.timestamp_key);
  if (!sid_col) throw DataError("csv header lacks '" + schema.subject_key + "'");
  if (!ts_col) throw DataError("csv header lacks '" + schema.timestamp_key + "'");
  const auto text_col = find(schema.text_key);
  const auto vec_col = find(schema.vector_key);

  std::vector<std::size_t> v_cols;
  for (std::size_t k = 1;; ++k) {
    auto c = find(schema.vector_prefix + std::to_string(k));
    if (!c) break;
    v_cols.push_back(*c);
  }
  std::vector<bool> reserved(header.size(), false);
  for (auto c : {sid_col, ts_col, text_col, vec_col}) {
    if (c) reserved[*c] = true;
  }
  for (auto c : v_cols) reserved[c] = true;

  std::vector<RawRecord> records;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t lineno = row.line;
    if (row.fields.size() != header.size()) {
      throw DataError("expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(row.fields.size()) + at_line(lineno));
    }
    RawRecord rec;
    rec.line = lineno;
    rec.subject_id = row.fields[*sid_col];
    if (rec.subject_id.empty()) throw DataError("missing subject_id" + at_line(lineno));
    const std::string& ts = row.fields[*ts_col];
    if (ts.empty()) throw DataError("missing timestamp" + at_line(lineno));
    try {
      rec.timestamp = parse_double(ts);
    } catch (const DataError&) {
      throw DataError("cannot parse timestamp '" + ts + "'" + at_line(lineno));
    }
    if (text_col && !row.fields[*text_col].empty()) rec.text = row.fields[*text_col];
    if (vec_col && !row.fields[*vec_col].empty()) {
      rec.vector = split_vector_cell(row.fields[*vec_col], lineno);
    } else if (!v_cols.empty()) {
      std::vector<double> v;
      bool any = false;
      for (auto c : v_cols) {
        const auto& cell = row.fields[c];
        if (cell.empty()) continue;
        any = true;
        try {
          v.push_back(parse_double(cell));
        } catch (const DataError&) {
          throw DataError("cannot parse vector entry '" + cell + "'" + at_line(lineno));
        }
      }
      if (any) {
        if (v.size() != v_cols.size()) throw DataError("incomplete vector" + at_line(lineno));
        require_finite(v, lineno);
        rec.vector = std::move(v);
      }
    }
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (!reserved[c] && !row.fields[c].empty()) rec.metadata[header[c]] = row.fields[c];
    }
    check_payload(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<RawRecord> load_records(const std::filesystem::path& path, RecordFormat format,
                                    const RecordSchema& schema) {
  auto in = open_or_throw(path);
  return format == RecordFormat::kJsonl ? parse_records_jsonl(in, schema)
                                        : parse_records_csv(in, schema);
}

CovariateTable parse_covariates_csv(std::istream& in) {
  const auto rows = read_csv(in);
  CovariateTable table;
  if (rows.empty()) return table;
  const auto& header = rows.front().fields;
  if (header.empty() || header[0] != "subject_id") {
    throw DataError("covariates csv must start with a subject_id column");
  }
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (header[c] != "z" + std::to_string(c)) {
      throw DataError("covariate column " + std::to_string(c) + " must be named z" +
                      std::to_string(c));
    }
  }
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != header.size()) {
      throw DataError("covariate row width mismatch" + at_line(row.line));
    }
    std::vector<double> z;
    for (std::size_t c = 1; c < row.fields.size(); ++c) {
      const double v = parse_double(row.fields[c]);
      if (!std::isfinite(v)) throw DataError("non-finite covariate" + at_line(row.line));
      z.push_back(v);
    }
    if (!table.emplace(row.fields[0], std::move(z)).second) {
      throw DataError("duplicate covariate row for '" + row.fields[0] + "'" + at_line(row.line));
    }
  }
  return table;
}

CovariateTable load_covariates(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_covariates_csv(in);
}

bool SubjectTrajectory::needs_embedding() const {
  return std::any_of(records.begin(), records.end(), [](const Observation& o) { return o.y.empty(); });
}

std::size_t Dataset::record_count() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.size();
  return n;
}

bool Dataset::needs_embedding() const {
  return std::any_of(subjects.begin(), subjects.end(),
                     [](const SubjectTrajectory& s) { return s.needs_embedding(); });
}

std::size_t Dataset::index_of(const std::string& subject_id) const {
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (subjects[i].subject_id == subject_id) return i;
  }
  throw DataError("unknown subject '" + subject_id + "'");
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.p = p;
  out.q = q;
  out.t_min = t_min;
  out.t_max = t_max;
  out.subjects.reserve(indices.size());
  for (auto i : indices) out.subjects.push_back(subjects.at(i));
  return out;
}

Dataset build_dataset(const std::vector<RawRecord>& records, const CovariateTable& covariates) {
  Dataset ds;
  std::unordered_map<std::string, std::size_t> slot;
  std::optional<std::size_t> p;
  std::string p_owner;

  for (const auto& r : records) {
    if (r.vector) {
      if (!p) {
        p = r.vector->size();
        p_owner = r.subject_id;
      } else if (*p != r.vector->size()) {
        throw DataError("inconsistent vector lengths: subject '" + r.subject_id + "' has " +
                        std::to_string(r.vector->size()) + ", subject '" + p_owner + "' has " +
                        std::to_string(*p));
      }
    }
    auto [it, inserted] = slot.emplace(r.subject_id, ds.subjects.size());
    if (inserted) {
      ds.subjects.push_back(SubjectTrajectory{r.subject_id, {}, {}});
    }
    Observation o;
    o.t = r.timestamp;
    if (r.vector) o.y = *r.vector;
    o.text = r.text;
    o.metadata = r.metadata;
    ds.subjects[it->second].records.push_back(std::move(o));
  }
  ds.p = p.value_or(0);

  std::optional<std::size_t> q;
  if (!covariates.empty()) q = covariates.begin()->second.size();
  ds.q = q.value_or(0);
  for (auto& s : ds.subjects) {
    std::stable_sort(s.records.begin(), s.records.end(),
                     [](const Observation& a, const Observation& b) { return a.t < b.t; });
    if (ds.q > 0) {
      auto it = covariates.find(s.subject_id);
      if (it == covariates.end()) throw DataError("no covariates for subject '" + s.subject_id + "'");
      if (it->second.size() != ds.q) {
        throw DataError("covariate length mismatch for subject '" + s.subject_id + "'");
      }
      s.covariates = it->second;
    }
  }
  for (const auto& [id, z] : covariates) {
    if (z.size() != ds.q) throw DataError("covariate length mismatch for subject '" + id + "'");
  }

  ds.t_min = std::numeric_limits<double>::infinity();
  ds.t_max = -std::numeric_limits<double>::infinity();
  for (const auto& s : ds.subjects) {
    ds.t_min = std::min(ds.t_min, s.records.front().t);
    ds.t_max = std::max(ds.t_max, s.records.back().t);
  }
  if (ds.subjects.empty()) {
    ds.t_min = ds.t_max = 0.0;
  }
  return ds;
}

}  // namespace sfda
