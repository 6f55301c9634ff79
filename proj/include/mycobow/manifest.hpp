#pragma once

#include <array>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "mycobow/error.hpp"
#include "mycobow/species.hpp"

namespace mycobow {

struct ScanRecord {
  std::string scan_id;
  Species species = Species::CA;
  int preparation = 1;
  int image_index = 0;
  std::string path;

  bool operator==(const ScanRecord&) const = default;
};

struct DatasetSummary {
  std::array<std::size_t, kNumSpecies> per_species{};
  std::array<std::size_t, 2> per_preparation{};  // preparations 1 and 2
  std::size_t total = 0;

  std::size_t species_present() const {
    std::size_t n = 0;
    for (auto c : per_species) n += c > 0 ? 1 : 0;
    return n;
  }
  std::size_t preparations_present() const {
    return (per_preparation[0] > 0 ? 1 : 0) + (per_preparation[1] > 0 ? 1 : 0);
  }
};

namespace detail {

inline std::string located(std::size_t line, const std::string& msg) {
  return "manifest line " + std::to_string(line) + ": " + msg;
}

inline bool blank_or_comment(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

}  // namespace detail

/// Parse a manifest: one JSON object per line with the fields
/// scan_id, species, preparation, image_index and path. Blank lines and lines
/// whose first non-blank character is '#' are skipped. Errors carry the line
/// number.
inline std::vector<ScanRecord> parse_manifest(const std::string& text) {
  using nlohmann::json;
  std::vector<ScanRecord> records;
  std::set<std::tuple<Species, int, int>> seen_keys;
  std::set<std::string> seen_ids;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank_or_comment(line)) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw data_error(detail::located(line_no, std::string("malformed record: ") + e.what()));
    }
    if (!obj.is_object()) throw data_error(detail::located(line_no, "malformed record: not an object"));
    for (const char* key : {"scan_id", "species", "preparation", "image_index", "path"}) {
      if (!obj.contains(key)) {
        throw data_error(detail::located(line_no, std::string("malformed record: missing field '") + key + "'"));
      }
    }
    const auto& sid = obj["scan_id"];
    const auto& sp = obj["species"];
    const auto& prep = obj["preparation"];
    const auto& idx = obj["image_index"];
    const auto& path = obj["path"];
    if (!sid.is_string() || !sp.is_string() || !path.is_string() || !prep.is_number_integer() ||
        !idx.is_number_integer()) {
      throw data_error(detail::located(line_no, "malformed record: wrong field type"));
    }
    ScanRecord r;
    r.scan_id = sid.get<std::string>();
    const auto code = sp.get<std::string>();
    auto species = try_parse_species(code);
    if (!species) throw data_error(detail::located(line_no, "unknown species code '" + code + "'"));
    r.species = *species;
    const auto p = prep.get<long long>();
    if (p != 1 && p != 2) {
      throw data_error(detail::located(line_no, "preparation must be 1 or 2, got " + std::to_string(p)));
    }
    r.preparation = static_cast<int>(p);
    const auto ii = idx.get<long long>();
    if (ii < 0) throw data_error(detail::located(line_no, "image_index must be >= 0"));
    r.image_index = static_cast<int>(ii);
    r.path = path.get<std::string>();
    if (r.scan_id.empty()) throw data_error(detail::located(line_no, "empty scan_id"));
    if (!seen_ids.insert(r.scan_id).second) {
      throw data_error(detail::located(line_no, "duplicate scan_id '" + r.scan_id + "'"));
    }
    if (!seen_keys.emplace(r.species, r.preparation, r.image_index).second) {
      throw data_error(detail::located(line_no, "duplicate (species, preparation, image_index) = (" + code + ", " +
                                                    std::to_string(r.preparation) + ", " +
                                                    std::to_string(r.image_index) + ")"));
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<ScanRecord> load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open manifest '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_manifest(buf.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

inline std::string format_manifest_line(const ScanRecord& r) {
  nlohmann::ordered_json obj;
  obj["scan_id"] = r.scan_id;
  obj["species"] = std::string(code_of(r.species));
  obj["preparation"] = r.preparation;
  obj["image_index"] = r.image_index;
  obj["path"] = r.path;
  return obj.dump();
}

inline std::string format_manifest(const std::vector<ScanRecord>& records) {
  std::string out = "# scan manifest: one record per line\n";
  for (const auto& r : records) out += format_manifest_line(r) + "\n";
  return out;
}

inline DatasetSummary summarize(const std::vector<ScanRecord>& records) {
  DatasetSummary s;
  for (const auto& r : records) {
    ++s.per_species[index_of(r.species)];
    ++s.per_preparation[static_cast<std::size_t>(r.preparation - 1)];
    ++s.total;
  }
  return s;
}

/// "180 scans, 9 species, 2 preparations"
inline std::string summary_line(const DatasetSummary& s) {
  return std::to_string(s.total) + " scans, " + std::to_string(s.species_present()) + " species, " +
         std::to_string(s.preparations_present()) + " preparations";
}

}  // namespace mycobow
