#include "mammo/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mammo/csv.hpp"
#include "mammo/dicom.hpp"
#include "mammo/error.hpp"
#include "mammo/hash.hpp"

namespace fs = std::filesystem;

namespace mammo {

namespace {

std::string lower(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

// Lowercase with spaces, dashes and underscores removed.
std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == ' ' || c == '-' || c == '_') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::optional<int> parse_int(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  int v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{}) return std::nullopt;
  if (ptr != t.data() + t.size()) {
    // "45.0" style ages from spreadsheet exports
    double d = 0.0;
    const auto [p2, e2] = std::from_chars(t.data(), t.data() + t.size(), d);
    if (e2 != std::errc{} || p2 != t.data() + t.size()) return std::nullopt;
    return static_cast<int>(d);
  }
  return v;
}

struct Finding {
  bool calcification = false;
  bool mass = false;
};

std::optional<Finding> parse_finding(std::string_view s) {
  const std::string t = lower(trim(s));
  Finding f;
  if (t == "both") return Finding{true, true};
  f.calcification = t.find("calc") != std::string::npos;
  f.mass = t.find("mass") != std::string::npos;
  if (!f.calcification && !f.mass) return std::nullopt;
  return f;
}

// Column aliases: manifest-style names and the CMMD clinical sheet names.
const std::vector<std::pair<std::string, std::vector<std::string>>>& clinical_columns() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> cols = {
      {"patient_id", {"patientid", "id1", "id", "patient"}},
      {"laterality", {"laterality", "leftright", "side"}},
      {"age", {"age"}},
      {"abnormality", {"abnormality", "finding", "abnormalitytype"}},
      {"pathology", {"pathology", "classification"}},
      {"subtype", {"subtype", "molecularsubtype"}},
  };
  return cols;
}

struct ClinicalRow {
  std::string patient_id;
  Laterality laterality = Laterality::Left;
  std::optional<int> age;
  Finding finding;
  Pathology pathology = Pathology::Benign;
  Subtype subtype = Subtype::Unlabeled;
  std::size_t line = 0;
};

std::vector<ClinicalRow> read_clinical(const fs::path& table, std::vector<std::string>& warnings) {
  const auto rows = csv::read_file(table);
  if (rows.empty()) throw Error(ErrorCode::SchemaMismatch, table.string() + ": empty clinical table");
  std::map<std::string, std::size_t> index;
  for (const auto& [name, aliases] : clinical_columns()) {
    for (std::size_t c = 0; c < rows[0].size() && !index.count(name); ++c) {
      const std::string h = squash(rows[0][c]);
      if (std::find(aliases.begin(), aliases.end(), h) != aliases.end()) index[name] = c;
    }
    if (!index.count(name)) {
      throw Error(ErrorCode::SchemaMismatch, table.string() + ": missing required column '" + name + "'");
    }
  }

  std::vector<ClinicalRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    auto cell = [&](const std::string& name) -> std::string {
      const std::size_t c = index.at(name);
      return c < row.size() ? trim(row[c]) : std::string();
    };
    const std::string where = table.filename().string() + " line " + std::to_string(i + 1);
    ClinicalRow r;
    r.line = i + 1;
    r.patient_id = cell("patient_id");
    if (r.patient_id.empty()) {
      warnings.push_back(where + ": empty patient id, row skipped");
      continue;
    }
    const auto lat = parse_laterality(cell("laterality"));
    const auto finding = parse_finding(cell("abnormality"));
    const auto path = parse_pathology(cell("pathology"));
    const std::string sub_text = cell("subtype");
    const auto sub = sub_text.empty() ? std::optional<Subtype>(Subtype::Unlabeled) : parse_subtype(sub_text);
    if (!lat || !finding || !path || !sub) {
      warnings.push_back(where + ": unparseable laterality/abnormality/pathology/subtype, row skipped");
      continue;
    }
    if (*sub != Subtype::Unlabeled && *path != Pathology::Malignant) {
      warnings.push_back(where + ": subtype given for a benign finding, row excluded");
      continue;
    }
    r.laterality = *lat;
    r.finding = *finding;
    r.pathology = *path;
    r.subtype = *sub;
    r.age = parse_int(cell("age"));
    out.push_back(std::move(r));
  }
  return out;
}

bool looks_like_dicom(const fs::path& p) {
  const std::string ext = lower(p.extension().string());
  return ext == ".dcm" || ext == ".dicom" || ext.empty();
}

std::optional<View> view_from(const DicomAttributes& attrs, const fs::path& rel) {
  if (auto v = parse_view(attrs.view_position)) return v;
  // Fall back to a CC / MLO token in the file name.
  std::string stem = lower(rel.stem().string());
  for (char& c : stem)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = ' ';
  std::istringstream ss(stem);
  std::string tok;
  while (ss >> tok) {
    if (tok == "cc") return View::CC;
    if (tok == "mlo") return View::MLO;
  }
  return std::nullopt;
}

std::string sanitize(std::string_view id) {
  std::string out;
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out;
}

std::string bool01(bool b) { return b ? "1" : "0"; }

const std::vector<std::string>& manifest_header() {
  static const std::vector<std::string> h = {"image_id", "patient_id", "laterality", "view", "age",
                                             "calcification", "mass", "pathology", "subtype", "path"};
  return h;
}

}  // namespace

std::string_view to_string(Laterality v) { return v == Laterality::Left ? "L" : "R"; }
std::string_view to_string(View v) { return v == View::CC ? "CC" : "MLO"; }
std::string_view to_string(Pathology v) { return v == Pathology::Benign ? "Benign" : "Malignant"; }
std::string_view to_string(Subtype v) {
  switch (v) {
    case Subtype::LuminalA: return "LuminalA";
    case Subtype::LuminalB: return "LuminalB";
    case Subtype::HER2: return "HER2";
    case Subtype::TripleNegative: return "TripleNegative";
    case Subtype::Unlabeled: return "Unlabeled";
  }
  return "Unlabeled";
}

std::optional<Laterality> parse_laterality(std::string_view s) {
  const std::string t = squash(s);
  if (t == "l" || t == "left") return Laterality::Left;
  if (t == "r" || t == "right") return Laterality::Right;
  return std::nullopt;
}

std::optional<View> parse_view(std::string_view s) {
  const std::string t = squash(s);
  if (t == "cc") return View::CC;
  if (t == "mlo") return View::MLO;
  return std::nullopt;
}

std::optional<Pathology> parse_pathology(std::string_view s) {
  const std::string t = squash(s);
  if (t == "benign") return Pathology::Benign;
  if (t == "malignant") return Pathology::Malignant;
  return std::nullopt;
}

std::optional<Subtype> parse_subtype(std::string_view s) {
  const std::string t = squash(s);
  if (t == "luminala") return Subtype::LuminalA;
  if (t == "luminalb") return Subtype::LuminalB;
  if (t == "her2" || t == "her2enriched" || t == "her2positive") return Subtype::HER2;
  if (t == "triplenegative" || t == "tnbc" || t == "tn") return Subtype::TripleNegative;
  if (t.empty() || t == "unlabeled" || t == "none" || t == "na" || t == "nan") return Subtype::Unlabeled;
  return std::nullopt;
}

float window_value(double p, const WindowSpec& w) {
  const double v = (p - (w.center - w.width / 2.0)) / w.width;
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

ImageTensor apply_window(const RawImage& raw) {
  if (!(raw.window.width > 0.0)) throw Error(ErrorCode::NonPositiveWidth, "window width must be positive");
  if (raw.rows < 1 || raw.cols < 1) throw Error(ErrorCode::InvalidArgument, "empty raw image");
  ImageTensor out(raw.rows, raw.cols);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double p = raw.pixels[i] * raw.rescale_slope + raw.rescale_intercept;
    const float v = window_value(p, raw.window);
    out.pixels[i] = raw.monochrome1 ? 1.0f - v : v;
  }
  return out;
}

ImageTensor apply_window(const ImageTensor& img, const WindowSpec& window) {
  if (!(window.width > 0.0)) throw Error(ErrorCode::NonPositiveWidth, "window width must be positive");
  ImageTensor out = img;
  for (float& v : out.pixels) v = window_value(v, window);
  return out;
}

DatasetManifest build_manifest(const fs::path& clinical_table, const fs::path& image_root) {
  DatasetManifest m;
  m.source_fingerprint = sha256_file(clinical_table);
  const auto clinical = read_clinical(clinical_table, m.warnings);

  std::map<std::pair<std::string, Laterality>, std::vector<const ClinicalRow*>> by_key;
  for (const auto& r : clinical) by_key[{r.patient_id, r.laterality}].push_back(&r);

  std::vector<fs::path> files;
  if (fs::is_directory(image_root)) {
    for (const auto& entry : fs::recursive_directory_iterator(image_root)) {
      if (entry.is_regular_file() && looks_like_dicom(entry.path())) files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  std::set<std::pair<std::string, Laterality>> matched;
  std::map<std::string, std::size_t> seen_ids;
  std::set<std::string> duplicate_ids;
  for (const auto& file : files) {
    const fs::path rel = fs::relative(file, image_root);
    DicomImage dcm;
    try {
      dcm = read_dicom(file);
    } catch (const Error& e) {
      m.warnings.push_back(rel.generic_string() + ": " + e.what());
      continue;
    }
    const auto& attrs = dcm.attributes;
    std::string patient = attrs.patient_id;
    if (patient.empty() && rel.has_parent_path()) patient = rel.begin()->string();
    const auto lat = parse_laterality(attrs.laterality);
    const auto view = view_from(attrs, rel);
    if (patient.empty() || !lat || !view) {
      m.warnings.push_back(rel.generic_string() + ": missing patient id, laterality or view, excluded");
      continue;
    }
    const auto it = by_key.find({patient, *lat});
    if (it == by_key.end()) {
      m.warnings.push_back(rel.generic_string() + ": no clinical row for " + patient + "/" +
                           std::string(to_string(*lat)));
      continue;
    }
    if (it->second.size() > 1) {
      m.warnings.push_back(rel.generic_string() + ": conflicting clinical rows for " + patient + "/" +
                           std::string(to_string(*lat)) + ", excluded");
      matched.insert(it->first);
      continue;
    }
    const ClinicalRow& row = *it->second.front();
    matched.insert(it->first);

    MammogramRecord rec;
    rec.patient_id = patient;
    rec.image_id = attrs.sop_instance_uid.empty() ? rel.generic_string() : attrs.sop_instance_uid;
    rec.laterality = *lat;
    rec.view = *view;
    rec.age = row.age;
    rec.has_calcification = row.finding.calcification;
    rec.has_mass = row.finding.mass;
    rec.pathology = row.pathology;
    rec.subtype = row.subtype;
    rec.image_path = file;
    if (seen_ids.count(rec.image_id)) {
      duplicate_ids.insert(rec.image_id);
      continue;
    }
    seen_ids[rec.image_id] = m.records.size();
    m.records.push_back(std::move(rec));
  }

  if (!duplicate_ids.empty()) {
    for (const auto& id : duplicate_ids) m.warnings.push_back("duplicate image id " + id + ", all copies excluded");
    std::erase_if(m.records, [&](const MammogramRecord& r) { return duplicate_ids.count(r.image_id) > 0; });
  }
  for (const auto& [key, rows] : by_key) {
    if (!matched.count(key)) {
      m.warnings.push_back("clinical row " + key.first + "/" + std::string(to_string(key.second)) +
                           " matched no image");
    }
  }
  if (m.records.empty()) {
    throw Error(ErrorCode::EmptyJoin, "no image under " + image_root.string() + " matched the clinical table");
  }
  std::sort(m.records.begin(), m.records.end(),
            [](const MammogramRecord& a, const MammogramRecord& b) { return a.image_id < b.image_id; });
  return m;
}

DatasetManifest ingest_dataset(const fs::path& clinical_table, const fs::path& image_root, const fs::path& out_dir,
                               const IngestOptions& options) {
  DatasetManifest m = build_manifest(clinical_table, image_root);
  const fs::path image_dir = out_dir / "images";
  fs::create_directories(image_dir);
  const std::string ext = options.format == ImageFormat::Png ? ".png" : ".jpg";

  std::set<std::string> used_names;
  std::vector<MammogramRecord> kept;
  kept.reserve(m.records.size());
  for (auto& rec : m.records) {
    ImageTensor img;
    try {
      img = apply_window(read_dicom(rec.image_path).image);
    } catch (const Error& e) {
      m.warnings.push_back(rec.image_id + ": " + e.what());
      continue;
    }
    std::string name = sanitize(rec.image_id);
    if (used_names.count(name)) name += "_" + sha256_hex(rec.image_id).substr(0, 8);
    used_names.insert(name);
    const fs::path dest = image_dir / (name + ext);
    export_image(img, dest, options.format, options.jpeg_quality);
    rec.image_path = dest;
    kept.push_back(std::move(rec));
  }
  m.records = std::move(kept);
  if (m.records.empty()) throw Error(ErrorCode::EmptyJoin, "no record survived decoding");
  write_manifest(m, out_dir / "manifest.csv");
  return m;
}

fs::path manifest_meta_path(const fs::path& csv_path) {
  return csv_path.parent_path() / (csv_path.stem().string() + ".meta.json");
}

void write_manifest(const DatasetManifest& manifest, const fs::path& csv_path) {
  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  const fs::path base = fs::absolute(csv_path).parent_path();
  std::string text = csv::join(manifest_header()) + "\n";
  for (const auto& r : manifest.records) {
    fs::path p = r.image_path;
    if (p.is_absolute() || fs::exists(p)) {
      const fs::path rel = fs::absolute(p).lexically_relative(base);
      if (!rel.empty()) p = rel;
    }
    text += csv::join({r.image_id, r.patient_id, std::string(to_string(r.laterality)), std::string(to_string(r.view)),
                       r.age ? std::to_string(*r.age) : std::string(), bool01(r.has_calcification),
                       bool01(r.has_mass), std::string(to_string(r.pathology)), std::string(to_string(r.subtype)),
                       p.generic_string()}) +
            "\n";
  }
  {
    std::ofstream os(csv_path, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + csv_path.string());
    os << text;
    if (!os) throw Error(ErrorCode::IoFailure, "write failed for " + csv_path.string());
  }
  nlohmann::json meta = {{"schema_version", manifest.schema_version},
                         {"source_fingerprint", manifest.source_fingerprint},
                         {"records", manifest.records.size()},
                         {"csv_sha256", sha256_hex(text)}};
  std::ofstream ms(manifest_meta_path(csv_path));
  if (!ms) throw Error(ErrorCode::IoFailure, "cannot write manifest sidecar");
  ms << meta.dump(2) << "\n";
}

DatasetManifest read_manifest(const fs::path& csv_path) {
  const auto rows = csv::read_file(csv_path);
  if (rows.empty()) throw Error(ErrorCode::SchemaMismatch, csv_path.string() + ": empty manifest");
  std::map<std::string, std::size_t> col;
  for (std::size_t c = 0; c < rows[0].size(); ++c) col[trim(rows[0][c])] = c;
  for (const auto& name : manifest_header()) {
    if (!col.count(name)) throw Error(ErrorCode::SchemaMismatch, csv_path.string() + ": missing column " + name);
  }

  DatasetManifest m;
  const fs::path meta_path = manifest_meta_path(csv_path);
  if (fs::exists(meta_path)) {
    std::ifstream ms(meta_path);
    const auto meta = nlohmann::json::parse(ms, nullptr, false);
    if (meta.is_discarded()) throw Error(ErrorCode::SchemaMismatch, meta_path.string() + ": invalid JSON");
    m.schema_version = meta.value("schema_version", 0);
    m.source_fingerprint = meta.value("source_fingerprint", std::string());
    if (m.schema_version != DatasetManifest::kSchemaVersion) {
      throw Error(ErrorCode::SchemaMismatch, "manifest schema version " + std::to_string(m.schema_version) +
                                                 ", expected " + std::to_string(DatasetManifest::kSchemaVersion));
    }
    const std::string want = meta.value("csv_sha256", std::string());
    if (!want.empty() && want != sha256_file(csv_path)) {
      m.warnings.push_back(csv_path.filename().string() + " was modified after it was written");
    }
  }

  const fs::path base = csv_path.parent_path();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    auto cell = [&](const std::string& name) -> std::string {
      const std::size_t c = col.at(name);
      return c < row.size() ? row[c] : std::string();
    };
    const std::string where = csv_path.filename().string() + " line " + std::to_string(i + 1);
    MammogramRecord r;
    r.image_id = cell("image_id");
    r.patient_id = cell("patient_id");
    const auto lat = parse_laterality(cell("laterality"));
    const auto view = parse_view(cell("view"));
    const auto path = parse_pathology(cell("pathology"));
    const auto sub = parse_subtype(cell("subtype"));
    if (r.image_id.empty() || r.patient_id.empty() || !lat || !view || !path || !sub) {
      throw Error(ErrorCode::SchemaMismatch, where + ": malformed record");
    }
    r.laterality = *lat;
    r.view = *view;
    r.pathology = *path;
    r.subtype = *sub;
    r.age = parse_int(cell("age"));
    r.has_calcification = trim(cell("calcification")) == "1";
    r.has_mass = trim(cell("mass")) == "1";
    fs::path p = cell("path");
    r.image_path = p.is_absolute() ? p : (base / p).lexically_normal();
    m.records.push_back(std::move(r));
  }
  return m;
}

std::vector<std::string> validate_manifest(const DatasetManifest& manifest, bool check_files) {
  std::vector<std::string> problems;
  std::set<std::string> ids;
  for (const auto& r : manifest.records) {
    if (!ids.insert(r.image_id).second) problems.push_back("duplicate image_id " + r.image_id);
    if (r.subtype != Subtype::Unlabeled && r.pathology != Pathology::Malignant) {
      problems.push_back(r.image_id + ": subtype on a benign record");
    }
    if (!r.has_calcification && !r.has_mass) problems.push_back(r.image_id + ": no finding");
    if (check_files && !fs::exists(r.image_path)) {
      problems.push_back(r.image_id + ": missing file " + r.image_path.string());
    }
  }
  return problems;
}

}  // namespace mammo
