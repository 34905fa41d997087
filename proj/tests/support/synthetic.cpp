#include "synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dicom_writer.hpp"
#include "mammo/rng.hpp"

namespace mammo::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = fs::temp_directory_path() / ("mammo_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<SyntheticPatient> smoke_patients() {
  std::vector<SyntheticPatient> out;
  const Subtype luminal[] = {Subtype::LuminalA, Subtype::LuminalB};
  const Subtype non_luminal[] = {Subtype::HER2, Subtype::TripleNegative};
  for (int i = 0; i < 16; ++i) {
    SyntheticPatient p;
    char id[16];
    std::snprintf(id, sizeof id, "D1-%04d", i);
    p.id = id;
    p.laterality = i % 2 == 0 ? Laterality::Left : Laterality::Right;
    if (i < 6) {
      p.calcification = true;
      p.subtype = luminal[i % 2];
    } else if (i < 12) {
      p.mass = true;
      p.subtype = non_luminal[i % 2];
    } else {
      p.pathology = Pathology::Benign;
      p.calcification = i < 14;
      p.mass = i >= 14;
    }
    out.push_back(p);
  }
  return out;
}

namespace {

std::vector<std::int32_t> render(const SyntheticPatient& p, View view, int rows, int cols, Pcg32& rng) {
  std::vector<double> img(static_cast<std::size_t>(rows) * cols, 0.0);
  const bool chest_left = p.laterality == Laterality::Left;
  const double cr = rows / 2.0;
  const double ry = rows * (view == View::CC ? 0.42 : 0.47);
  const double rx = cols * 0.85;
  auto inside = [&](int r, int c) {
    const double x = chest_left ? c : cols - 1 - c;
    const double dy = (r - cr) / ry;
    const double dx = x / rx;
    return dx * dx + dy * dy <= 1.0;
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (inside(r, c)) img[static_cast<std::size_t>(r) * cols + c] = 0.30 + 0.05 * rng.uniform();

  const double level = p.pathology == Pathology::Malignant ? 1.0 : 0.62;
  auto random_inside = [&](int margin, int& r, int& c) {
    for (int tries = 0; tries < 1000; ++tries) {
      r = rng.uniform_int(margin, rows - 1 - margin);
      c = rng.uniform_int(margin, cols - 1 - margin);
      if (inside(r - margin, c) && inside(r + margin, c) && inside(r, c - margin) && inside(r, c + margin)) return;
    }
    r = rows / 2;
    c = chest_left ? cols / 4 : cols - 1 - cols / 4;
  };
  if (p.calcification) {
    for (int k = 0; k < 6; ++k) {
      int r0, c0;
      random_inside(3, r0, c0);
      for (int r = r0 - 2; r < r0 + 2; ++r)
        for (int c = c0 - 2; c < c0 + 2; ++c) img[static_cast<std::size_t>(r) * cols + c] = level;
    }
  }
  if (p.mass) {
    const int radius = std::max(4, cols / 6);
    int r0, c0;
    random_inside(radius + 1, r0, c0);
    for (int r = r0 - radius; r <= r0 + radius; ++r)
      for (int c = c0 - radius; c <= c0 + radius; ++c)
        if ((r - r0) * (r - r0) + (c - c0) * (c - c0) <= radius * radius)
          img[static_cast<std::size_t>(r) * cols + c] = level * 0.95;
  }
  std::vector<std::int32_t> stored(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) stored[i] = static_cast<std::int32_t>(std::lround(img[i] * 4095.0));
  return stored;
}

std::string clinical_subtype(Subtype s) {
  switch (s) {
    case Subtype::LuminalA: return "Luminal A";
    case Subtype::LuminalB: return "Luminal B";
    case Subtype::HER2: return "HER2-enriched";
    case Subtype::TripleNegative: return "triple negative";
    case Subtype::Unlabeled: return "";
  }
  return "";
}

}  // namespace

SyntheticDataset write_synthetic_dataset(const fs::path& root, const std::vector<SyntheticPatient>& patients,
                                         int rows, int cols, std::uint64_t seed) {
  SyntheticDataset ds;
  ds.clinical = root / "clinical.csv";
  ds.images = root / "dicom";
  ds.patients = patients;
  Pcg32 rng(seed, 11);
  std::string csv = "ID1,LeftRight,Age,number,abnormality,classification,subtype\n";
  int uid = 0;
  for (const auto& p : patients) {
    const std::string finding = p.calcification && p.mass ? "both" : (p.calcification ? "calcification" : "mass");
    csv += p.id + "," + std::string(to_string(p.laterality)) + "," + std::to_string(40 + rng.uniform_int(0, 30)) +
           ",1," + finding + "," + (p.pathology == Pathology::Malignant ? "Malignant" : "Benign") + "," +
           clinical_subtype(p.subtype) + "\n";
    for (View v : {View::CC, View::MLO}) {
      DicomSpec spec;
      spec.rows = rows;
      spec.cols = cols;
      spec.pixels = render(p, v, rows, cols, rng);
      spec.window_center = 2048.0;
      spec.window_width = 4096.0;
      spec.patient_id = p.id;
      spec.laterality = std::string(to_string(p.laterality));
      spec.view_position = std::string(to_string(v));
      spec.sop_instance_uid = "1.2.826.0.1.3680043.9." + std::to_string(++uid);
      write_dicom(ds.images / p.id / (std::string(to_string(v)) + ".dcm"), spec);
    }
  }
  write_text(ds.clinical, csv);
  return ds;
}

DatasetManifest synthetic_cohort(int patients, std::uint64_t seed) {
  Pcg32 rng(seed, 3);
  DatasetManifest m;
  const Subtype subtypes[] = {Subtype::LuminalA, Subtype::LuminalB, Subtype::HER2, Subtype::TripleNegative};
  for (int i = 0; i < patients; ++i) {
    const std::string pid = "P" + std::to_string(i);
    const int breasts = rng.uniform_int(1, 2);
    const bool left_first = rng.bernoulli(0.5);
    for (int b = 0; b < breasts; ++b) {
      const Laterality lat = (b == 0) == left_first ? Laterality::Left : Laterality::Right;
      const int kind = rng.uniform_int(0, 2);
      const bool malignant = rng.bernoulli(0.7);
      Subtype sub = Subtype::Unlabeled;
      if (malignant && rng.bernoulli(0.9)) sub = subtypes[rng.uniform_int(0, 3)];
      for (View v : {View::CC, View::MLO}) {
        if (v == View::MLO && rng.bernoulli(0.05)) continue;
        MammogramRecord r;
        r.patient_id = pid;
        r.image_id = pid + "_" + std::string(to_string(lat)) + "_" + std::string(to_string(v));
        r.laterality = lat;
        r.view = v;
        r.has_calcification = kind != 1;
        r.has_mass = kind != 0;
        r.pathology = malignant ? Pathology::Malignant : Pathology::Benign;
        r.subtype = sub;
        r.image_path = r.image_id + ".png";
        m.records.push_back(r);
      }
    }
  }
  std::sort(m.records.begin(), m.records.end(),
            [](const MammogramRecord& a, const MammogramRecord& b) { return a.image_id < b.image_id; });
  return m;
}

}  // namespace mammo::testing

namespace mammo::testing {

std::string smoke_config_text(const std::filesystem::path& data_root, const std::filesystem::path& output,
                              const SmokeOverrides& o) {
  std::ostringstream s;
  s << "seed = 1\n\n"
    << "[paths]\n"
    << "data_root = \"" << data_root.generic_string() << "\"\n"
    << "clinical = \"clinical.csv\"\n"
    << "images = \"dicom\"\n"
    << "output = \"" << output.generic_string() << "\"\n\n"
    << "[preprocess]\n"
    << "rows = " << o.rows << "\ncols = " << o.cols << "\n\n"
    << "[split]\n"
    << "test_fraction = 0.2\n"
    << "folds = " << o.folds << "\n\n"
    << "[train]\n"
    << "tasks = " << o.tasks << "\n"
    << "batch_size = " << o.batch_size << "\n"
    << "max_epochs = " << o.max_epochs << "\n"
    << "patience = " << o.patience << "\n"
    << "lr_luminal = 1e-4\n"
    << "lr_abnormality = 1e-4\n"
    << "augment = false\n"
    << "track_train_f1 = true\n"
    << "base_width = " << o.base_width << "\n"
    << "blocks = " << o.blocks << "\n\n"
    << "[gradcam]\n"
    << "images = 1\n"
    << o.extra;
  return s.str();
}

}  // namespace mammo::testing
