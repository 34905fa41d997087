#include "mammo/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "mammo/error.hpp"
#include "mammo/hash.hpp"

namespace fs = std::filesystem;

namespace mammo {

namespace toml {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw Error(ErrorCode::ConfigInvalid, "line " + std::to_string(line) + ": " + msg);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

class Cursor {
 public:
  Cursor(std::string_view s, std::size_t line) : s_(s), line_(line) {}

  void skip_ws() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
  }
  bool done() {
    skip_ws();
    return i_ >= s_.size() || s_[i_] == '#';
  }
  char peek() {
    skip_ws();
    return i_ < s_.size() ? s_[i_] : '\0';
  }

  Value value() {
    if (peek() == '[') {
      ++i_;
      Array arr;
      for (;;) {
        if (peek() == ']') {
          ++i_;
          return arr;
        }
        arr.push_back(scalar());
        const char c = peek();
        if (c == ',') {
          ++i_;
        } else if (c != ']') {
          fail(line_, "expected ',' or ']' in array");
        }
      }
    }
    return scalar();
  }

  Scalar scalar() {
    const char c = peek();
    if (c == '"' || c == '\'') return string(c);
    std::size_t j = i_;
    while (j < s_.size() && s_[j] != ',' && s_[j] != ']' && s_[j] != '#' && s_[j] != ' ' && s_[j] != '\t') ++j;
    std::string tok(s_.substr(i_, j - i_));
    i_ = j;
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::erase(tok, '_');
    if (tok.empty()) fail(line_, "missing value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan";
    if (!is_float) {
      std::int64_t v = 0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec == std::errc{} && p == tok.data() + tok.size()) return v;
    }
    double d = 0.0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
    if (ec != std::errc{} || p != tok.data() + tok.size()) fail(line_, "cannot parse value '" + tok + "'");
    return d;
  }

 private:
  Scalar string(char quote) {
    ++i_;
    std::string out;
    while (i_ < s_.size() && s_[i_] != quote) {
      char c = s_[i_++];
      if (quote == '"' && c == '\\' && i_ < s_.size()) {
        const char e = s_[i_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '\\': c = '\\'; break;
          case '"': c = '"'; break;
          default: fail(line_, std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (i_ >= s_.size()) fail(line_, "unterminated string");
    ++i_;
    return out;
  }

  std::string_view s_;
  std::size_t line_;
  std::size_t i_ = 0;
};

bool bare_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

std::string scalar_text(const Scalar& s) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          char buf[40];
          std::snprintf(buf, sizeof buf, "%.17g", v);
          return buf;
        } else {
          std::string out = "\"";
          for (char c : v) {
            if (c == '"' || c == '\\') out.push_back('\\');
            out.push_back(c);
          }
          return out + "\"";
        }
      },
      s);
}

}  // namespace

Table parse(std::string_view text) {
  Table table;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = trim(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      const auto close = line.find(']');
      if (close == std::string_view::npos) fail(line_no, "unterminated section header");
      const std::string_view rest = trim(line.substr(close + 1));
      if (!rest.empty() && rest.front() != '#') fail(line_no, "trailing text after section header");
      section = std::string(trim(line.substr(1, close - 1)));
      if (!bare_key(section)) fail(line_no, "invalid section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(line_no, "expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    if (!bare_key(key)) fail(line_no, "invalid key '" + key + "'");
    Cursor cur(line.substr(eq + 1), line_no);
    Value v = cur.value();
    if (!cur.done()) fail(line_no, "trailing text after value");
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full)) fail(line_no, "duplicate key '" + full + "'");
    table.emplace(full, std::move(v));
  }
  return table;
}

std::string canonical(const Value& v) {
  if (const auto* s = std::get_if<Scalar>(&v)) return scalar_text(*s);
  std::string out = "[";
  const auto& arr = std::get<Array>(v);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (i) out += ",";
    out += scalar_text(arr[i]);
  }
  return out + "]";
}

}  // namespace toml

namespace {

[[noreturn]] void invalid(const std::string& key, const std::string& msg) {
  throw Error(ErrorCode::ConfigInvalid, key + ": " + msg);
}

const toml::Scalar& as_scalar(const std::string& key, const toml::Value& v) {
  const auto* s = std::get_if<toml::Scalar>(&v);
  if (!s) invalid(key, "expected a single value, not an array");
  return *s;
}

double as_double(const std::string& key, const toml::Value& v) {
  const auto& s = as_scalar(key, v);
  if (const auto* i = std::get_if<std::int64_t>(&s)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&s)) return *d;
  invalid(key, "expected a number");
}

std::int64_t as_int(const std::string& key, const toml::Value& v) {
  const auto& s = as_scalar(key, v);
  if (const auto* i = std::get_if<std::int64_t>(&s)) return *i;
  invalid(key, "expected an integer");
}

bool as_bool(const std::string& key, const toml::Value& v) {
  const auto& s = as_scalar(key, v);
  if (const auto* b = std::get_if<bool>(&s)) return *b;
  invalid(key, "expected true or false");
}

std::string as_string(const std::string& key, const toml::Value& v) {
  const auto& s = as_scalar(key, v);
  if (const auto* str = std::get_if<std::string>(&s)) return *str;
  invalid(key, "expected a quoted string");
}

std::vector<std::string> as_strings(const std::string& key, const toml::Value& v) {
  const auto* arr = std::get_if<toml::Array>(&v);
  if (!arr) invalid(key, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& s : *arr) {
    const auto* str = std::get_if<std::string>(&s);
    if (!str) invalid(key, "expected an array of strings");
    out.push_back(*str);
  }
  return out;
}

std::vector<std::int64_t> as_ints(const std::string& key, const toml::Value& v) {
  const auto* arr = std::get_if<toml::Array>(&v);
  if (!arr) invalid(key, "expected an array of integers");
  std::vector<std::int64_t> out;
  for (const auto& s : *arr) {
    const auto* i = std::get_if<std::int64_t>(&s);
    if (!i) invalid(key, "expected an array of integers");
    out.push_back(*i);
  }
  return out;
}

std::pair<double, double> as_range(const std::string& key, const toml::Value& v) {
  const auto* arr = std::get_if<toml::Array>(&v);
  if (!arr || arr->size() != 2) invalid(key, "expected [low, high]");
  return {as_double(key, (*arr)[0]), as_double(key, (*arr)[1])};
}

toml::Value scalar(toml::Scalar s) { return toml::Value(std::move(s)); }
toml::Value num(double d) { return scalar(d); }
toml::Value integer(std::int64_t i) { return scalar(i); }
toml::Value boolean(bool b) { return scalar(b); }
toml::Value str(std::string s) { return scalar(std::move(s)); }
toml::Value strings(const std::vector<std::string>& v) {
  toml::Array a;
  for (const auto& s : v) a.emplace_back(s);
  return a;
}
toml::Value range(std::pair<double, double> r) { return toml::Array{r.first, r.second}; }

// One recognised key: how to apply a parsed value and how to read the
// effective value back for hashing.
struct Binding {
  std::string key;
  std::function<void(const toml::Value&)> set;
  std::function<toml::Value()> get;
};

struct RawPaths {
  std::string data_root = ".";
  std::string clinical = "clinical.csv";
  std::string images = "images";
  std::string output = "runs/default";
  std::string manifest;
  std::string pretrained;
};

std::vector<Binding> bindings(RunConfig& c, RawPaths& p) {
  std::vector<Binding> b;
  auto bind = [&](std::string key, auto set, auto get) { b.push_back({std::move(key), set, get}); };
  auto path_key = [&](const char* key, std::string& field) {
    bind(key, [&field, key](const toml::Value& v) { field = as_string(key, v); }, [&field] { return str(field); });
  };

  bind("seed", [&](const toml::Value& v) { c.seed = static_cast<std::uint64_t>(as_int("seed", v)); },
       [&] { return integer(static_cast<std::int64_t>(c.seed)); });

  path_key("paths.data_root", p.data_root);
  path_key("paths.clinical", p.clinical);
  path_key("paths.images", p.images);
  path_key("paths.output", p.output);
  path_key("paths.manifest", p.manifest);
  path_key("paths.pretrained", p.pretrained);

  bind("ingest.format",
       [&](const toml::Value& v) {
         const auto f = as_string("ingest.format", v);
         if (f == "png") c.ingest.format = ImageFormat::Png;
         else if (f == "jpeg" || f == "jpg") c.ingest.format = ImageFormat::Jpeg;
         else invalid("ingest.format", "expected \"png\" or \"jpeg\"");
       },
       [&] { return str(c.ingest.format == ImageFormat::Png ? "png" : "jpeg"); });
  bind("ingest.jpeg_quality",
       [&](const toml::Value& v) { c.ingest.jpeg_quality = static_cast<int>(as_int("ingest.jpeg_quality", v)); },
       [&] { return integer(c.ingest.jpeg_quality); });

  bind("preprocess.threshold",
       [&](const toml::Value& v) { c.preprocess.threshold = static_cast<float>(as_double("preprocess.threshold", v)); },
       [&] { return num(c.preprocess.threshold); });
  bind("preprocess.rows", [&](const toml::Value& v) { c.preprocess.rows = static_cast<int>(as_int("preprocess.rows", v)); },
       [&] { return integer(c.preprocess.rows); });
  bind("preprocess.cols", [&](const toml::Value& v) { c.preprocess.cols = static_cast<int>(as_int("preprocess.cols", v)); },
       [&] { return integer(c.preprocess.cols); });

  bind("split.test_fraction", [&](const toml::Value& v) { c.test_fraction = as_double("split.test_fraction", v); },
       [&] { return num(c.test_fraction); });
  bind("split.folds", [&](const toml::Value& v) { c.folds = static_cast<int>(as_int("split.folds", v)); },
       [&] { return integer(c.folds); });

  bind("train.tasks",
       [&](const toml::Value& v) {
         c.tasks.clear();
         for (const auto& name : as_strings("train.tasks", v)) {
           const auto t = parse_task_kind(name);
           if (!t) invalid("train.tasks", "unknown task '" + name + "'");
           c.tasks.push_back(*t);
         }
       },
       [&] {
         std::vector<std::string> names;
         for (auto t : c.tasks) names.emplace_back(cli_name(t));
         return strings(names);
       });
  bind("train.batch_size", [&](const toml::Value& v) { c.batch_size = static_cast<int>(as_int("train.batch_size", v)); },
       [&] { return integer(c.batch_size); });
  bind("train.max_epochs", [&](const toml::Value& v) { c.max_epochs = static_cast<int>(as_int("train.max_epochs", v)); },
       [&] { return integer(c.max_epochs); });
  bind("train.patience", [&](const toml::Value& v) { c.patience = static_cast<int>(as_int("train.patience", v)); },
       [&] { return integer(c.patience); });
  bind("train.weight_decay", [&](const toml::Value& v) { c.weight_decay = as_double("train.weight_decay", v); },
       [&] { return num(c.weight_decay); });
  bind("train.lr_luminal", [&](const toml::Value& v) { c.lr_luminal = as_double("train.lr_luminal", v); },
       [&] { return num(c.lr_luminal); });
  bind("train.lr_abnormality", [&](const toml::Value& v) { c.lr_abnormality = as_double("train.lr_abnormality", v); },
       [&] { return num(c.lr_abnormality); });
  bind("train.sampler_luminal", [&](const toml::Value& v) { c.sampler_luminal = as_bool("train.sampler_luminal", v); },
       [&] { return boolean(c.sampler_luminal); });
  bind("train.sampler_abnormality",
       [&](const toml::Value& v) { c.sampler_abnormality = as_bool("train.sampler_abnormality", v); },
       [&] { return boolean(c.sampler_abnormality); });
  bind("train.augment", [&](const toml::Value& v) { c.augment_enabled = as_bool("train.augment", v); },
       [&] { return boolean(c.augment_enabled); });
  bind("train.track_train_f1",
       [&](const toml::Value& v) { c.track_train_f1 = as_bool("train.track_train_f1", v); },
       [&] { return boolean(c.track_train_f1); });
  bind("train.base_width",
       [&](const toml::Value& v) { c.backbone.base_width = static_cast<int>(as_int("train.base_width", v)); },
       [&] { return integer(c.backbone.base_width); });
  bind("train.blocks",
       [&](const toml::Value& v) {
         c.backbone.blocks.clear();
         for (auto n : as_ints("train.blocks", v)) c.backbone.blocks.push_back(static_cast<int>(n));
       },
       [&] {
         toml::Array a;
         for (int n : c.backbone.blocks) a.emplace_back(static_cast<std::int64_t>(n));
         return toml::Value(a);
       });

  auto& a = c.augment;
  auto prob = [&](const char* key, double& field) {
    bind(key, [&field, key](const toml::Value& v) { field = as_double(key, v); }, [&field] { return num(field); });
  };
  prob("augment.p_hflip", a.p_hflip);
  prob("augment.p_augmix", a.p_augmix);
  prob("augment.p_histeq", a.p_histeq);
  prob("augment.p_erase", a.p_erase);
  bind("augment.augmix_severity",
       [&](const toml::Value& v) { a.augmix_severity = static_cast<int>(as_int("augment.augmix_severity", v)); },
       [&] { return integer(a.augmix_severity); });
  bind("augment.augmix_width",
       [&](const toml::Value& v) { a.augmix_width = static_cast<int>(as_int("augment.augmix_width", v)); },
       [&] { return integer(a.augmix_width); });
  bind("augment.augmix_depth_range",
       [&](const toml::Value& v) {
         const auto r = as_ints("augment.augmix_depth_range", v);
         if (r.size() != 2) invalid("augment.augmix_depth_range", "expected [low, high]");
         a.augmix_depth_range = {static_cast<int>(r[0]), static_cast<int>(r[1])};
       },
       [&] {
         return toml::Value(toml::Array{static_cast<std::int64_t>(a.augmix_depth_range.first),
                                        static_cast<std::int64_t>(a.augmix_depth_range.second)});
       });
  bind("augment.erase_area_range",
       [&](const toml::Value& v) { a.erase_area_range = as_range("augment.erase_area_range", v); },
       [&] { return range(a.erase_area_range); });
  bind("augment.erase_aspect_range",
       [&](const toml::Value& v) { a.erase_aspect_range = as_range("augment.erase_aspect_range", v); },
       [&] { return range(a.erase_aspect_range); });

  bind("evaluate.auc_positive", [&](const toml::Value& v) { c.auc_positive = as_string("evaluate.auc_positive", v); },
       [&] { return str(c.auc_positive); });

  bind("gradcam.images", [&](const toml::Value& v) { c.gradcam_images = static_cast<int>(as_int("gradcam.images", v)); },
       [&] { return integer(c.gradcam_images); });
  bind("gradcam.classes", [&](const toml::Value& v) { c.gradcam_classes = as_strings("gradcam.classes", v); },
       [&] { return strings(c.gradcam_classes); });
  return b;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

void check(bool ok, const std::string& key, const std::string& msg) {
  if (!ok) invalid(key, msg);
}

}  // namespace

std::string RunConfig::hash() const {
  std::string text;
  for (const auto& [k, v] : canonical) text += k + "=" + v + "\n";
  return sha256_hex(text);
}

std::string RunConfig::section_hash(std::initializer_list<std::string_view> sections) const {
  std::string text;
  for (const auto& [k, v] : canonical) {
    const auto dot = k.find('.');
    const std::string_view section = dot == std::string::npos ? std::string_view() : std::string_view(k).substr(0, dot);
    for (auto s : sections) {
      if (s == section) {
        text += k + "=" + v + "\n";
        break;
      }
    }
  }
  return sha256_hex(text);
}

TrainConfig RunConfig::train_config(TaskKind task, int fold) const {
  TrainConfig t = TrainConfig::for_task(task);
  const bool luminal = TaskSpec::make(task).is_luminal();
  t.batch_size = batch_size;
  t.max_epochs = max_epochs;
  t.patience = patience;
  t.weight_decay = weight_decay;
  t.lr = luminal ? lr_luminal : lr_abnormality;
  t.use_weighted_sampler = luminal ? sampler_luminal : sampler_abnormality;
  t.augment_enabled = augment_enabled;
  t.track_train_metrics = track_train_f1;
  t.augment = augment;
  t.seed = derive_seed(seed, "train/" + std::string(cli_name(task)) + "/fold" + std::to_string(fold));
  t.augment.rng_seed = derive_seed(t.seed, "augment");
  return t;
}

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  const toml::Table table = toml::parse(text);
  RunConfig c;
  RawPaths raw;
  const auto binds = bindings(c, raw);
  for (const auto& [key, value] : table) {
    const auto it = std::find_if(binds.begin(), binds.end(), [&](const Binding& b) { return b.key == key; });
    if (it == binds.end()) throw Error(ErrorCode::ConfigInvalid, "unknown key '" + key + "'");
    it->set(value);
  }
  if (const char* env = std::getenv(std::string(kDataRootEnv).c_str()); env && *env) raw.data_root = env;
  for (const auto& b : binds) c.canonical[b.key] = toml::canonical(b.get());

  c.data_root = resolve(base_dir, raw.data_root);
  c.clinical = resolve(c.data_root, raw.clinical);
  c.images = resolve(c.data_root, raw.images);
  c.output = resolve(base_dir, raw.output);
  if (!raw.manifest.empty()) c.manifest = resolve(base_dir, raw.manifest);
  if (!raw.pretrained.empty()) c.pretrained = resolve(base_dir, raw.pretrained);

  check(!raw.output.empty(), "paths.output", "must be set");
  check(c.test_fraction > 0.0 && c.test_fraction < 1.0, "split.test_fraction", "must be in (0, 1)");
  check(c.folds >= 2, "split.folds", "must be >= 2");
  check(c.preprocess.rows >= 1 && c.preprocess.cols >= 1, "preprocess", "rows and cols must be positive");
  check(c.preprocess.threshold >= 0.0f && c.preprocess.threshold < 1.0f, "preprocess.threshold", "must be in [0, 1)");
  check(c.ingest.jpeg_quality >= 1 && c.ingest.jpeg_quality <= 100, "ingest.jpeg_quality", "must be in [1, 100]");
  check(c.jobs >= 1, "train.jobs", "must be >= 1");
  check(c.backbone.base_width >= 1 && !c.backbone.blocks.empty(), "train", "invalid backbone shape");
  check(c.gradcam_images >= 0, "gradcam.images", "must be >= 0");
  try {
    c.train_config(TaskKind::BaselineLuminal, 0).validate();
    c.train_config(TaskKind::MLMC, 0).validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::ConfigInvalid, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  RunConfig c = parse_run_config(ss.str(), fs::absolute(path).parent_path());
  c.source = fs::absolute(path);
  return c;
}

std::string default_config_text() {
  return R"(# Root seed; every stage derives its own stream from it.
seed = 0

[paths]
data_root = "data"              # overridden by $MAMMO_DATA_ROOT
clinical = "clinical.csv"       # relative to data_root
images = "CMMD"                 # DICOM tree, relative to data_root
output = "runs/cmmd"
# manifest = "runs/cmmd/ingest/manifest.csv"   # start from an existing ingest
# pretrained = "weights/resnet18.mck"          # backbone weights archive

[ingest]
format = "png"
jpeg_quality = 95

[preprocess]
threshold = 0.00784313725490196
rows = 1326
cols = 512

[split]
test_fraction = 0.10
folds = 5

[train]
tasks = ["mlmc", "baseline", "transfer"]
batch_size = 16
max_epochs = 100
patience = 10
weight_decay = 5e-3
lr_luminal = 1e-5
lr_abnormality = 1e-4
sampler_luminal = true
sampler_abnormality = false
augment = true
track_train_f1 = false          # score the training set every epoch
base_width = 64
blocks = [2, 2, 2, 2]

[augment]
p_hflip = 0.5
p_augmix = 0.2
p_histeq = 0.4
p_erase = 0.1
augmix_severity = 3
augmix_width = 3
augmix_depth_range = [1, 3]
erase_area_range = [0.02, 0.33]
erase_aspect_range = [0.3, 3.3]

[evaluate]
auc_positive = ""               # class name; empty uses the task default

[gradcam]
images = 2
classes = ["calcification", "mass", "malignant"]
)";
}

}  // namespace mammo
