#include "mammo/splits.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mammo/csv.hpp"
#include "mammo/error.hpp"
#include "mammo/rng.hpp"

namespace fs = std::filesystem;

namespace mammo {

namespace {

constexpr int kStrataAbnormality = 6;

struct Patient {
  std::string id;
  std::vector<std::string> images;
  std::vector<int> per_stratum;
  int cls = 0;
};

using Counts = std::vector<double>;

double deviation(const Counts& have, const Counts& target) {
  double d = 0.0;
  for (std::size_t s = 0; s < have.size(); ++s) d += (have[s] - target[s]) * (have[s] - target[s]);
  return d;
}

void add(Counts& have, const Patient& p, double sign) {
  for (std::size_t s = 0; s < have.size(); ++s) have[s] += sign * p.per_stratum[s];
}

double move_gain(const Counts& have, const Patient& p, double sign, const Counts& target) {
  Counts next = have;
  add(next, p, sign);
  return deviation(have, target) - deviation(next, target);
}

// Coarse class checked for minimum membership: subtype uses the luminal
// split, the abnormality task uses pathology (its finer strata can be rare).
int split_class(const MammogramRecord& r, SplitTask task) {
  if (task == SplitTask::Subtype) return split_stratum(r, task);
  return r.pathology == Pathology::Malignant ? 1 : 0;
}

int mode_of(const std::vector<int>& values, int domain) {
  std::vector<int> counts(domain, 0);
  for (int v : values) ++counts[v];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

int stratum_count(SplitTask task) { return task == SplitTask::Subtype ? 2 : kStrataAbnormality; }

// Eligible patients in id order, images in id order.
std::vector<Patient> group_patients(const DatasetManifest& manifest, SplitTask task,
                                    const std::set<std::string>* restrict_to = nullptr) {
  std::map<std::string, std::vector<const MammogramRecord*>> by_patient;
  for (const auto& r : manifest.records) {
    if (!split_eligible(r, task)) continue;
    if (restrict_to && !restrict_to->count(r.image_id)) continue;
    by_patient[r.patient_id].push_back(&r);
  }
  std::vector<Patient> out;
  for (auto& [id, recs] : by_patient) {
    std::sort(recs.begin(), recs.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });
    Patient p;
    p.id = id;
    std::vector<int> classes;
    p.per_stratum.assign(stratum_count(task), 0);
    for (const auto* r : recs) {
      p.images.push_back(r->image_id);
      ++p.per_stratum[split_stratum(*r, task)];
      classes.push_back(split_class(*r, task));
    }
    p.cls = mode_of(classes, 2);
    out.push_back(std::move(p));
  }
  return out;
}

void require_class_members(const std::vector<Patient>& patients, int minimum, const std::string& what) {
  std::map<int, int> per_class;
  for (const auto& p : patients) ++per_class[p.cls];
  if (per_class.size() < 2) {
    throw Error(ErrorCode::InsufficientClassMembers, what + ": fewer than two classes present");
  }
  for (const auto& [cls, n] : per_class) {
    if (n < minimum) {
      throw Error(ErrorCode::InsufficientClassMembers,
                  what + ": class " + std::to_string(cls) + " has " + std::to_string(n) + " patient(s), need " +
                      std::to_string(minimum));
    }
  }
}

}  // namespace

std::string_view to_string(SplitTask t) { return t == SplitTask::Subtype ? "subtype" : "abnormality"; }

std::optional<SplitTask> parse_split_task(std::string_view s) {
  if (s == "subtype") return SplitTask::Subtype;
  if (s == "abnormality") return SplitTask::Abnormality;
  return std::nullopt;
}

std::string Role::str() const {
  if (is_test()) return "test";
  if (is_pool()) return "pool";
  return "fold" + std::to_string(value_);
}

std::optional<Role> Role::parse(std::string_view s) {
  if (s == "test") return test();
  if (s == "pool") return pool();
  if (s.starts_with("fold")) {
    int k = -1;
    const auto digits = s.substr(4);
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (ec == std::errc{} && ptr == digits.data() + digits.size() && k >= 0) return fold(k);
  }
  return std::nullopt;
}

std::vector<std::string> SplitAssignment::ids_with(Role role) const {
  std::vector<std::string> out;
  for (const auto& [id, r] : roles)
    if (r == role) out.push_back(id);
  return out;
}

std::vector<std::string> SplitAssignment::training_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, r] : roles)
    if (r.is_fold() && r.fold_index() != fold) out.push_back(id);
  return out;
}

bool split_eligible(const MammogramRecord& r, SplitTask task) {
  return task == SplitTask::Abnormality || r.subtype_labeled();
}

int split_stratum(const MammogramRecord& r, SplitTask task) {
  if (task == SplitTask::Subtype) return is_luminal(r.subtype) ? 0 : 1;
  const int kind = r.has_calcification && r.has_mass ? 2 : (r.has_mass ? 1 : 0);
  return kind * 2 + (r.pathology == Pathology::Malignant ? 1 : 0);
}

SplitAssignment make_holdout_split(const DatasetManifest& manifest, SplitTask task, double test_frac,
                                   std::uint64_t seed, const std::set<std::string>& forced_test) {
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw Error(ErrorCode::InvalidArgument, "test_frac must be in (0, 1)");
  auto patients = group_patients(manifest, task);
  if (patients.empty()) throw Error(ErrorCode::EmptyManifest, "no records eligible for the split");
  require_class_members(patients, 2, "holdout split");

  SplitAssignment out;
  out.task = task;
  out.seed = seed;
  Pcg32 rng(derive_seed(seed, "split/holdout"));
  std::vector<const Patient*> order;
  Counts target(stratum_count(task), 0.0);
  for (const auto& p : patients) {
    order.push_back(&p);
    for (std::size_t k = 0; k < target.size(); ++k) target[k] += test_frac * p.per_stratum[k];
  }
  rng.shuffle(std::span<const Patient*>(order));
  std::stable_sort(order.begin(), order.end(), [&](const Patient* a, const Patient* b) {
    const bool fa = forced_test.count(a->id) > 0, fb = forced_test.count(b->id) > 0;
    if (fa != fb) return fa;
    return a->images.size() > b->images.size();
  });
  Counts taken(target.size(), 0.0);
  std::vector<char> in_test(order.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    in_test[i] = forced_test.count(order[i]->id) > 0 || move_gain(taken, *order[i], 1.0, target) > 0.0;
    if (in_test[i]) add(taken, *order[i], 1.0);
  }
  for (int pass = 0; pass < 50; ++pass) {
    bool improved = false;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (forced_test.count(order[i]->id)) continue;
      const double sign = in_test[i] ? -1.0 : 1.0;
      if (move_gain(taken, *order[i], sign, target) > 1e-9) {
        add(taken, *order[i], sign);
        in_test[i] = !in_test[i];
        improved = true;
        continue;
      }
      if (!in_test[i]) continue;
      for (std::size_t j = 0; j < order.size(); ++j) {
        if (in_test[j]) continue;
        Counts next = taken;
        add(next, *order[i], -1.0);
        add(next, *order[j], 1.0);
        if (deviation(taken, target) - deviation(next, target) > 1e-9) {
          taken = next;
          in_test[i] = 0;
          in_test[j] = 1;
          improved = true;
          break;
        }
      }
    }
    if (!improved) break;
  }
  for (std::size_t i = 0; i < order.size(); ++i)
    for (const auto& id : order[i]->images) out.roles.insert_or_assign(id, in_test[i] ? Role::test() : Role::pool());
  return out;
}

SplitAssignment make_cv_folds(const SplitAssignment& holdout, const DatasetManifest& manifest, int k,
                              std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "k must be at least 2");
  std::set<std::string> pool;
  for (const auto& [id, role] : holdout.roles)
    if (!role.is_test()) pool.insert(id);
  auto patients = group_patients(manifest, holdout.task, &pool);
  require_class_members(patients, k, "cross-validation pool");

  SplitAssignment out = holdout;
  out.folds = k;
  out.seed = seed;
  Pcg32 rng(derive_seed(seed, "split/folds"));
  std::vector<const Patient*> order;
  Counts target(stratum_count(holdout.task), 0.0);
  for (const auto& p : patients) {
    order.push_back(&p);
    for (std::size_t s = 0; s < target.size(); ++s) target[s] += static_cast<double>(p.per_stratum[s]) / k;
  }
  rng.shuffle(std::span<const Patient*>(order));
  std::stable_sort(order.begin(), order.end(),
                   [](const Patient* a, const Patient* b) { return a->images.size() > b->images.size(); });

  std::vector<Counts> have(k, Counts(target.size(), 0.0));
  std::vector<std::size_t> fold_total(k, 0);
  std::vector<int> fold_of(order.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    int best = 0;
    double best_gain = -1e300;
    for (int f = 0; f < k; ++f) {
      const double g = move_gain(have[f], *order[i], 1.0, target);
      if (g > best_gain || (g == best_gain && fold_total[f] < fold_total[best])) {
        best = f;
        best_gain = g;
      }
    }
    add(have[best], *order[i], 1.0);
    fold_total[best] += order[i]->images.size();
    fold_of[i] = best;
  }

  for (int pass = 0; pass < 50; ++pass) {
    bool improved = false;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const int from = fold_of[i];
      const double leave = move_gain(have[from], *order[i], -1.0, target);
      for (int to = 0; to < k; ++to) {
        if (to == from) continue;
        if (leave + move_gain(have[to], *order[i], 1.0, target) > 1e-9) {
          add(have[from], *order[i], -1.0);
          add(have[to], *order[i], 1.0);
          fold_of[i] = to;
          improved = true;
          break;
        }
      }
    }
    if (!improved) break;
  }

  for (std::size_t i = 0; i < order.size(); ++i)
    for (const auto& id : order[i]->images) out.roles.insert_or_assign(id, Role::fold(fold_of[i]));
  return out;
}

std::set<std::string> patients_with(const SplitAssignment& assignment, const DatasetManifest& manifest, Role role) {
  std::set<std::string> out;
  for (const auto& r : manifest.records) {
    const auto it = assignment.roles.find(r.image_id);
    if (it != assignment.roles.end() && it->second == role) out.insert(r.patient_id);
  }
  return out;
}

std::vector<std::string> verify_no_leakage(const SplitAssignment& assignment, const DatasetManifest& manifest) {
  std::map<std::string, std::set<std::string>> roles_by_patient;
  for (const auto& r : manifest.records) {
    const auto it = assignment.roles.find(r.image_id);
    if (it == assignment.roles.end()) continue;
    roles_by_patient[r.patient_id].insert(it->second.str());
  }
  std::vector<std::string> out;
  for (const auto& [patient, roles] : roles_by_patient)
    if (roles.size() > 1) out.push_back(patient);
  return out;
}

void write_splits(const SplitAssignment& assignment, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  os << "image_id,role\n";
  for (const auto& [id, role] : assignment.roles) os << csv::join({id, role.str()}) << "\n";
  if (!os) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());

  const nlohmann::json meta = {
      {"task", to_string(assignment.task)}, {"seed", assignment.seed}, {"folds", assignment.folds}};
  std::ofstream ms(path.parent_path() / (path.stem().string() + ".meta.json"));
  if (!ms) throw Error(ErrorCode::IoFailure, "cannot write split sidecar");
  ms << meta.dump(2) << "\n";
}

SplitAssignment read_splits(const fs::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows[0].size() < 2 || rows[0][0] != "image_id" || rows[0][1] != "role") {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": expected header image_id,role");
  }
  SplitAssignment out;
  int max_fold = -1;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() < 2) throw Error(ErrorCode::SchemaMismatch, path.string() + ": short row");
    const auto role = Role::parse(rows[i][1]);
    if (!role) throw Error(ErrorCode::SchemaMismatch, path.string() + ": bad role '" + rows[i][1] + "'");
    if (role->is_fold()) max_fold = std::max(max_fold, role->fold_index());
    out.roles.insert_or_assign(rows[i][0], *role);
  }
  out.folds = max_fold + 1;
  const fs::path meta_path = path.parent_path() / (path.stem().string() + ".meta.json");
  if (fs::exists(meta_path)) {
    std::ifstream ms(meta_path);
    const auto meta = nlohmann::json::parse(ms, nullptr, false);
    if (meta.is_discarded()) throw Error(ErrorCode::SchemaMismatch, meta_path.string() + ": invalid JSON");
    if (auto t = parse_split_task(meta.value("task", std::string()))) out.task = *t;
    out.seed = meta.value("seed", std::uint64_t{0});
    out.folds = meta.value("folds", out.folds);
  }
  return out;
}

}  // namespace mammo
