#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mammo/ingest.hpp"

namespace mammo {

enum class SplitTask { Abnormality, Subtype };

std::string_view to_string(SplitTask t);
std::optional<SplitTask> parse_split_task(std::string_view s);

/// Role of one image: held-out test, undivided CV pool, or validation fold k.
class Role {
 public:
  static constexpr Role test() { return Role(-1); }
  static constexpr Role pool() { return Role(-2); }
  static constexpr Role fold(int k) { return Role(k); }

  constexpr bool is_test() const { return value_ == -1; }
  constexpr bool is_pool() const { return value_ == -2; }
  constexpr bool is_fold() const { return value_ >= 0; }
  constexpr int fold_index() const { return value_; }

  std::string str() const;
  static std::optional<Role> parse(std::string_view s);

  friend constexpr bool operator==(Role, Role) = default;

 private:
  constexpr explicit Role(int v) : value_(v) {}
  int value_;
};

struct SplitAssignment {
  SplitTask task = SplitTask::Subtype;
  std::uint64_t seed = 0;
  int folds = 0;  // 0 until make_cv_folds has run
  std::map<std::string, Role> roles;  // image_id -> role

  std::vector<std::string> ids_with(Role role) const;
  std::vector<std::string> test_ids() const { return ids_with(Role::test()); }
  std::vector<std::string> validation_ids(int fold) const { return ids_with(Role::fold(fold)); }
  /// Every CV image not in the given fold.
  std::vector<std::string> training_ids(int fold) const;
};

/// Records usable by the task (Subtype: subtype-labeled only).
bool split_eligible(const MammogramRecord& r, SplitTask task);

/// Stratum used for balancing. Subtype: 0 luminal, 1 non-luminal.
/// Abnormality: finding kind (calc, mass, both) x pathology -> 0..5.
int split_stratum(const MammogramRecord& r, SplitTask task);

/// Whole patients are moved to Test, stratum by stratum in seeded order,
/// whenever doing so brings the stratum's test image count closer to
/// test_frac of its total. Everyone else lands in the pool.
/// Patients in `forced_test` go to Test first and count toward the targets.
/// Throws Error{InsufficientClassMembers} if a class has < 2 patients.
SplitAssignment make_holdout_split(const DatasetManifest& manifest, SplitTask task, double test_frac,
                                   std::uint64_t seed, const std::set<std::string>& forced_test = {});

/// Patient ids owning at least one image with the given role.
std::set<std::string> patients_with(const SplitAssignment& assignment, const DatasetManifest& manifest, Role role);

/// Partitions pool patients into k folds. Within each stratum, patients are
/// shuffled, ordered by image count (largest first) and dealt to the fold
/// with the fewest images of that stratum.
/// Throws Error{InvalidArgument} for k < 2, Error{InsufficientClassMembers}
/// if a stratum has fewer than k pool patients.
SplitAssignment make_cv_folds(const SplitAssignment& holdout, const DatasetManifest& manifest, int k,
                              std::uint64_t seed);

/// Patient ids whose images do not all share one role.
std::vector<std::string> verify_no_leakage(const SplitAssignment& assignment, const DatasetManifest& manifest);

/// Columns: image_id,role (role = test | pool | fold<k>). Task, seed and
/// fold count go to a `<stem>.meta.json` sidecar.
void write_splits(const SplitAssignment& assignment, const std::filesystem::path& path);
SplitAssignment read_splits(const std::filesystem::path& path);

}  // namespace mammo
