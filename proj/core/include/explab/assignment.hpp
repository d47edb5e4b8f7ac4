#pragma once

// Deterministic arm assignment and per-user corpus ablation.
//
// All randomness here is a salted 64-bit hash (FNV-1a + fmix64), so an
// assignment never depends on call order, process, or platform.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "explab/types.hpp"

namespace explab {

enum class DiversionMode { UserOnly, UserCorpusCoDiverted };

struct ArmShare {
  ArmId arm = 0;
  double user_fraction = 0.0;
  double corpus_fraction = 0.0;
};

class DiversionPlan {
 public:
  /// Throws std::invalid_argument when fractions are negative, sum above 1 on
  /// either axis, arms repeat, or (codiverted) user and corpus fractions of an
  /// arm differ.
  DiversionPlan(std::string salt, std::vector<ArmShare> arms, DiversionMode mode);

  const std::string& salt() const { return salt_; }
  const std::vector<ArmShare>& arms() const { return arms_; }
  DiversionMode mode() const { return mode_; }

 private:
  std::string salt_;
  std::vector<ArmShare> arms_;
  DiversionMode mode_;
};

/// Hash of (salt, user_id) bucketed by cumulative user fractions. Users past
/// the last bucket are not in the experiment.
std::optional<ArmId> assign_user(UserId user, const DiversionPlan& plan);

/// Provider-level corpus assignment, hashed under salt + "corpus". Every item
/// of a provider inherits the provider's arm. Throws std::logic_error in
/// UserOnly mode.
std::optional<ArmId> assign_corpus(ProviderId provider, const DiversionPlan& plan);

struct AblationSpec {
  /// Fraction x of nominations removed per user, in [0, 1).
  double fraction = 0.0;
  std::string salt = "ablation";

  void validate() const;
};

/// Per-user seed s_u; identical for every request of the same user.
std::uint64_t ablation_seed(const AblationSpec& spec, UserId user);

/// Inflated nominator size ceil(n / (1 - x)).
std::size_t inflated_count(std::size_t n, double fraction);

/// True when content survives the user's ablation filter.
bool survives_ablation(std::uint64_t user_seed, ContentId content, double fraction);

/// Drops every item whose hash under s_u falls below x; survivors keep their
/// order. Throws std::invalid_argument if x is outside [0, 1).
std::vector<std::vector<ContentId>> ablate_nominations(
    const std::vector<std::vector<ContentId>>& lists, const AblationSpec& spec, UserId user);

}  // namespace explab
