#include "explab/assignment.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "explab/random.hpp"

namespace explab {

DiversionPlan::DiversionPlan(std::string salt, std::vector<ArmShare> arms, DiversionMode mode)
    : salt_(std::move(salt)), arms_(std::move(arms)), mode_(mode) {
  if (arms_.empty()) throw std::invalid_argument("diversion plan needs at least one arm");
  double users = 0.0;
  double corpus = 0.0;
  std::set<ArmId> seen;
  for (const ArmShare& a : arms_) {
    if (!seen.insert(a.arm).second) throw std::invalid_argument("arm listed twice in plan");
    if (a.user_fraction < 0.0 || a.corpus_fraction < 0.0) {
      throw std::invalid_argument("negative traffic fraction");
    }
    if (mode_ == DiversionMode::UserCorpusCoDiverted && a.user_fraction != a.corpus_fraction) {
      throw std::invalid_argument(
          "codiverted plan must give each arm equal user and corpus fractions");
    }
    users += a.user_fraction;
    corpus += a.corpus_fraction;
  }
  constexpr double kSlack = 1e-12;
  if (users > 1.0 + kSlack || corpus > 1.0 + kSlack) {
    throw std::invalid_argument("arm fractions sum above 1");
  }
}

namespace {

std::optional<ArmId> bucket(double u, const std::vector<ArmShare>& arms, bool corpus_axis) {
  double edge = 0.0;
  for (const ArmShare& a : arms) {
    edge += corpus_axis ? a.corpus_fraction : a.user_fraction;
    if (u < edge) return a.arm;
  }
  return std::nullopt;
}

}  // namespace

std::optional<ArmId> assign_user(UserId user, const DiversionPlan& plan) {
  const double u = hash_to_unit(salted_hash(plan.salt(), user));
  return bucket(u, plan.arms(), false);
}

std::optional<ArmId> assign_corpus(ProviderId provider, const DiversionPlan& plan) {
  if (plan.mode() != DiversionMode::UserCorpusCoDiverted) {
    throw std::logic_error("corpus assignment requires a codiverted plan");
  }
  const double u = hash_to_unit(salted_hash(plan.salt() + "corpus", provider));
  return bucket(u, plan.arms(), true);
}

void AblationSpec::validate() const {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("ablation fraction must lie in [0, 1)");
  }
}

std::uint64_t ablation_seed(const AblationSpec& spec, UserId user) {
  return salted_hash(spec.salt, user);
}

std::size_t inflated_count(std::size_t n, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("ablation fraction must lie in [0, 1)");
  }
  const double exact = static_cast<double>(n) / (1.0 - fraction);
  // Guard against 10 / 0.5 landing a hair above 20.
  const double rounded = std::round(exact);
  if (std::abs(exact - rounded) < 1e-9) return static_cast<std::size_t>(rounded);
  return static_cast<std::size_t>(std::ceil(exact));
}

bool survives_ablation(std::uint64_t user_seed, ContentId content, double fraction) {
  if (fraction <= 0.0) return true;
  return hash_to_unit(fmix64(user_seed ^ fmix64(content))) >= fraction;
}

std::vector<std::vector<ContentId>> ablate_nominations(
    const std::vector<std::vector<ContentId>>& lists, const AblationSpec& spec, UserId user) {
  spec.validate();
  const std::uint64_t seed = ablation_seed(spec, user);
  std::vector<std::vector<ContentId>> out;
  out.reserve(lists.size());
  for (const auto& list : lists) {
    std::vector<ContentId> kept;
    kept.reserve(list.size());
    for (ContentId c : list) {
      if (survives_ablation(seed, c, spec.fraction)) kept.push_back(c);
    }
    out.push_back(std::move(kept));
  }
  return out;
}

}  // namespace explab
