#pragma once

#include <cstdint>
#include <limits>

namespace explab {

using UserId = std::uint64_t;
using ContentId = std::uint64_t;
using ProviderId = std::uint64_t;
using ArmId = std::uint32_t;

inline constexpr ArmId kNoArm = std::numeric_limits<ArmId>::max();

}  // namespace explab
