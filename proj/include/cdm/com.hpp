#pragma once

#include <span>
#include <vector>

#include "cdm/clifford.hpp"

namespace cdm {

/// Subtracts the mean position (unit masses). Throws std::invalid_argument
/// for an empty input.
std::vector<Vec3> com_project(std::span<const Vec3> positions);

Vec3 centroid(std::span<const Vec3> positions);

}  // namespace cdm
