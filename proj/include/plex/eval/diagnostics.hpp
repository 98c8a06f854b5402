#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace plex::eval {

// One finite-difference comparison in double precision.
struct GradCheckLine {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;  // parameter[element] with the largest error
};

inline constexpr double kGradCheckTolerance = 1e-4;

// Every differentiable tensor op on small random inputs.
std::vector<GradCheckLine> op_gradient_checks(std::uint64_t seed);

// Planner, executor and end-to-end losses at the tiny config (h = 8, one layer, one head, K = 3),
// with returns enabled. The planner loss is checked against the non-visual parameters only, since
// the visual rows are cut from its graph.
std::vector<GradCheckLine> loss_gradient_checks(std::uint64_t seed);

}  // namespace plex::eval
