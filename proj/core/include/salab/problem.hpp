#pragma once

#include <string>
#include <variant>
#include <vector>

#include "salab/config.hpp"
#include "salab/kernels.hpp"
#include "salab/mean_field.hpp"
#include "salab/sa_engine.hpp"

namespace salab {

using FiniteProblem = Problem<FiniteKernel, FiniteMap>;
using ClippedProblem = Problem<ClippedARKernel, ScalarStateMap>;
using LangevinProblem = Problem<ProjectedLangevinKernel, VectorStateMap>;
using MHProblem = Problem<MHKernel, ScalarStateMap>;

using AnyProblem = std::variant<FiniteProblem, ClippedProblem, LangevinProblem, MHProblem>;

// A problem assembled from a config section, plus what the pipeline needs to
// know about it without inspecting the variant.
struct BuiltProblem {
  AnyProblem problem;
  std::string kernel_name;
  std::string map_name;
  bool finite = false;
  int dim = 0;
};

const std::vector<std::string>& known_kernels();
bool kernel_is_finite(const std::string& kernel_name);

// Interprets a [problem] section.  Throws ConfigError with one message per
// bad or missing key; `source_name` prefixes the diagnostics.
BuiltProblem build_problem(const ConfigSection& section, const std::string& source_name);

}  // namespace salab
