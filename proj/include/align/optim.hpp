#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "align/param_table.hpp"

namespace align::optim {

enum class Method { GD, ADAM };

std::string to_string(Method m);
Method parse_method(const std::string& text);

struct OptimizerConfig {
  Method method = Method::GD;
  double step_size = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t max_iters = 1000;
  double grad_tol = 1e-8;
  /// GD only: Armijo backtracking starting from step_size.
  bool line_search = false;

  bool operator==(const OptimizerConfig&) const = default;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

struct Evaluation {
  double value = 0.0;
  ParamTable gradient;  // rows may be a subset of the parameters
};

using Objective = std::function<Evaluation(const ParamTable&)>;

struct TracePoint {
  std::size_t iter = 0;
  double value = 0.0;
  double grad_norm = 0.0;
};

struct OptimResult {
  ParamTable params;
  double value = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<TracePoint> trace;
};

using Observer = std::function<void(const TracePoint&, const ParamTable&)>;

/// Iterates until the gradient norm is <= grad_tol or max_iters steps were
/// taken. Throws NumericAbort with the iteration index on a non-finite value
/// or gradient, KeyError when a gradient row names an unknown parameter.
OptimResult optimize(const Objective& fn, ParamTable x0, const OptimizerConfig& cfg, const Observer& observer = {});

}  // namespace align::optim
