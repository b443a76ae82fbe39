#pragma once

// The invariant suite behind `align check`, plus the position-weighting audit
// comparing weighted_fkl_loss gradients with the exact occupancy-KL gradient.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "align/policy.hpp"
#include "align/prefix_tree.hpp"

namespace align::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
};

/// Random Boltzmann expert (rewards ~ N(0, 1), tau = 1) on `tree`.
policy::TabularPolicy random_expert(const mdp::PrefixTree& tree, std::uint64_t seed);

std::vector<CheckResult> run_invariants(std::uint64_t seed);

struct AuditRow {
  std::size_t instance = 0;
  std::size_t iteration = 0;
  double cos_wfkl_exact = 0.0;
  double cos_sft_exact = 0.0;
  double exact_loss = 0.0;
};

struct AuditReport {
  std::vector<AuditRow> rows;
  /// Worst finite-difference relative error of the exact objective's gradient.
  double exact_fd_error = 0.0;
  double mean_cos_wfkl = 0.0;
  double mean_cos_sft = 0.0;
};

/// V=3, C=3, FULL-order policies descending the exact occupancy KL from a
/// randomized start; cosines are recorded at every iteration.
AuditReport position_weight_audit(std::size_t instances, std::size_t iterations, std::uint64_t seed);

void write_audit_csv(std::ostream& out, const AuditReport& audit);
/// {"invariants": [...], "audit": {...}}
void write_check_json(std::ostream& out, const std::vector<CheckResult>& invariants, const AuditReport& audit);

}  // namespace align::checks
