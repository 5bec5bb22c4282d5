#pragma once

#include <functional>
#include <string>
#include <vector>

#include "laat/model.hpp"

namespace laat {

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  int64_t entries = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  bool passed(double tolerance) const { return max_rel_error <= tolerance; }
};

struct GradCheckOptions {
  double epsilon = 1e-5;  // central-difference step
  // Fault-injection hook for tests: perturbs the analytic gradient of the
  // named group before comparison.
  std::string perturb_group;
  double perturb_delta = 1e-2;
};

// Compares the analytic gradient of the training loss against central
// finite differences, entry by entry, for every parameter group of the
// given model on one random document. Relative error uses
// |a-f| / max(|a|, |f|, 1e-6).
GradCheckReport gradcheck_model(const LaatConfig& config, uint64_t seed,
                                int doc_len = 5,
                                const GradCheckOptions& options = {});

}  // namespace laat
