#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tvr {

// Central-difference audit of every hand-written gradient. Each entry is one
// operation at one width; max_rel_err is the worst per-coordinate gap between
// the analytic gradient and the numeric one.
struct GradCheckEntry {
  std::string op;
  int dim = 0;
  int probes = 0;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double worst() const;
  bool all_below(double tol) const;
};

struct GradCheckOptions {
  std::vector<int> dims{2, 4, 8};
  double step = 1e-4;
  // Test hook: the analytic gradient of this op is corrupted before the
  // comparison, so an honest checker has to flag it.
  std::string sabotage_op;
};

GradCheckReport gradcheck_all(std::uint64_t seed,
                              const GradCheckOptions& opts = {});

}  // namespace tvr
