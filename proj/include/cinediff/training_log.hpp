#pragma once

#include <limits>
#include <string>
#include <vector>

namespace cinediff {

struct TrainingLog
{
  std::vector<double> loss_history; // entry 0 is the loss before any update
  long steps = 0;
  std::string optimizer;
  // Fixed-draw evaluation loss before and after training, where the trainer computes one.
  double probe_before = std::numeric_limits<double>::quiet_NaN();
  double probe_after = std::numeric_limits<double>::quiet_NaN();
};

} // namespace cinediff
