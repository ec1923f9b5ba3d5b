#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cmp {

// How the step after this record ended. kTruncated marks a rollout-buffer cut
// mid-episode (not a real terminal); its target bootstraps from the estimator.
enum class TerminalTag { kContinue, kFailure, kTimeout, kTruncated };

// One estimator training unit: the state/latent pair that was executed plus
// everything needed to form its safety target.
struct SafetyRecord {
  std::vector<double> state;                    // estimator features, without z
  std::vector<double> z;                        // latent intent executed at s_t
  double safe = 1.0;                            // I(s_t)
  TerminalTag tag = TerminalTag::kContinue;
  double bootstrap = 0.0;                       // W_hat(s_{t+1}, 0)
  double target = 0.0;                          // filled by td_lambda_targets
};

struct TdOptions {
  double lambda = 0.8;
  // sensitivity switch: treat episode timeouts like truncations instead of
  // crediting them as perpetually safe
  bool bootstrap_timeout = false;
};

// Backward recursion over one episode:
//   last record: failure -> 0, timeout -> 1, truncated -> bootstrap
//   earlier:     (1-lambda) * bootstrap_t + lambda * target_{t+1}
// every target is additionally gated by I(s_t).
inline void td_lambda_targets(std::vector<SafetyRecord>& traj, const TdOptions& opt = {}) {
  if (traj.empty()) throw std::invalid_argument("td_lambda_targets: empty trajectory");
  if (opt.lambda < 0.0 || opt.lambda > 1.0)
    throw std::invalid_argument("td_lambda_targets: lambda outside [0,1]");
  for (std::size_t t = 0; t + 1 < traj.size(); ++t)
    if (traj[t].tag != TerminalTag::kContinue)
      throw std::invalid_argument("td_lambda_targets: terminal tag before the last record (t=" +
                                  std::to_string(t) + ")");

  SafetyRecord& last = traj.back();
  switch (last.tag) {
    case TerminalTag::kFailure: last.target = 0.0; break;
    case TerminalTag::kTimeout: last.target = opt.bootstrap_timeout ? last.bootstrap : 1.0; break;
    case TerminalTag::kTruncated: last.target = last.bootstrap; break;
    case TerminalTag::kContinue:
      throw std::invalid_argument("td_lambda_targets: trajectory does not end in a terminal tag");
  }
  last.target *= last.safe;

  for (std::size_t i = traj.size() - 1; i-- > 0;) {
    traj[i].target =
        traj[i].safe *
        ((1.0 - opt.lambda) * traj[i].bootstrap + opt.lambda * traj[i + 1].target);
  }
}

}  // namespace cmp
