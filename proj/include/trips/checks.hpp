#ifndef TRIPS_CHECKS_HPP_
#define TRIPS_CHECKS_HPP_

#include <string>
#include <vector>

#include "trips/losses.hpp"
#include "trips/net.hpp"

// Verification drivers shared by the CLI and the acceptance suite: the
// finite-difference gradient check over every loss, and the pseudo-sampler
// moment check.
namespace trips::checks {

inline const std::vector<std::string>& gradcheck_loss_names() {
  static const std::vector<std::string> names = {
      "classification", "distillation", "trips_base", "pseudo", "trips_incr", "total"};
  return names;
}

struct GradCheckResult {
  struct PerLoss {
    std::string name;
    double max_rel_err = 0.0;
    std::string worst_location;  // "param <id> [i,j]" of the worst coordinate
    int coords_checked = 0;
  };
  std::vector<PerLoss> per_loss;
  double threshold = 1e-4;
  bool pass = false;
};

// Central finite differences (h = 1e-5) against the tape gradients on
// `instances` random instances per loss (n <= 8, d <= 6, |C'| <= 5).
// `corrupt_loss`, when nonempty, perturbs that loss's analytic gradient so
// the negative control fails.
GradCheckResult run_gradcheck(int instances, std::uint64_t seed,
                              const std::string& corrupt_loss = "");

struct SampleCheckResult {
  int dim = 0;
  long draws = 0;
  double mean_err_norm = 0.0;
  double mean_tol = 0.0;  // 0.02 * sqrt(d)
  double cov_rel_err = 0.0;
  double cov_tol = 0.05;
  bool pass = false;
};

// Draws from a randomized SPD target through the prototype sampler and
// compares first and second sample moments against the target.
SampleCheckResult run_samplecheck(int dim, long draws, std::uint64_t seed);

}  // namespace trips::checks

#endif  // TRIPS_CHECKS_HPP_
