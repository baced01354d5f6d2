#pragma once

#include <string>
#include <vector>

#include "hoir/model.hpp"

namespace hoir {

struct GradCheckSuiteResult {
  std::string scope;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  int64_t checked = 0;
  int64_t skipped_nonsmooth = 0;
  bool pass = false;
  std::vector<std::string> lines;
};

// Finite-difference suites per scope, with the tolerances the project is
// held to: tensor ops and attention at 1e-4, logic at 1e-6, the minimal
// full model at 1e-3.
GradCheckSuiteResult gradcheck_tensor_ops(uint64_t seed = 1);
GradCheckSuiteResult gradcheck_attention(uint64_t seed = 1);
GradCheckSuiteResult gradcheck_logic(uint64_t seed = 1);
GradCheckSuiteResult gradcheck_full_model(uint64_t seed = 1);

// Central-difference check of d(loss)/d(theta) for a sample of model
// parameters, where loss sums every prediction output. Coordinates whose
// one-sided slopes disagree (ranking flips, max ties) are skipped.
// Returns the worst relative error over the sampled coordinates.
struct ModelGradCheckResult {
  double worst_rel_error = 0.0;
  int64_t checked = 0;
  int64_t skipped_nonsmooth = 0;
};
ModelGradCheckResult model_param_grad_check(Model& model,
                                            const Tensor& features,
                                            int64_t coords_per_param = 2,
                                            double h = 1e-5);

}  // namespace hoir
