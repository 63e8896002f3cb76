#pragma once

#include "geoformer/model.hpp"

#include <functional>
#include <string>
#include <vector>

namespace geoformer {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
};

/// Max relative error between reverse-mode and central-difference gradients
/// of a scalar-valued function, over every coordinate of every input.
/// rel = |ad - fd| / max(1, |ad|, |fd|).
double gradcheck_function(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> inputs);

/// Every differentiable op plus a tiny end-to-end model
/// (d_model=8, 1 block per encoder, 4 patches, L=4).
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed);

bool gradcheck_all_passed(const std::vector<GradCheckResult>& results, double tol);

} // namespace geoformer
