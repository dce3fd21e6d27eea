#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ecor/rng.hpp"

namespace ecor {

// Central-difference probe of an analytic gradient. The caller runs one
// forward+backward pass to fill `analytic`, then fd_check perturbs each
// chosen coordinate of `value` in place and re-evaluates the objective.
struct FdSpec {
    std::string name;
    std::vector<double>* value = nullptr;
    std::vector<double> analytic;
};

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_name;
    size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    size_t checked = 0;
};

// |a - b| over a floor that ignores noise near zero.
double relative_error(double a, double b);

// max_probes_per_param limits the coordinates probed per parameter; when a
// parameter is larger than the limit the coordinates are sampled with rng.
FdReport fd_check(std::vector<FdSpec>& specs, const std::function<double()>& eval,
                  double eps = 1e-5, size_t max_probes_per_param = SIZE_MAX,
                  Rng* rng = nullptr);

}  // namespace ecor
