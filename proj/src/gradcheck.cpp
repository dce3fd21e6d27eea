#include "ecor/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ecor/errors.hpp"

namespace ecor {

double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-2});
    return std::abs(a - b) / denom;
}

FdReport fd_check(std::vector<FdSpec>& specs, const std::function<double()>& eval,
                  double eps, size_t max_probes_per_param, Rng* rng) {
    FdReport report;
    for (FdSpec& spec : specs) {
        if (spec.value == nullptr) {
            throw contract_error("fd_check: spec '" + spec.name + "' has no value");
        }
        std::vector<double>& v = *spec.value;
        if (spec.analytic.size() != v.size()) {
            throw contract_error("fd_check: spec '" + spec.name +
                                 "' analytic gradient size mismatch");
        }
        std::vector<size_t> coords;
        if (v.size() <= max_probes_per_param) {
            coords.resize(v.size());
            for (size_t i = 0; i < v.size(); ++i) coords[i] = i;
        } else {
            if (rng == nullptr) {
                throw contract_error("fd_check: sampling requested without an rng");
            }
            coords = rng->sample_without_replacement(v.size(), max_probes_per_param);
        }
        for (size_t i : coords) {
            const double saved = v[i];
            v[i] = saved + eps;
            const double f_plus = eval();
            v[i] = saved - eps;
            const double f_minus = eval();
            v[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double rel = relative_error(spec.analytic[i], numeric);
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_name = spec.name;
                report.worst_index = i;
                report.worst_analytic = spec.analytic[i];
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace ecor
