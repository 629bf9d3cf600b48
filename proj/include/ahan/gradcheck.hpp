#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ahan/model.hpp"

namespace ahan {

struct GradcheckSample {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckSample> samples;
    double max_rel_error = 0.0;
};

/// Relative error with a floor on the denominator: |a - n| / max(|a|, |n|, floor).
double grad_rel_error(double analytic, double numeric, double floor);

/// Total training loss on a seeded random batch (two twin families, gate open), with analytic
/// gradients compared against central differences at `n_samples` random parameter coordinates.
GradcheckReport end_to_end_gradcheck(const AhanConfig& config, std::uint64_t seed, std::size_t n_samples = 20,
                                     double eps = 1e-5, double floor = 1e-6);

}  // namespace ahan
