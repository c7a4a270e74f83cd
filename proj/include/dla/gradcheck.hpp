#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dla/params.hpp"

namespace dla {

// Central-difference verification of the recorded backward pass, 64-bit only.
// `fn` must rebuild the identical forward pass on every call (reseeding any
// internal randomness itself); it records on the given tape when non-null.
//
// Probes are sampled per tensor; coordinates whose analytic gradient is
// below `min_grad` are skipped because central differences cannot resolve
// them against the eps*|f| rounding floor. The reported error is
//   |analytic - cd| / max(1e-8, |analytic| + |cd|).
struct GradCheckOptions {
    double eps = 1e-5;
    int max_probes_per_tensor = 0;  // 0: probe every coordinate
    double min_grad = 1e-6;
    uint64_t seed = 0x9e3779b9;
};

struct GradProbe {
    std::string param;
    int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t probes = 0;
    GradProbe worst;
};

GradCheckReport grad_check(const std::function<Tensor<double>(Tape<double>*)>& fn,
                           ParamStore<double>& store, const GradCheckOptions& opt = {});

}  // namespace dla
