#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace occsplat {

/// Scalar objective plus a fingerprint of its discrete state (ReLU pattern,
/// contributor set, ...). Finite differences are only trusted when the
/// fingerprint is the same at x − h, x and x + h.
struct Probe {
    double value = 0.0;
    std::uint64_t state = 0;
};

using ProbeFn = std::function<Probe(const Eigen::VectorXd&)>;

struct FdComparison {
    /// max |analytic − numeric| / max(max |numeric|, 1e-8) over checked coordinates.
    double rel_error = 0.0;
    bool stable = true;
};

/// Central differences of f at x over `coords` (all coordinates when empty).
FdComparison compare_finite_differences(const ProbeFn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
                                        double h, const std::vector<Eigen::Index>& coords = {});

struct GradcheckOptions {
    int instances = 20;
    double tolerance = 1e-4;
    std::uint64_t seed = 1;
    /// Operation whose analytic gradient is deliberately perturbed (harness self-test).
    std::string corrupt;
};

struct GradcheckResult {
    std::string op;
    int instances = 0;
    int discarded = 0;
    double max_rel_error = 0.0;
    bool passed = false;
    double seconds = 0.0;
};

/// Every backward-bearing operation the harness knows.
const std::vector<std::string>& gradcheck_ops();

/// Throws InvalidInput for an unknown op name.
GradcheckResult run_gradcheck(const std::string& op, const GradcheckOptions& opt);

} // namespace occsplat
