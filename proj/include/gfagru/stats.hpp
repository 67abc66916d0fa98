#pragma once

// Small numerical helpers shared by the benchmarks and the backtest.

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gfagru::stats {

/// Survival function of the chi-square law; dof 1 and 2 only.
double chi2_sf(double x, int dof);

double mean(std::span<const double> x);
/// Population variance (divides by n).
double variance(std::span<const double> x);

struct MinimizeResult {
    std::vector<double> x;
    double value = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

struct MinimizeOptions {
    std::size_t max_iterations = 500;
    double gradient_tol = 1e-6;
    double step = 1e-6;  // central-difference step
};

/// Unconstrained BFGS with central-difference gradients and a backtracking
/// line search. Non-finite objective values count as +inf.
MinimizeResult minimize_bfgs(const std::function<double(std::span<const double>)>& f, std::vector<double> x0,
                             const MinimizeOptions& opt = {});

}  // namespace gfagru::stats
