#pragma once

// Scenario mean-CVaR portfolio selection:
//
//   min_w CVaR_q(-Y w)  s.t.  sum w = 1,  mu' w = R0,  w >= 0.
//
// The LP is solved through its dual, whose basis has N + 1 rows whatever the
// scenario count n:
//
//   max  lambda + eta R0
//   s.t. sum_j pi_j = 1,   0 <= pi_j <= 1 / ((1 - q) n),
//        sum_j Y_jk pi_j + lambda + eta mu_k <= 0   for every asset k.
//
// Weights and the VaR threshold are read off the simplex multipliers.

#include "gfagru/gen_factor.hpp"

#include <span>
#include <string>
#include <vector>

namespace gfagru {

struct CvarValue {
    double cvar = 0.0;
    double var_threshold = 0.0;
};

/// Exact minimizer of a + sum (loss - a)^+ / ((1 - q) n); a is the
/// ceil(q n)-th smallest loss (left end of the minimizer interval).
CvarValue empirical_cvar(std::span<const double> losses, double q);

struct CvarProblem {
    std::span<const double> scenarios;  // rows x cols, row-major returns
    std::size_t rows = 0;
    std::size_t cols = 0;
    double q = 0.95;
    double target = 0.0;
    std::vector<double> mu;  // empty: column means of the scenarios

    static CvarProblem from(const ScenarioMatrix& scen, double q, double target);
};

enum class SolveStatus { optimal, infeasible };

std::string to_string(SolveStatus s);

struct CvarSolution {
    SolveStatus status = SolveStatus::infeasible;
    std::vector<double> weights;
    double var_threshold = 0.0;
    double objective = 0.0;       // empirical CVaR at the returned weights
    double dual_objective = 0.0;  // LP optimum from the dual side
    std::size_t iterations = 0;
};

CvarSolution solve(const CvarProblem& problem);

/// Independent solves; infeasible targets are reported, not thrown.
std::vector<CvarSolution> frontier(const ScenarioMatrix& scen, double q, std::span<const double> targets);

}  // namespace gfagru
