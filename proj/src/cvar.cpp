#include "gfagru/cvar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gfagru {

CvarValue empirical_cvar(std::span<const double> losses, double q) {
    if (losses.empty()) throw std::invalid_argument("empirical_cvar: no losses");
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("empirical_cvar: q must lie in (0, 1)");
    const std::size_t n = losses.size();
    std::vector<double> sorted(losses.begin(), losses.end());
    auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, n);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
    const double a = sorted[k - 1];
    double excess = 0.0;
    for (double l : losses) excess += std::max(0.0, l - a);
    return CvarValue{a + excess / ((1.0 - q) * static_cast<double>(n)), a};
}

CvarProblem CvarProblem::from(const ScenarioMatrix& scen, double q, double target) {
    CvarProblem p;
    p.scenarios = scen.values;
    p.rows = scen.rows;
    p.cols = scen.cols();
    p.q = q;
    p.target = target;
    return p;
}

std::string to_string(SolveStatus s) { return s == SolveStatus::optimal ? "optimal" : "infeasible"; }

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class VarState { basic, lower, upper, free_zero };

// Bounded-variable revised simplex on the dual LP with a dense basis inverse.
class DualSimplex {
public:
    DualSimplex(const CvarProblem& p, std::span<const double> mu)
        : y_(p.scenarios), mu_(mu), n_(p.rows), k_(p.cols), m_(p.cols + 1), target_(p.target) {
        cap_ = 1.0 / ((1.0 - p.q) * static_cast<double>(n_));
        nv_ = n_ + 2 + k_;
        x_.assign(nv_, 0.0);
        state_.assign(nv_, VarState::lower);
        state_[lambda()] = VarState::free_zero;
        state_[eta()] = VarState::free_zero;
        crash();
    }

    std::size_t run() {
        const std::size_t max_iter = 50 * (nv_ + m_) + 1000;
        std::size_t stalls = 0;
        bool bland = false;
        std::size_t since_refactor = 0;
        std::vector<double> y(m_), col(m_), alpha(m_);
        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            multipliers(y);
            // pricing
            std::size_t enter = nv_;
            double best = 0.0;
            int dir = 0;
            for (std::size_t j = 0; j < nv_; ++j) {
                if (state_[j] == VarState::basic) continue;
                const double r = reduced_cost(j, y);
                int d = 0;
                if (state_[j] == VarState::lower && r < -kOptTol) d = 1;
                else if (state_[j] == VarState::upper && r > kOptTol) d = -1;
                else if (state_[j] == VarState::free_zero && std::abs(r) > kOptTol) d = r < 0 ? 1 : -1;
                if (d == 0) continue;
                if (bland) {
                    enter = j;
                    dir = d;
                    best = std::abs(r);
                    break;
                }
                if (std::abs(r) > best) {
                    best = std::abs(r);
                    enter = j;
                    dir = d;
                }
            }
            if (enter == nv_) return iter;

            column(enter, col);
            for (std::size_t i = 0; i < m_; ++i) {
                double s = 0.0;
                for (std::size_t c = 0; c < m_; ++c) s += binv_[i * m_ + c] * col[c];
                alpha[i] = s * dir;
            }
            // ratio test
            double step = upper(enter) - lower(enter);
            std::size_t leave = m_;
            double leave_mag = 0.0;
            for (std::size_t i = 0; i < m_; ++i) {
                const std::size_t b = head_[i];
                double ratio = kInf;
                if (alpha[i] > kPivTol && lower(b) > -kInf) {
                    ratio = std::max(0.0, (x_[b] - lower(b)) / alpha[i]);
                } else if (alpha[i] < -kPivTol && upper(b) < kInf) {
                    ratio = std::max(0.0, (upper(b) - x_[b]) / -alpha[i]);
                }
                if (ratio < step || (ratio == step && leave < m_ && std::abs(alpha[i]) > leave_mag)) {
                    step = ratio;
                    leave = i;
                    leave_mag = std::abs(alpha[i]);
                }
            }
            if (step == kInf) return kUnbounded;

            if (best * step < 1e-14) {
                if (++stalls > 50) bland = true;
            } else {
                stalls = 0;
                bland = false;
            }
            x_[enter] += dir * step;
            for (std::size_t i = 0; i < m_; ++i) x_[head_[i]] -= step * alpha[i];
            if (leave == m_) {
                state_[enter] = state_[enter] == VarState::lower ? VarState::upper : VarState::lower;
                x_[enter] = state_[enter] == VarState::lower ? lower(enter) : upper(enter);
                continue;
            }
            const std::size_t out = head_[leave];
            state_[out] = alpha[leave] > 0 ? VarState::lower : VarState::upper;
            x_[out] = state_[out] == VarState::lower ? lower(out) : upper(out);
            state_[enter] = VarState::basic;
            head_[leave] = enter;
            // pivot on the undirected column entry
            const double piv = alpha[leave] * dir;
            for (std::size_t c = 0; c < m_; ++c) binv_[leave * m_ + c] /= piv;
            for (std::size_t i = 0; i < m_; ++i) {
                if (i == leave) continue;
                const double f = alpha[i] * dir;
                if (f == 0.0) continue;
                for (std::size_t c = 0; c < m_; ++c) binv_[i * m_ + c] -= f * binv_[leave * m_ + c];
            }
            if (++since_refactor >= 100) {
                refactor();
                since_refactor = 0;
            }
        }
        throw NumericError("CVaR solver: iteration limit reached");
    }

    /// Multipliers after a fresh factorization.
    std::vector<double> final_multipliers() {
        refactor();
        std::vector<double> y(m_);
        multipliers(y);
        return y;
    }

    double dual_objective() const { return x_[lambda()] + target_ * x_[eta()]; }

    static constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

private:
    static constexpr double kOptTol = 1e-11;
    static constexpr double kPivTol = 1e-11;

    std::size_t lambda() const { return n_; }
    std::size_t eta() const { return n_ + 1; }
    std::size_t slack(std::size_t k) const { return n_ + 2 + k; }

    double lower(std::size_t j) const { return (j == lambda() || j == eta()) ? -kInf : 0.0; }
    double upper(std::size_t j) const {
        if (j < n_) return cap_;
        return kInf;
    }
    double cost(std::size_t j) const {
        if (j == lambda()) return -1.0;
        if (j == eta()) return -target_;
        return 0.0;
    }

    void column(std::size_t j, std::vector<double>& col) const {
        std::fill(col.begin(), col.end(), 0.0);
        if (j < n_) {
            col[0] = 1.0;
            for (std::size_t k = 0; k < k_; ++k) col[k + 1] = y_[j * k_ + k];
        } else if (j == lambda()) {
            for (std::size_t k = 0; k < k_; ++k) col[k + 1] = 1.0;
        } else if (j == eta()) {
            for (std::size_t k = 0; k < k_; ++k) col[k + 1] = mu_[k];
        } else {
            col[j - n_ - 2 + 1] = 1.0;
        }
    }

    double reduced_cost(std::size_t j, const std::vector<double>& y) const {
        if (j < n_) {
            double s = y[0];
            const double* row = &y_[j * k_];
            for (std::size_t k = 0; k < k_; ++k) s += y[k + 1] * row[k];
            return -s;
        }
        if (j == lambda()) {
            double s = 0.0;
            for (std::size_t k = 0; k < k_; ++k) s += y[k + 1];
            return -1.0 - s;
        }
        if (j == eta()) {
            double s = 0.0;
            for (std::size_t k = 0; k < k_; ++k) s += y[k + 1] * mu_[k];
            return -target_ - s;
        }
        return -y[j - n_ - 2 + 1];
    }

    void multipliers(std::vector<double>& y) const {
        for (std::size_t c = 0; c < m_; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < m_; ++i) s += cost(head_[i]) * binv_[i * m_ + c];
            y[c] = s;
        }
    }

    // Feasible start: the worst equal-weight scenarios at the cap, one
    // fractional pi basic on the sum row, lambda basic on the binding asset row.
    void crash() {
        std::vector<double> ew(n_, 0.0);
        for (std::size_t j = 0; j < n_; ++j) {
            for (std::size_t k = 0; k < k_; ++k) ew[j] -= y_[j * k_ + k];
        }
        std::vector<std::size_t> order(n_);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ew[a] > ew[b]; });
        std::size_t full = static_cast<std::size_t>(std::floor(1.0 / cap_ + 1e-9));
        while (full > 0 && static_cast<double>(full) * cap_ > 1.0) --full;
        full = std::min(full, n_ - 1);
        for (std::size_t t = 0; t < full; ++t) {
            x_[order[t]] = cap_;
            state_[order[t]] = VarState::upper;
        }
        const std::size_t frac = order[full];
        x_[frac] = std::max(0.0, 1.0 - static_cast<double>(full) * cap_);

        std::vector<double> load(k_, 0.0);
        for (std::size_t j = 0; j < n_; ++j) {
            if (x_[j] == 0.0) continue;
            for (std::size_t k = 0; k < k_; ++k) load[k] += y_[j * k_ + k] * x_[j];
        }
        const std::size_t bind = static_cast<std::size_t>(std::max_element(load.begin(), load.end()) - load.begin());
        head_.assign(m_, 0);
        head_[0] = frac;
        state_[frac] = VarState::basic;
        for (std::size_t k = 0; k < k_; ++k) {
            if (k == bind) {
                head_[k + 1] = lambda();
                state_[lambda()] = VarState::basic;
            } else {
                head_[k + 1] = slack(k);
                state_[slack(k)] = VarState::basic;
            }
        }
        refactor();
    }

    void refactor() {
        std::vector<double> b(m_ * m_, 0.0), col(m_);
        for (std::size_t i = 0; i < m_; ++i) {
            column(head_[i], col);
            for (std::size_t r = 0; r < m_; ++r) b[r * m_ + i] = col[r];
        }
        binv_.assign(m_ * m_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) binv_[i * m_ + i] = 1.0;
        for (std::size_t c = 0; c < m_; ++c) {
            std::size_t piv = c;
            for (std::size_t r = c + 1; r < m_; ++r) {
                if (std::abs(b[r * m_ + c]) > std::abs(b[piv * m_ + c])) piv = r;
            }
            if (std::abs(b[piv * m_ + c]) < 1e-13) throw NumericError("CVaR solver: singular basis");
            if (piv != c) {
                for (std::size_t k = 0; k < m_; ++k) {
                    std::swap(b[piv * m_ + k], b[c * m_ + k]);
                    std::swap(binv_[piv * m_ + k], binv_[c * m_ + k]);
                }
            }
            const double d = b[c * m_ + c];
            for (std::size_t k = 0; k < m_; ++k) {
                b[c * m_ + k] /= d;
                binv_[c * m_ + k] /= d;
            }
            for (std::size_t r = 0; r < m_; ++r) {
                if (r == c) continue;
                const double f = b[r * m_ + c];
                if (f == 0.0) continue;
                for (std::size_t k = 0; k < m_; ++k) {
                    b[r * m_ + k] -= f * b[c * m_ + k];
                    binv_[r * m_ + k] -= f * binv_[c * m_ + k];
                }
            }
        }
        // x_B = B^-1 (b - N x_N)
        std::vector<double> rhs(m_, 0.0);
        rhs[0] = 1.0;
        for (std::size_t j = 0; j < nv_; ++j) {
            if (state_[j] == VarState::basic || x_[j] == 0.0) continue;
            column(j, col);
            for (std::size_t r = 0; r < m_; ++r) rhs[r] -= col[r] * x_[j];
        }
        for (std::size_t i = 0; i < m_; ++i) {
            double s = 0.0;
            for (std::size_t c = 0; c < m_; ++c) s += binv_[i * m_ + c] * rhs[c];
            x_[head_[i]] = s;
        }
    }

    std::span<const double> y_;
    std::span<const double> mu_;
    std::size_t n_, k_, m_, nv_ = 0;
    double target_;
    double cap_ = 0.0;
    std::vector<double> x_;
    std::vector<VarState> state_;
    std::vector<std::size_t> head_;
    std::vector<double> binv_;
};

}  // namespace

CvarSolution solve(const CvarProblem& p) {
    if (p.rows == 0 || p.cols == 0) throw std::invalid_argument("CVaR solve: empty scenario matrix");
    if (p.scenarios.size() != p.rows * p.cols) throw std::invalid_argument("CVaR solve: scenario size mismatch");
    if (!(p.q > 0.0 && p.q < 1.0)) throw std::invalid_argument("CVaR solve: q must lie in (0, 1)");
    for (double v : p.scenarios) {
        if (!std::isfinite(v)) throw NumericError("CVaR solve: non-finite scenario value");
    }
    std::vector<double> mu = p.mu;
    if (mu.empty()) {
        mu.assign(p.cols, 0.0);
        for (std::size_t r = 0; r < p.rows; ++r) {
            for (std::size_t c = 0; c < p.cols; ++c) mu[c] += p.scenarios[r * p.cols + c];
        }
        for (double& m : mu) m /= static_cast<double>(p.rows);
    }
    if (mu.size() != p.cols) throw std::invalid_argument("CVaR solve: mean vector has the wrong length");

    CvarSolution sol;
    const auto [lo, hi] = std::minmax_element(mu.begin(), mu.end());
    const double slack = 1e-12 * std::max(1.0, std::abs(p.target));
    if (p.target < *lo - slack || p.target > *hi + slack) return sol;

    DualSimplex simplex(p, mu);
    const std::size_t iters = simplex.run();
    if (iters == DualSimplex::kUnbounded) return sol;
    const auto y = simplex.final_multipliers();
    sol.iterations = iters;
    sol.weights.resize(p.cols);
    for (std::size_t k = 0; k < p.cols; ++k) {
        const double w = -y[k + 1];
        if (w < -1e-8) throw NumericError("CVaR solve: recovered weight " + std::to_string(w) + " is negative");
        sol.weights[k] = std::max(0.0, w);
    }
    std::vector<double> losses(p.rows);
    for (std::size_t r = 0; r < p.rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < p.cols; ++c) s += p.scenarios[r * p.cols + c] * sol.weights[c];
        losses[r] = -s;
    }
    const CvarValue v = empirical_cvar(losses, p.q);
    sol.objective = v.cvar;
    sol.var_threshold = v.var_threshold;
    sol.dual_objective = simplex.dual_objective();
    sol.status = SolveStatus::optimal;
    const double gap = std::abs(sol.objective - sol.dual_objective);
    if (gap > 1e-6 * std::max(1.0, std::abs(sol.objective))) {
        throw NumericError("CVaR solve: duality gap " + std::to_string(gap) + " exceeds tolerance");
    }
    return sol;
}

std::vector<CvarSolution> frontier(const ScenarioMatrix& scen, double q, std::span<const double> targets) {
    if (targets.empty()) throw std::invalid_argument("frontier: no targets");
    std::vector<CvarSolution> out;
    for (double t : targets) out.push_back(solve(CvarProblem::from(scen, q, t)));
    return out;
}

}  // namespace gfagru
