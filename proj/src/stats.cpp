#include "gfagru/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace gfagru::stats {

double chi2_sf(double x, int dof) {
    if (x <= 0.0) return 1.0;
    if (dof == 1) return std::erfc(std::sqrt(x / 2.0));
    if (dof == 2) return std::exp(-x / 2.0);
    throw std::invalid_argument("chi2_sf: only 1 or 2 degrees of freedom");
}

double mean(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("mean: empty series");
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size());
}

namespace {

double safe_eval(const std::function<double(std::span<const double>)>& f, std::span<const double> x) {
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

std::vector<double> gradient(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                             double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const double step = h * std::max(1.0, std::abs(xi));
        x[i] = xi + step;
        const double up = safe_eval(f, x);
        x[i] = xi - step;
        const double dn = safe_eval(f, x);
        x[i] = xi;
        g[i] = (up - dn) / (2.0 * step);
        if (!std::isfinite(g[i])) g[i] = 0.0;
    }
    return g;
}

}  // namespace

MinimizeResult minimize_bfgs(const std::function<double(std::span<const double>)>& f, std::vector<double> x0,
                             const MinimizeOptions& opt) {
    const std::size_t n = x0.size();
    MinimizeResult res;
    res.x = std::move(x0);
    res.value = safe_eval(f, res.x);
    if (!std::isfinite(res.value)) throw std::runtime_error("minimize_bfgs: objective is not finite at the start");
    std::vector<double> h(n * n, 0.0);  // inverse Hessian
    for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;
    auto g = gradient(f, res.x, opt.step);
    for (; res.iterations < opt.max_iterations; ++res.iterations) {
        double gnorm = 0.0;
        for (double v : g) gnorm = std::max(gnorm, std::abs(v));
        if (gnorm < opt.gradient_tol) {
            res.converged = true;
            break;
        }
        std::vector<double> d(n, 0.0);
        double slope = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) d[i] -= h[i * n + j] * g[j];
            slope += d[i] * g[i];
        }
        if (slope >= 0.0) {  // lost descent: restart from steepest descent
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) h[i * n + j] = i == j ? 1.0 : 0.0;
                d[i] = -g[i];
            }
            slope = 0.0;
            for (std::size_t i = 0; i < n; ++i) slope += d[i] * g[i];
        }
        double t = 1.0;
        std::vector<double> xn(n);
        double fn = 0.0;
        bool moved = false;
        for (int k = 0; k < 60; ++k, t *= 0.5) {
            for (std::size_t i = 0; i < n; ++i) xn[i] = res.x[i] + t * d[i];
            fn = safe_eval(f, xn);
            if (fn <= res.value + 1e-4 * t * slope) {
                moved = true;
                break;
            }
        }
        if (!moved) {
            res.converged = gnorm < 1e3 * opt.gradient_tol;
            break;
        }
        auto gn = gradient(f, xn, opt.step);
        std::vector<double> s(n), y(n);
        double sy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = xn[i] - res.x[i];
            y[i] = gn[i] - g[i];
            sy += s[i] * y[i];
        }
        const double improvement = res.value - fn;
        res.x = xn;
        res.value = fn;
        g = std::move(gn);
        if (sy > 1e-12) {
            std::vector<double> hy(n, 0.0);
            double yhy = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) hy[i] += h[i * n + j] * y[j];
                yhy += y[i] * hy[i];
            }
            const double rho = 1.0 / sy;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        if (improvement < 1e-14 * std::max(1.0, std::abs(fn))) {
            res.converged = true;
            break;
        }
    }
    return res;
}

}  // namespace gfagru::stats
