#include "gfagru/gen_factor.hpp"

#include "gfagru/csv.hpp"
#include "gfagru/rng.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gfagru {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

struct Powers {
    double up;  // u^x
    double vm;  // v^-x
    double lu;  // ln u
    double lv;  // ln v
};

// u^x and v^-x through exp of the log; overflow is reported, never clipped
Powers powers(double x, double u, double v) {
    Powers p{};
    p.lu = std::log(u);
    p.lv = std::log(v);
    p.up = std::exp(x * p.lu);
    p.vm = std::exp(-x * p.lv);
    if (!std::isfinite(p.up) || !std::isfinite(p.vm)) {
        std::ostringstream msg;
        msg << "g-transform overflow at x=" << x << " (u=" << u << ", v=" << v << ")";
        throw NumericError(msg.str());
    }
    return p;
}

double g_raw(double x, double u, double v, double a) {
    const Powers p = powers(x, u, v);
    return x * ((p.up + p.vm) / a + 1.0);
}

double g_prime_raw(double x, double u, double v, double a) {
    const Powers p = powers(x, u, v);
    return (p.up + p.vm) / a + 1.0 + x * (p.up * p.lu - p.vm * p.lv) / a;
}

double g_second_raw(double x, double u, double v, double a) {
    const Powers p = powers(x, u, v);
    const double d = p.up * p.lu - p.vm * p.lv;
    const double s = p.up * p.lu * p.lu + p.vm * p.lv * p.lv;
    return (2.0 * d + x * s) / a;
}

double g_inverse_raw(double y, double u, double v, double a, double tol) {
    if (!std::isfinite(y)) throw NumericError("g_inverse: non-finite target value");
    if (!(tol > 0.0)) throw std::invalid_argument("g_inverse: tolerance must be positive");
    if (y == 0.0) return 0.0;
    const double eff_tol = std::max(tol, 8.0 * std::numeric_limits<double>::epsilon() * std::abs(y));
    double lo = -1.0;
    double hi = 1.0;
    for (int k = 0; g_raw(lo, u, v, a) > y; ++k) {
        if (k > 60) throw NumericError("g_inverse: bracket expansion failed below");
        lo *= 2.0;
    }
    for (int k = 0; g_raw(hi, u, v, a) < y; ++k) {
        if (k > 60) throw NumericError("g_inverse: bracket expansion failed above");
        hi *= 2.0;
    }
    double x = std::clamp(y / 1.5, lo, hi);
    for (int iter = 0; iter < 500; ++iter) {
        const double f = g_raw(x, u, v, a) - y;
        if (std::abs(f) <= eff_tol) return x;
        if (f < 0.0) {
            lo = x;
        } else {
            hi = x;
        }
        const double step = x - f / g_prime_raw(x, u, v, a);
        x = (step > lo && step < hi) ? step : 0.5 * (lo + hi);
        if (hi - lo <= std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x))) return x;
    }
    return x;
}

void check_scale(double a) {
    if (!(a > 0.0)) throw std::invalid_argument("g-transform: scaling constant must be positive");
}

}  // namespace

void TailParams::validate() const {
    if (!(u >= kTailMin && u <= kTailMax && v >= kTailMin && v <= kTailMax)) {
        std::ostringstream msg;
        msg << "tail parameters (" << u << ", " << v << ") outside [1, 3]";
        throw std::invalid_argument(msg.str());
    }
}

void ForecastedFactorModel::validate() const {
    check_scale(scale_a);
    if (!(market.beta > 0.0)) throw std::invalid_argument("factor model: market beta must be positive");
    tail_market.validate();
    if (stocks.empty()) throw std::invalid_argument("factor model: no stocks");
    for (const auto& s : stocks) {
        if (!(s.theta.gamma > 0.0)) {
            throw std::invalid_argument("factor model: gamma of '" + s.ticker + "' must be positive");
        }
        s.tail_market.validate();
        s.tail_residual.validate();
    }
}

double g(double x, const TailParams& tail, double scale_a) {
    check_scale(scale_a);
    return g_raw(x, tail.u, tail.v, scale_a);
}

double g_prime(double x, const TailParams& tail, double scale_a) {
    check_scale(scale_a);
    return g_prime_raw(x, tail.u, tail.v, scale_a);
}

double g_inverse(double y, const TailParams& tail, double scale_a, double tol) {
    check_scale(scale_a);
    return g_inverse_raw(y, tail.u, tail.v, scale_a, tol);
}

double latent_market(double y, const MarketTheta& theta, const TailParams& tail, double scale_a) {
    if (!(theta.beta > 0.0)) throw std::invalid_argument("market beta must be positive");
    return g_inverse((y - theta.alpha) / theta.beta, tail, scale_a);
}

double market_loglik(double y, const MarketTheta& theta, const TailParams& tail, double scale_a) {
    const double z = latent_market(y, theta, tail, scale_a);
    return -std::log(theta.beta * g_prime(z, tail, scale_a)) - 0.5 * z * z - kHalfLog2Pi;
}

double stock_cond_loglik(double y, double z_market, const StockTheta& theta, const TailParams& tail_market,
                         const TailParams& tail_residual, double scale_a) {
    if (!(theta.gamma > 0.0)) throw std::invalid_argument("stock gamma must be positive");
    const double resid = y - theta.alpha - theta.beta * g(z_market, tail_market, scale_a);
    const double z = g_inverse(resid / theta.gamma, tail_residual, scale_a);
    return -std::log(theta.gamma * g_prime(z, tail_residual, scale_a)) - 0.5 * z * z - kHalfLog2Pi;
}

ScenarioMatrix simulate(const ForecastedFactorModel& model, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("simulate: scenario count must be at least 1");
    model.validate();
    constexpr std::size_t block = 4096;
    const std::size_t cols = model.stocks.size();
    ScenarioMatrix out;
    for (const auto& s : model.stocks) out.tickers.push_back(s.ticker);
    out.rows = n;
    out.values.resize(n * cols);
    out.market.resize(n);
    const double a = model.scale_a;
    for (std::size_t begin = 0; begin < n; begin += block) {
        auto rng = make_engine(seed, begin / block);
        std::normal_distribution<double> normal(0.0, 1.0);
        const std::size_t end = std::min(n, begin + block);
        for (std::size_t r = begin; r < end; ++r) {
            const double zm = normal(rng);
            out.market[r] = model.market.alpha + model.market.beta * g(zm, model.tail_market, a);
            for (std::size_t c = 0; c < cols; ++c) {
                const StockModel& s = model.stocks[c];
                const double zi = normal(rng);
                out.values[r * cols + c] = s.theta.alpha + s.theta.beta * g(zm, s.tail_market, a) +
                                           s.theta.gamma * g(zi, s.tail_residual, a);
            }
        }
    }
    return out;
}

std::vector<double> empirical_mean(const ScenarioMatrix& scen) {
    if (scen.rows == 0) throw std::invalid_argument("empirical_mean: empty scenario matrix");
    std::vector<double> mean(scen.cols(), 0.0);
    for (std::size_t r = 0; r < scen.rows; ++r) {
        for (std::size_t c = 0; c < scen.cols(); ++c) mean[c] += scen.at(r, c);
    }
    for (double& m : mean) m /= static_cast<double>(scen.rows);
    return mean;
}

void write_scenarios_csv(std::ostream& out, const ScenarioMatrix& scen) {
    const bool with_market = scen.market.size() == scen.rows && scen.rows > 0;
    std::vector<std::string> header = scen.tickers;
    if (with_market) header.push_back("market");
    csv::write_row(out, header);
    std::vector<double> row;
    for (std::size_t r = 0; r < scen.rows; ++r) {
        row.assign(scen.values.begin() + r * scen.cols(), scen.values.begin() + (r + 1) * scen.cols());
        if (with_market) row.push_back(scen.market[r]);
        csv::write_numbers(out, row);
    }
}

ScenarioMatrix read_scenarios_csv(std::istream& in) {
    const csv::Table table = csv::read(in);
    if (table.header.empty()) throw csv::CsvError("scenario CSV: missing header");
    ScenarioMatrix out;
    out.tickers = table.header;
    const bool with_market = out.tickers.back() == "market";
    if (with_market) out.tickers.pop_back();
    if (out.tickers.empty()) throw csv::CsvError("scenario CSV: no ticker columns");
    out.rows = table.rows.size();
    if (out.rows == 0) throw csv::CsvError("scenario CSV: no scenario rows");
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& cells = table.rows[r];
        for (std::size_t c = 0; c < out.tickers.size(); ++c) {
            out.values.push_back(csv::parse_number(cells[c], r + 2, c + 1));
        }
        if (with_market) out.market.push_back(csv::parse_number(cells.back(), r + 2, cells.size()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tape primitives
// ---------------------------------------------------------------------------

namespace ad {
namespace {

double single(const Tensor& t, const char* what) {
    if (t.size() != 1) {
        throw std::invalid_argument(std::string("g-transform: ") + what +
                                    " must be a single-element tensor, got " + shape_string(t.shape()));
    }
    return t[0];
}

void check_tails(double u, double v) {
    if (!(u > 0.0 && v > 0.0)) throw NumericError("g-transform: tail parameters must be positive");
}

}  // namespace

Var gtransform(Var x, Var u, Var v, double scale_a) {
    check_scale(scale_a);
    const double uu = single(u.value(), "u");
    const double vv = single(v.value(), "v");
    check_tails(uu, vv);
    const Tensor& xs = x.value();
    Tensor out(xs.shape());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = g_raw(xs[i], uu, vv, scale_a);
    return x.tape->record("gtransform", {x, u, v}, std::move(out), [scale_a](BackwardContext& ctx) {
        const Tensor& xs = *ctx.inputs[0];
        const double u = (*ctx.inputs[1])[0];
        const double v = (*ctx.inputs[2])[0];
        Tensor gx(xs.shape());
        double gu = 0.0;
        double gv = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double x = xs[i];
            const double go = ctx.grad_out[i];
            const Powers p = powers(x, u, v);
            gx[i] = go * ((p.up + p.vm) / scale_a + 1.0 + x * (p.up * p.lu - p.vm * p.lv) / scale_a);
            gu += go * x * x * p.up / (u * scale_a);
            gv -= go * x * x * p.vm / (v * scale_a);
        }
        if (ctx.need[0]) ctx.in_grads[0] = std::move(gx);
        if (ctx.need[1]) ctx.in_grads[1] = Tensor(ctx.inputs[1]->shape(), gu);
        if (ctx.need[2]) ctx.in_grads[2] = Tensor(ctx.inputs[2]->shape(), gv);
    });
}

Var gtransform_prime(Var x, Var u, Var v, double scale_a) {
    check_scale(scale_a);
    const double uu = single(u.value(), "u");
    const double vv = single(v.value(), "v");
    check_tails(uu, vv);
    const Tensor& xs = x.value();
    Tensor out(xs.shape());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = g_prime_raw(xs[i], uu, vv, scale_a);
    return x.tape->record("gtransform_prime", {x, u, v}, std::move(out), [scale_a](BackwardContext& ctx) {
        const Tensor& xs = *ctx.inputs[0];
        const double u = (*ctx.inputs[1])[0];
        const double v = (*ctx.inputs[2])[0];
        Tensor gx(xs.shape());
        double gu = 0.0;
        double gv = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double x = xs[i];
            const double go = ctx.grad_out[i];
            const Powers p = powers(x, u, v);
            gx[i] = go * g_second_raw(x, u, v, scale_a);
            gu += go * x * p.up * (2.0 + p.lu * x) / (u * scale_a);
            gv += go * x * p.vm * (-2.0 + p.lv * x) / (v * scale_a);
        }
        if (ctx.need[0]) ctx.in_grads[0] = std::move(gx);
        if (ctx.need[1]) ctx.in_grads[1] = Tensor(ctx.inputs[1]->shape(), gu);
        if (ctx.need[2]) ctx.in_grads[2] = Tensor(ctx.inputs[2]->shape(), gv);
    });
}

Var gtransform_inverse(Var y, Var u, Var v, double scale_a) {
    check_scale(scale_a);
    const double uu = single(u.value(), "u");
    const double vv = single(v.value(), "v");
    check_tails(uu, vv);
    const Tensor& ys = y.value();
    Tensor out(ys.shape());
    for (std::size_t i = 0; i < ys.size(); ++i) out[i] = g_inverse_raw(ys[i], uu, vv, scale_a, 1e-10);
    return y.tape->record("gtransform_inverse", {y, u, v}, std::move(out), [scale_a](BackwardContext& ctx) {
        const Tensor& xs = ctx.value;
        const double u = (*ctx.inputs[1])[0];
        const double v = (*ctx.inputs[2])[0];
        Tensor gy(xs.shape());
        double gu = 0.0;
        double gv = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double x = xs[i];
            const double go = ctx.grad_out[i];
            const Powers p = powers(x, u, v);
            const double slope = (p.up + p.vm) / scale_a + 1.0 + x * (p.up * p.lu - p.vm * p.lv) / scale_a;
            gy[i] = go / slope;
            gu -= go * (x * x * p.up / (u * scale_a)) / slope;
            gv += go * (x * x * p.vm / (v * scale_a)) / slope;
        }
        if (ctx.need[0]) ctx.in_grads[0] = std::move(gy);
        if (ctx.need[1]) ctx.in_grads[1] = Tensor(ctx.inputs[1]->shape(), gu);
        if (ctx.need[2]) ctx.in_grads[2] = Tensor(ctx.inputs[2]->shape(), gv);
    });
}

namespace {

Var standard_nll(Var scale, Var z, Var u, Var v, double scale_a) {
    const double count = static_cast<double>(z.value().size());
    Var per = ad::log(scale) + ad::log(gtransform_prime(z, u, v, scale_a)) + ad::scale(ad::square(z), 0.5);
    return ad::add_scalar(ad::sum(per), count * kHalfLog2Pi);
}

}  // namespace

Var market_nll(Var alpha, Var beta, Var u, Var v, Var y, double scale_a) {
    Var z = gtransform_inverse((y - alpha) / beta, u, v, scale_a);
    return standard_nll(beta, z, u, v, scale_a);
}

Var stock_nll(Var alpha, Var beta, Var gamma, Var u_m, Var v_m, Var u, Var v, Var y, Var z_market,
              double scale_a) {
    Var loading = beta * gtransform(z_market, u_m, v_m, scale_a);
    Var z = gtransform_inverse((y - alpha - loading) / gamma, u, v, scale_a);
    return standard_nll(gamma, z, u, v, scale_a);
}

}  // namespace ad

}  // namespace gfagru
