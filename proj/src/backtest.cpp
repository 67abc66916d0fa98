#include "gfagru/backtest.hpp"

#include "gfagru/benchmarks.hpp"
#include "gfagru/csv.hpp"
#include "gfagru/errors.hpp"
#include "gfagru/parallel.hpp"
#include "gfagru/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

namespace gfagru {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double max_drawdown(std::span<const double> returns) {
    double wealth = 1.0, peak = 1.0, md = 0.0;
    for (double r : returns) {
        wealth *= 1.0 + r;
        peak = std::max(peak, wealth);
        md = std::max(md, (peak - wealth) / peak);
    }
    return md;
}

Metrics compute_metrics(std::span<const double> returns) {
    if (returns.size() < 2) throw std::invalid_argument("metrics: need at least two returns");
    const auto n = static_cast<double>(returns.size());
    Metrics m;
    const double mu = stats::mean(returns);
    double m2 = 0.0, m3 = 0.0;
    for (double r : returns) {
        const double d = r - mu;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
    if (*lo == *hi) m2 = m3 = 0.0;  // rounding in the mean leaves a tiny spread otherwise
    m.av = 12.0 * mu;
    m.sd = std::sqrt(12.0 * m2);
    if (m.sd > 0.0) m.ir = m.av / m.sd;
    if (m2 > 0.0) m.sk = m3 / std::pow(m2, 1.5);
    m.md = max_drawdown(returns);

    std::vector<double> losses(returns.size());
    for (std::size_t i = 0; i < returns.size(); ++i) losses[i] = -returns[i];
    const CvarValue tail = empirical_cvar(losses, 0.95);
    m.es = 12.0 * tail.cvar;
    if (tail.cvar != 0.0) {
        m.cr = mu / tail.cvar;
        double s = 0.0;
        std::size_t k = 0;
        for (std::size_t i = 0; i < losses.size(); ++i) {
            if (losses[i] <= tail.var_threshold) {
                s += returns[i];
                ++k;
            }
        }
        m.rr = (s / static_cast<double>(k)) / tail.cvar;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Coverage
// ---------------------------------------------------------------------------

namespace {

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

}  // namespace

CoverageResult coverage_tests(const std::vector<bool>& violations, double p) {
    if (violations.size() < 2) throw std::invalid_argument("coverage_tests: need at least two observations");
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("coverage_tests: p must lie in (0, 1)");
    CoverageResult res;
    const auto L = static_cast<double>(violations.size());
    for (bool v : violations) res.violations += v ? 1 : 0;
    const auto x = static_cast<double>(res.violations);
    const double ll_null = xlogy(L - x, 1.0 - p) + xlogy(x, p);
    const double ll_alt = xlogy(L - x, 1.0 - x / L) + xlogy(x, x / L);
    res.lr_pof = std::max(0.0, -2.0 * (ll_null - ll_alt));

    double n00 = 0, n01 = 0, n10 = 0, n11 = 0;
    for (std::size_t t = 1; t < violations.size(); ++t) {
        const bool a = violations[t - 1], b = violations[t];
        (a ? (b ? n11 : n10) : (b ? n01 : n00)) += 1.0;
    }
    const double pi0 = n00 + n01 > 0 ? n01 / (n00 + n01) : 0.0;
    const double pi1 = n10 + n11 > 0 ? n11 / (n10 + n11) : 0.0;
    const double pi = (n01 + n11) / (n00 + n01 + n10 + n11);
    const double l_restricted = xlogy(n00 + n10, 1.0 - pi) + xlogy(n01 + n11, pi);
    const double l_markov = xlogy(n00, 1.0 - pi0) + xlogy(n01, pi0) + xlogy(n10, 1.0 - pi1) + xlogy(n11, pi1);
    res.lr_cci = std::max(0.0, -2.0 * (l_restricted - l_markov));

    res.p_pof = stats::chi2_sf(res.lr_pof, 1);
    res.p_cci = stats::chi2_sf(res.lr_cci, 1);
    res.p_cc = stats::chi2_sf(res.lr_pof + res.lr_cci, 2);
    return res;
}

VarSeries var_forecast_series(std::span<const ForecastedFactorModel> forecasts, double q, std::size_t n,
                              std::uint64_t seed, std::size_t workers) {
    if (forecasts.empty()) throw std::invalid_argument("var_forecast_series: no forecasts");
    VarSeries out;
    out.assets.push_back("market");
    for (const auto& s : forecasts.front().stocks) out.assets.push_back(s.ticker);
    out.var.resize(forecasts.size());
    parallel_for(forecasts.size(), workers, [&](std::size_t d) {
        const auto scen = simulate(forecasts[d], n, member_seed(seed, d, 0));
        std::vector<double> losses(n);
        std::vector<double> row;
        for (std::size_t r = 0; r < n; ++r) losses[r] = -scen.market[r];
        row.push_back(empirical_cvar(losses, q).var_threshold);
        for (std::size_t k = 0; k < scen.cols(); ++k) {
            for (std::size_t r = 0; r < n; ++r) losses[r] = -scen.at(r, k);
            row.push_back(empirical_cvar(losses, q).var_threshold);
        }
        out.var[d] = std::move(row);
    });
    return out;
}

std::vector<std::vector<bool>> var_violations(const VarSeries& series,
                                              const std::vector<std::vector<double>>& realized) {
    if (realized.size() != series.var.size()) throw std::invalid_argument("var_violations: date count mismatch");
    std::vector<std::vector<bool>> out(series.assets.size(), std::vector<bool>(realized.size()));
    for (std::size_t d = 0; d < realized.size(); ++d) {
        if (realized[d].size() != series.assets.size()) throw std::invalid_argument("var_violations: asset mismatch");
        for (std::size_t k = 0; k < series.assets.size(); ++k) out[k][d] = realized[d][k] < -series.var[d][k];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backtest
// ---------------------------------------------------------------------------

StrategyKind strategy_kind(const std::string& name) {
    if (name == "EW") return StrategyKind::ew;
    if (name == "SAA") return StrategyKind::saa;
    if (name == "DCC-MM") return StrategyKind::dcc_mm;
    return StrategyKind::gf_agru;
}

std::string Target::label() const { return ew ? "ew" : csv::format_number(value); }

Target Target::parse(const std::string& text) {
    if (text == "ew" || text == "ew-target") return Target{true, 0.0};
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
        throw ConfigError("target: expected a number or 'ew', got '" + text + "'");
    }
    return Target{false, v};
}

std::vector<double> realized_month(const ReturnPanel& panel, std::size_t anchor, bool include_market) {
    if (anchor + kMonthDays >= panel.market_prices.size()) throw DataError("realized_month: anchor too late");
    std::vector<double> out;
    if (include_market) out.push_back(panel.market_prices[anchor + kMonthDays] / panel.market_prices[anchor] - 1.0);
    for (const auto& p : panel.stock_prices) out.push_back(p[anchor + kMonthDays] / p[anchor] - 1.0);
    return out;
}

namespace {

Metrics average(const std::vector<Metrics>& ms) {
    Metrics out;
    const auto n = static_cast<double>(ms.size());
    auto opt_mean = [&](auto field) -> std::optional<double> {
        double s = 0.0;
        for (const auto& m : ms) {
            if (!(m.*field)) return std::nullopt;
            s += *(m.*field);
        }
        return s / n;
    };
    for (const auto& m : ms) {
        out.av += m.av / n;
        out.sd += m.sd / n;
        out.md += m.md / n;
        out.es += m.es / n;
    }
    out.ir = opt_mean(&Metrics::ir);
    out.sk = opt_mean(&Metrics::sk);
    out.cr = opt_mean(&Metrics::cr);
    out.rr = opt_mean(&Metrics::rr);
    return out;
}

Metrics dispersion(const std::vector<Metrics>& ms, const Metrics& mean) {
    Metrics out;
    const auto d = static_cast<double>(ms.size() - 1);
    auto sd = [&](auto get, double mu) {
        double s = 0.0;
        for (const auto& m : ms) s += (get(m) - mu) * (get(m) - mu);
        return std::sqrt(s / d);
    };
    auto opt_sd = [&](auto field, const std::optional<double>& mu) -> std::optional<double> {
        if (!mu) return std::nullopt;
        return sd([&](const Metrics& m) { return *(m.*field); }, *mu);
    };
    out.av = sd([](const Metrics& m) { return m.av; }, mean.av);
    out.sd = sd([](const Metrics& m) { return m.sd; }, mean.sd);
    out.md = sd([](const Metrics& m) { return m.md; }, mean.md);
    out.es = sd([](const Metrics& m) { return m.es; }, mean.es);
    out.ir = opt_sd(&Metrics::ir, mean.ir);
    out.sk = opt_sd(&Metrics::sk, mean.sk);
    out.cr = opt_sd(&Metrics::cr, mean.cr);
    out.rr = opt_sd(&Metrics::rr, mean.rr);
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

BacktestReport run_backtest(const ReturnPanel& panel, const Split& split, const std::vector<Strategy>& strategies,
                            const BacktestConfig& cfg) {
    if (strategies.empty()) throw ConfigError("backtest: no strategies");
    if (!(cfg.q > 0.0 && cfg.q < 1.0)) throw ConfigError("backtest.q: must lie in (0, 1)");
    if (cfg.repetitions == 0) throw ConfigError("backtest.repetitions: must be positive");
    const auto anchors = rebalance_anchors(split);
    if (anchors.empty()) throw DataError("backtest: the test segment holds no complete month");
    const std::size_t n_stocks = panel.stocks();
    const std::size_t n_dates = anchors.size();

    BacktestReport report;
    report.tickers = panel.tickers;
    for (std::size_t a : anchors) report.dates.push_back(panel.dates[a]);
    std::vector<std::vector<double>> realized;
    for (std::size_t a : anchors) realized.push_back(realized_month(panel, a));
    const auto ew = equal_weight(n_stocks);

    for (std::size_t s_idx = 0; s_idx < strategies.size(); ++s_idx) {
        const Strategy& strat = strategies[s_idx];
        if (strat.kind == StrategyKind::ew) {
            StrategyResult r;
            r.strategy = strat.name;
            r.q = cfg.q;
            std::vector<double> path;
            for (std::size_t d = 0; d < n_dates; ++d) {
                path.push_back(dot(ew, realized[d]));
                r.weights.push_back(ew);
            }
            r.rep_returns = {path};
            r.returns = path;
            r.mean = compute_metrics(path);
            report.results.push_back(std::move(r));
            continue;
        }
        if (cfg.targets.empty()) throw ConfigError("backtest.targets: CVaR strategies need at least one target");
        if (strat.kind == StrategyKind::gf_agru && strat.ensemble == nullptr) {
            throw ConfigError("backtest: strategy '" + strat.name + "' has no trained model");
        }
        const bool deterministic = strat.kind == StrategyKind::saa;
        const std::size_t reps = deterministic ? 1 : cfg.repetitions;

        // Per-date inputs that do not depend on the repetition.
        std::vector<ForecastedFactorModel> forecasts;
        std::vector<DccForecast> dcc;
        if (strat.kind == StrategyKind::gf_agru) {
            forecasts = ensemble_forecast_panel(*strat.ensemble, panel, anchors);
        } else if (strat.kind == StrategyKind::dcc_mm) {
            dcc.resize(n_dates);
            for (std::size_t d = 0; d < n_dates; ++d) {
                const std::size_t a = anchors[d];
                dcc[d] = fit_dcc_mm(monthly_returns(panel, a % kMonthDays, a, true), cfg.workers).forecast;
            }
        }

        const std::size_t n_targets = cfg.targets.size();
        // [rep][target][date]
        std::vector<std::vector<std::vector<double>>> paths(
            reps, std::vector<std::vector<double>>(n_targets, std::vector<double>(n_dates)));
        std::vector<std::vector<std::vector<double>>> first_weights(n_targets,
                                                                    std::vector<std::vector<double>>(n_dates));
        std::vector<std::vector<FallbackEvent>> rep_events(reps);
        parallel_for(reps, cfg.workers, [&](std::size_t rep) {
            for (std::size_t d = 0; d < n_dates; ++d) {
                const std::size_t a = anchors[d];
                const std::uint64_t seed = member_seed(member_seed(cfg.seed, rep, d), s_idx, 1);
                ScenarioMatrix scen;
                switch (strat.kind) {
                    case StrategyKind::saa:
                        scen = static_saa_scenarios(monthly_returns(panel, a % kMonthDays, a), panel.tickers);
                        break;
                    case StrategyKind::dcc_mm:
                        scen = dcc_simulate(dcc[d], panel.tickers, cfg.scenarios, seed);
                        break;
                    case StrategyKind::gf_agru:
                        scen = simulate(forecasts[d], cfg.scenarios, seed);
                        break;
                    case StrategyKind::ew:
                        break;
                }
                const auto mu = empirical_mean(scen);
                const double ew_target = stats::mean(mu);
                for (std::size_t t = 0; t < n_targets; ++t) {
                    CvarProblem prob = CvarProblem::from(scen, cfg.q, cfg.targets[t].ew ? ew_target : cfg.targets[t].value);
                    prob.mu = mu;
                    const auto sol = solve(prob);
                    std::vector<double> w = ew;
                    if (sol.status == SolveStatus::optimal) {
                        w = sol.weights;
                    } else {
                        rep_events[rep].push_back({strat.name, cfg.targets[t].label(), panel.dates[a], rep});
                    }
                    paths[rep][t][d] = dot(w, realized[d]);
                    if (rep == 0) first_weights[t][d] = std::move(w);
                }
            }
        });
        for (const auto& ev : rep_events) report.events.insert(report.events.end(), ev.begin(), ev.end());

        for (std::size_t t = 0; t < n_targets; ++t) {
            StrategyResult r;
            r.strategy = strat.name;
            r.target = cfg.targets[t].label();
            r.q = cfg.q;
            r.repetitions = reps;
            std::vector<Metrics> ms;
            r.returns.assign(n_dates, 0.0);
            for (std::size_t rep = 0; rep < reps; ++rep) {
                r.rep_returns.push_back(paths[rep][t]);
                ms.push_back(compute_metrics(paths[rep][t]));
                for (std::size_t d = 0; d < n_dates; ++d) r.returns[d] += paths[rep][t][d] / static_cast<double>(reps);
            }
            r.mean = average(ms);
            if (reps >= 2) r.dispersion = dispersion(ms, r.mean);
            r.weights = std::move(first_weights[t]);
            for (const auto& ev : report.events) {
                if (ev.strategy == r.strategy && ev.target == r.target) ++r.fallbacks;
            }
            report.results.push_back(std::move(r));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

namespace {

std::string cell(const std::optional<double>& v) { return v ? csv::format_number(*v) : "NA"; }

std::vector<std::string> metric_cells(const std::optional<Metrics>& m) {
    if (!m) return std::vector<std::string>(8, "NA");
    return {csv::format_number(m->av), csv::format_number(m->sd), cell(m->ir), csv::format_number(m->md),
            csv::format_number(m->es), cell(m->sk), cell(m->cr), cell(m->rr)};
}

void hash_line(std::ostream& out, const std::string& hash) { out << "# config_hash=" << hash << '\n'; }

}  // namespace

void write_metrics_csv(std::ostream& out, const BacktestReport& report, const std::string& hash) {
    hash_line(out, hash);
    std::vector<std::string> header{"strategy", "q", "target", "repetitions", "AV", "SD", "IR", "MD",
                                    "ES", "SK", "CR", "RR"};
    for (const char* m : {"AV", "SD", "IR", "MD", "ES", "SK", "CR", "RR"}) header.push_back(std::string(m) + "_sd");
    header.push_back("fallbacks");
    csv::write_row(out, header);
    for (const auto& r : report.results) {
        std::vector<std::string> row{r.strategy, csv::format_number(r.q), r.target.empty() ? "NA" : r.target,
                                     std::to_string(r.repetitions)};
        for (auto& c : metric_cells(r.mean)) row.push_back(c);
        for (auto& c : metric_cells(r.dispersion)) row.push_back(c);
        row.push_back(std::to_string(r.fallbacks));
        csv::write_row(out, row);
    }
}

void write_weights_csv(std::ostream& out, const BacktestReport& report, const std::string& hash) {
    hash_line(out, hash);
    std::vector<std::string> header{"date", "strategy", "target"};
    header.insert(header.end(), report.tickers.begin(), report.tickers.end());
    csv::write_row(out, header);
    for (const auto& r : report.results) {
        for (std::size_t d = 0; d < r.weights.size(); ++d) {
            std::vector<std::string> row{report.dates[d], r.strategy, r.target.empty() ? "NA" : r.target};
            for (double w : r.weights[d]) row.push_back(csv::format_number(w));
            csv::write_row(out, row);
        }
    }
}

void write_wealth_csv(std::ostream& out, const BacktestReport& report, const std::string& hash) {
    hash_line(out, hash);
    std::vector<std::string> header{"date"};
    for (const auto& r : report.results) header.push_back(r.target.empty() ? r.strategy : r.strategy + "@" + r.target);
    csv::write_row(out, header);
    std::vector<double> wealth(report.results.size(), 1.0);
    for (std::size_t d = 0; d < report.dates.size(); ++d) {
        std::vector<std::string> row{report.dates[d]};
        for (std::size_t k = 0; k < report.results.size(); ++k) {
            wealth[k] *= 1.0 + report.results[k].returns[d];
            row.push_back(csv::format_number(wealth[k]));
        }
        csv::write_row(out, row);
    }
}

void write_events_csv(std::ostream& out, const BacktestReport& report, const std::string& hash) {
    hash_line(out, hash);
    csv::write_row(out, std::vector<std::string>{"strategy", "target", "date", "repetition", "event"});
    for (const auto& e : report.events) {
        csv::write_row(out, std::vector<std::string>{e.strategy, e.target, e.date, std::to_string(e.repetition),
                                                     "infeasible_target_equal_weight"});
    }
}

}  // namespace gfagru
