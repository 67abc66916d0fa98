#include "gfagru/cli.hpp"

#include "gfagru/backtest.hpp"
#include "gfagru/benchmarks.hpp"
#include "gfagru/config.hpp"
#include "gfagru/csv.hpp"
#include "gfagru/cvar.hpp"
#include "gfagru/data.hpp"
#include "gfagru/errors.hpp"
#include "gfagru/json_io.hpp"
#include "gfagru/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace gfagru::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> assignments;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "key-value configuration file");
    cmd->add_option("--set", c.assignments, "section.key=value override (repeatable)");
}

RunConfig resolve(const Common& c, std::vector<std::pair<std::string, std::string>> extra = {}) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& a : c.assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + a + "'");
        overrides.emplace_back(a.substr(0, eq), a.substr(eq + 1));
    }
    for (auto& e : extra) overrides.push_back(std::move(e));
    return load_config(c.config_path.empty() ? std::nullopt : std::optional<std::string>(c.config_path),
                       process_env(), overrides);
}

std::ofstream open_out(const std::string& path) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return in;
}

nlohmann::json read_json_file(const std::string& path) {
    auto in = open_in(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed JSON in '" + path + "': " + e.what());
    }
}

TailParams parse_tail(const std::string& text, const std::string& flag) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw ConfigError(flag + ": expected u,v");
    try {
        TailParams t{std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
        t.validate();
        return t;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(flag + ": " + e.what());
    }
}

struct Loaded {
    ReturnPanel panel;
    Split split;
};

Loaded load_panel(const RunConfig& cfg) {
    if (cfg.prices.empty()) throw ConfigError("data.prices: no price file given");
    if (!fs::exists(cfg.prices)) throw DataError("price file '" + cfg.prices + "' does not exist");
    const auto table = read_prices_file(cfg.prices);
    Loaded l;
    l.panel = make_panel(table, cfg.market);
    SplitSpec spec = cfg.split;
    spec.validation_fraction = cfg.train.validation_fraction;
    l.split = split_rows(l.panel.return_rows(), spec, l.panel.dates);
    return l;
}

nlohmann::json split_json(const Split& s) {
    return {{"total_rows", s.total_rows},
            {"train_rows", s.train_rows},
            {"test_rows", s.test_rows},
            {"validation_rows", s.validation_rows}};
}

// Price file recorded by `train`, unless the configuration names one.
RunConfig with_model_prices(RunConfig cfg, const std::string& model_dir) {
    if (!cfg.prices.empty()) return cfg;
    const auto manifest = read_json_file((fs::path(model_dir) / "manifest.json").string());
    const auto& run = manifest.at("run");
    if (run.contains("prices")) cfg.prices = run.at("prices").get<std::string>();
    if (run.contains("market")) cfg.market = run.at("market").get<std::string>();
    return cfg;
}

TrainedEnsemble load_model(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "manifest.json")) throw DataError("no trained model in '" + dir + "'");
    return load_ensemble(dir);
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Common& c, const std::string& input, const std::string& output, std::ostream& out) {
    const auto cfg = resolve(c);
    IngestReport report;
    const auto table = read_prices_file(input, &report);
    if (table.rows() < 2) throw DataError("'" + input + "' holds fewer than two dates");
    table.column_index(cfg.market);
    auto f = open_out(output);
    f << "# config_hash=" << cfg.hash() << '\n';
    write_prices_csv(f, table);
    nlohmann::json summary{{"config_hash", cfg.hash()},
                           {"rows", table.rows()},
                           {"tickers", table.tickers},
                           {"dropped", report.dropped}};
    out << summary.dump() << '\n';
    return kExitOk;
}

struct SynthArgs {
    std::string output;
    std::string spec;
    std::size_t stocks = 5;
    std::size_t days = 1500;
    std::uint64_t seed = 1;
    std::string market_tail = "1.5,2";
    std::string stock_tail = "1.5,2";
};

int cmd_synth(const Common& c, const SynthArgs& a, std::ostream& out) {
    const auto cfg = resolve(c);
    SynthSpec spec;
    if (!a.spec.empty()) {
        auto in = open_in(a.spec);
        std::stringstream ss;
        ss << in.rdbuf();
        spec = synth_spec_from_json(ss.str());
    } else {
        spec = SynthSpec::constant(a.stocks, a.days, parse_tail(a.market_tail, "--market-tail"),
                                   parse_tail(a.stock_tail, "--stock-tail"));
        spec.market_ticker = cfg.market;
    }
    const auto table = synth_generate(spec, a.seed);
    {
        auto f = open_out(a.output);
        f << "# config_hash=" << cfg.hash() << '\n';
        write_prices_csv(f, table);
    }
    auto truth = nlohmann::json::parse(synth_manifest(spec, a.seed));
    truth["config_hash"] = cfg.hash();
    auto f = open_out(a.output + ".truth.json");
    f << truth.dump(2) << '\n';
    out << nlohmann::json{{"prices", a.output}, {"truth", a.output + ".truth.json"}, {"rows", table.rows()}}.dump()
        << '\n';
    return kExitOk;
}

int cmd_train(const Common& c, std::ostream& out) {
    const auto cfg = resolve(c);
    const auto data = load_panel(cfg);
    const auto ens = train_ensemble(data.panel, data.split, cfg.train, cfg.train_seed);
    nlohmann::json run{{"config_hash", cfg.hash()},
                       {"config", cfg.to_json()},
                       {"prices", cfg.prices},
                       {"market", cfg.market},
                       {"split", split_json(data.split)}};
    save_ensemble(ens, cfg.model_dir, run);
    out << nlohmann::json{{"model_dir", cfg.model_dir}, {"config_hash", cfg.hash()}}.dump() << '\n';
    return kExitOk;
}

int cmd_forecast(const Common& c, const std::string& date, const std::string& output, std::ostream& out) {
    auto cfg = resolve(c);
    cfg = with_model_prices(cfg, cfg.model_dir);
    const auto ens = load_model(cfg.model_dir);
    const auto data = load_panel(cfg);
    std::size_t anchor = data.panel.return_rows();
    if (!date.empty()) {
        const auto it = std::find(data.panel.dates.begin(), data.panel.dates.end(), date);
        if (it == data.panel.dates.end()) throw DataError("date " + date + " is not in the price file");
        anchor = static_cast<std::size_t>(it - data.panel.dates.begin());
    }
    const std::vector<std::size_t> anchors{anchor};
    const auto f = ensemble_forecast_panel(ens, data.panel, anchors).front();
    auto j = to_json(f);
    j["date"] = data.panel.dates[anchor];
    j["config_hash"] = cfg.hash();
    if (output.empty()) {
        out << j.dump(2) << '\n';
    } else {
        auto o = open_out(output);
        o << j.dump(2) << '\n';
    }
    return kExitOk;
}

int cmd_simulate(const Common& c, const std::string& model, std::optional<std::size_t> n, std::uint64_t seed,
                 const std::string& output) {
    const auto cfg = resolve(c);
    const auto f = model_from_json(read_json_file(model));
    const auto scen = simulate(f, n.value_or(cfg.scenarios), seed);
    auto o = open_out(output);
    o << "# config_hash=" << cfg.hash() << '\n';
    write_scenarios_csv(o, scen);
    return kExitOk;
}

int cmd_optimize(const Common& c, const std::string& scenarios, std::optional<double> q,
                 const std::vector<std::string>& targets, const std::string& output, std::ostream& out) {
    const auto cfg = resolve(c);
    auto in = open_in(scenarios);
    const auto scen = read_scenarios_csv(in);
    const double level = q.value_or(cfg.q);
    std::vector<Target> ts;
    for (const auto& t : targets) ts.push_back(Target::parse(t));
    if (ts.empty()) ts = cfg.targets;
    const auto mu = empirical_mean(scen);
    double ew = 0.0;
    for (double m : mu) ew += m / static_cast<double>(mu.size());
    std::ostringstream lines;
    for (const auto& t : ts) {
        auto prob = CvarProblem::from(scen, level, t.ew ? ew : t.value);
        prob.mu = mu;
        const auto sol = solve(prob);
        nlohmann::json j{{"config_hash", cfg.hash()}, {"q", level}, {"target", t.label()},
                         {"target_value", prob.target}, {"status", to_string(sol.status)}};
        if (sol.status == SolveStatus::optimal) {
            nlohmann::json w = nlohmann::json::object();
            for (std::size_t k = 0; k < scen.cols(); ++k) w[scen.tickers[k]] = sol.weights[k];
            j["weights"] = w;
            j["objective"] = sol.objective;
            j["var_threshold"] = sol.var_threshold;
        }
        lines << j.dump() << '\n';
    }
    if (output.empty()) {
        out << lines.str();
    } else {
        auto o = open_out(output);
        o << lines.str();
    }
    return kExitOk;
}

// "NAME" or "NAME=model_dir"; GF-AGRU style names default to paths.model_dir.
struct StrategyEntry {
    std::string name;
    std::string model_dir;
};

std::vector<StrategyEntry> parse_strategies(const RunConfig& cfg) {
    std::vector<StrategyEntry> out;
    for (const auto& s : cfg.strategies) {
        const auto eq = s.find('=');
        StrategyEntry e{s.substr(0, eq), eq == std::string::npos ? "" : s.substr(eq + 1)};
        if (strategy_kind(e.name) == StrategyKind::gf_agru && e.model_dir.empty()) e.model_dir = cfg.model_dir;
        out.push_back(std::move(e));
    }
    return out;
}

void write_coverage_csv(std::ostream& o, const std::string& hash, const std::vector<std::string>& assets,
                        const std::vector<CoverageResult>& res, double p, std::size_t length) {
    o << "# config_hash=" << hash << '\n';
    csv::write_row(o, std::vector<std::string>{"asset", "p", "observations", "violations", "p_pof", "p_cci", "p_cc"});
    for (std::size_t k = 0; k < assets.size(); ++k) {
        csv::write_row(o, std::vector<std::string>{assets[k], csv::format_number(std::round(p * 1e12) / 1e12),
                                                   std::to_string(length),
                                                   std::to_string(res[k].violations),
                                                   csv::format_number(res[k].p_pof),
                                                   csv::format_number(res[k].p_cci),
                                                   csv::format_number(res[k].p_cc)});
    }
}

// VaR coverage of every asset over the rebalance dates, using a trained model.
void model_coverage(const RunConfig& cfg, const TrainedEnsemble& ens, const Loaded& data, const std::string& path) {
    const auto anchors = rebalance_anchors(data.split);
    const auto forecasts = ensemble_forecast_panel(ens, data.panel, anchors);
    const auto series = var_forecast_series(forecasts, cfg.q, cfg.scenarios, cfg.backtest_seed, cfg.workers);
    std::vector<std::vector<double>> realized;
    for (std::size_t a : anchors) realized.push_back(realized_month(data.panel, a, true));
    const auto viol = var_violations(series, realized);
    std::vector<CoverageResult> res;
    for (const auto& v : viol) res.push_back(coverage_tests(v, 1.0 - cfg.q));
    auto o = open_out(path);
    write_coverage_csv(o, cfg.hash(), series.assets, res, 1.0 - cfg.q, anchors.size());
}

int cmd_backtest(const Common& c, std::ostream& out) {
    const auto cfg = resolve(c);
    const auto data = load_panel(cfg);
    const auto entries = parse_strategies(cfg);
    std::map<std::string, TrainedEnsemble> models;
    std::vector<Strategy> strategies;
    for (const auto& e : entries) {
        Strategy s{e.name, strategy_kind(e.name), nullptr};
        if (s.kind == StrategyKind::gf_agru && !models.count(e.model_dir)) models.emplace(e.model_dir, load_model(e.model_dir));
        strategies.push_back(s);
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (strategies[i].kind == StrategyKind::gf_agru) strategies[i].ensemble = &models.at(entries[i].model_dir);
    }
    BacktestConfig bc;
    bc.q = cfg.q;
    bc.scenarios = cfg.scenarios;
    bc.targets = cfg.targets;
    bc.repetitions = cfg.repetitions;
    bc.seed = cfg.backtest_seed;
    bc.workers = cfg.workers;
    const auto report = run_backtest(data.panel, data.split, strategies, bc);
    const fs::path dir(cfg.output_dir);
    const std::string hash = cfg.hash();
    {
        auto o = open_out((dir / "metrics.csv").string());
        write_metrics_csv(o, report, hash);
    }
    {
        auto o = open_out((dir / "weights.csv").string());
        write_weights_csv(o, report, hash);
    }
    {
        auto o = open_out((dir / "wealth.csv").string());
        write_wealth_csv(o, report, hash);
    }
    {
        auto o = open_out((dir / "events.csv").string());
        write_events_csv(o, report, hash);
    }
    if (cfg.coverage) {
        for (const auto& e : entries) {
            if (strategy_kind(e.name) != StrategyKind::gf_agru) continue;
            model_coverage(cfg, models.at(e.model_dir), data, (dir / ("coverage_" + e.name + ".csv")).string());
        }
    }
    out << nlohmann::json{{"output_dir", cfg.output_dir},
                          {"config_hash", hash},
                          {"rebalances", report.dates.size()},
                          {"rows", report.results.size()},
                          {"fallbacks", report.events.size()}}
               .dump()
        << '\n';
    return kExitOk;
}

int cmd_coverage(const Common& c, const std::string& violations, std::optional<double> p, const std::string& output,
                 std::ostream& out) {
    const auto cfg = resolve(c);
    if (violations.empty()) {
        const auto run_cfg = with_model_prices(cfg, cfg.model_dir);
        const auto ens = load_model(cfg.model_dir);
        const auto data = load_panel(run_cfg);
        const std::string path = output.empty() ? (fs::path(cfg.output_dir) / "coverage.csv").string() : output;
        model_coverage(run_cfg, ens, data, path);
        out << nlohmann::json{{"coverage", path}, {"config_hash", cfg.hash()}}.dump() << '\n';
        return kExitOk;
    }
    const auto table = csv::read_file(violations);
    std::vector<std::string> assets(table.header.begin() + (table.header.front() == "date" ? 1 : 0), table.header.end());
    const std::size_t skip = table.header.size() - assets.size();
    const double level = p.value_or(1.0 - cfg.q);
    std::vector<CoverageResult> res;
    for (std::size_t k = 0; k < assets.size(); ++k) {
        std::vector<bool> flags(table.rows.size());
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const double v = csv::parse_number(table.rows[r][k + skip], r + 2, k + skip + 1);
            if (v != 0.0 && v != 1.0) throw DataError("violation indicators must be 0 or 1");
            flags[r] = v == 1.0;
        }
        res.push_back(coverage_tests(flags, level));
    }
    std::ostringstream o;
    write_coverage_csv(o, cfg.hash(), assets, res, level, table.rows.size());
    if (output.empty()) {
        out << o.str();
    } else {
        auto f = open_out(output);
        f << o.str();
    }
    return kExitOk;
}

int cmd_export_params(const Common& c, const std::string& output, std::ostream& out) {
    auto cfg = resolve(c);
    cfg = with_model_prices(cfg, cfg.model_dir);
    const auto ens = load_model(cfg.model_dir);
    const auto data = load_panel(cfg);
    const auto anchors = rebalance_anchors(data.split);
    const auto forecasts = ensemble_forecast_panel(ens, data.panel, anchors);
    std::ostringstream o;
    o << "# config_hash=" << cfg.hash() << '\n';
    csv::write_row(o, std::vector<std::string>{"date", "series", "alpha", "beta", "gamma", "u", "v", "u_market",
                                               "v_market"});
    const auto n = csv::format_number;
    for (std::size_t d = 0; d < anchors.size(); ++d) {
        const auto& f = forecasts[d];
        const std::string& date = data.panel.dates[anchors[d]];
        csv::write_row(o, std::vector<std::string>{date, "market", n(f.market.alpha), n(f.market.beta), "NA",
                                                   n(f.tail_market.u), n(f.tail_market.v), "NA", "NA"});
        for (const auto& s : f.stocks) {
            csv::write_row(o, std::vector<std::string>{date, s.ticker, n(s.theta.alpha), n(s.theta.beta),
                                                       n(s.theta.gamma), n(s.tail_residual.u), n(s.tail_residual.v),
                                                       n(s.tail_market.u), n(s.tail_market.v)});
        }
    }
    if (output.empty()) {
        out << o.str();
    } else {
        auto f = open_out(output);
        f << o.str();
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"GF-AGRU generative factor model toolchain", "gfagru"};
    app.require_subcommand(1);

    Common common;
    std::string in_path, out_path, date, model_path, scen_path, viol_path;
    std::optional<std::size_t> n_opt;
    std::optional<double> q_opt, p_opt;
    std::uint64_t seed = 1;
    std::vector<std::string> targets;
    SynthArgs synth;
    std::string ablation, prices, model_dir, output_dir;

    auto* ingest = app.add_subcommand("ingest", "validate a price CSV and drop incomplete tickers");
    add_common(ingest, common);
    ingest->add_option("--input", in_path, "raw price CSV")->required();
    ingest->add_option("--output", out_path, "cleaned price CSV")->required();

    auto* synth_cmd = app.add_subcommand("synth", "generate synthetic prices from a known factor model");
    add_common(synth_cmd, common);
    synth_cmd->add_option("--output", synth.output, "price CSV; ground truth goes to <output>.truth.json")->required();
    synth_cmd->add_option("--spec", synth.spec, "ground-truth JSON (as written next to a previous output)");
    synth_cmd->add_option("--stocks", synth.stocks, "number of stocks");
    synth_cmd->add_option("--days", synth.days, "number of daily returns");
    synth_cmd->add_option("--seed", synth.seed, "random seed");
    synth_cmd->add_option("--market-tail", synth.market_tail, "market tail pair u,v");
    synth_cmd->add_option("--stock-tail", synth.stock_tail, "stock tail pair u,v");

    auto* train = app.add_subcommand("train", "fit the market and stock networks");
    add_common(train, common);
    train->add_option("--prices", prices, "price CSV (data.prices)");
    train->add_option("--model-dir", model_dir, "output directory (paths.model_dir)");
    train->add_option("--ablation", ablation, "full, naive or no_attention (train.ablation)");

    auto* forecast = app.add_subcommand("forecast", "one-date ensemble forecast as JSON");
    add_common(forecast, common);
    forecast->add_option("--model-dir", model_dir, "trained model directory");
    forecast->add_option("--prices", prices, "price CSV (defaults to the one used in training)");
    forecast->add_option("--date", date, "forecast date (default: last date)");
    forecast->add_option("--output", out_path, "JSON file (default: stdout)");

    auto* simulate_cmd = app.add_subcommand("simulate", "draw one-month scenarios from a forecast");
    add_common(simulate_cmd, common);
    simulate_cmd->add_option("--model", model_path, "forecast JSON")->required();
    simulate_cmd->add_option("--n", n_opt, "scenario count (default cvar.n)");
    simulate_cmd->add_option("--seed", seed, "random seed");
    simulate_cmd->add_option("--output", out_path, "scenario CSV")->required();

    auto* optimize = app.add_subcommand("optimize", "mean-CVaR weights for a scenario CSV");
    add_common(optimize, common);
    optimize->add_option("--scenarios", scen_path, "scenario CSV")->required();
    optimize->add_option("--q", q_opt, "confidence level (default cvar.q)");
    optimize->add_option("--target", targets, "target monthly return or 'ew' (repeatable)");
    optimize->add_option("--output", out_path, "JSON-lines file (default: stdout)");

    auto* backtest = app.add_subcommand("backtest", "rolling monthly backtest and reports");
    add_common(backtest, common);
    backtest->add_option("--prices", prices, "price CSV (data.prices)");
    backtest->add_option("--model-dir", model_dir, "trained model directory (paths.model_dir)");
    backtest->add_option("--output-dir", output_dir, "report directory (paths.output_dir)");

    auto* coverage = app.add_subcommand("coverage", "VaR coverage tests");
    add_common(coverage, common);
    coverage->add_option("--violations", viol_path, "CSV of 0/1 indicators, one column per asset");
    coverage->add_option("--p", p_opt, "tail probability (default 1 - cvar.q)");
    coverage->add_option("--model-dir", model_dir, "trained model directory");
    coverage->add_option("--prices", prices, "price CSV");
    coverage->add_option("--output", out_path, "coverage CSV");

    auto* export_params = app.add_subcommand("export-params", "per-date parameter forecasts as CSV");
    add_common(export_params, common);
    export_params->add_option("--model-dir", model_dir, "trained model directory");
    export_params->add_option("--prices", prices, "price CSV");
    export_params->add_option("--output", out_path, "CSV file (default: stdout)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    }

    // Flags that mirror configuration keys go through the override chain.
    auto flag_overrides = [&] {
        if (!prices.empty()) common.assignments.push_back("data.prices=" + prices);
        if (!model_dir.empty()) common.assignments.push_back("paths.model_dir=" + model_dir);
        if (!output_dir.empty()) common.assignments.push_back("paths.output_dir=" + output_dir);
        if (!ablation.empty()) common.assignments.push_back("train.ablation=" + ablation);
    };

    try {
        flag_overrides();
        if (ingest->parsed()) return cmd_ingest(common, in_path, out_path, out);
        if (synth_cmd->parsed()) return cmd_synth(common, synth, out);
        if (train->parsed()) return cmd_train(common, out);
        if (forecast->parsed()) return cmd_forecast(common, date, out_path, out);
        if (simulate_cmd->parsed()) return cmd_simulate(common, model_path, n_opt, seed, out_path);
        if (optimize->parsed()) return cmd_optimize(common, scen_path, q_opt, targets, out_path, out);
        if (backtest->parsed()) return cmd_backtest(common, out);
        if (coverage->parsed()) return cmd_coverage(common, viol_path, p_opt, out_path, out);
        if (export_params->parsed()) return cmd_export_params(common, out_path, out);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const nlohmann::json::exception& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace gfagru::cli
