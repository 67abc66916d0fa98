#include "gfagru/config.hpp"

#include "gfagru/csv.hpp"
#include "gfagru/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace gfagru {

const std::vector<std::pair<double, std::size_t>>& standard_cvar_levels() {
    static const std::vector<std::pair<double, std::size_t>> levels{{0.90, 5000}, {0.95, 10000}, {0.99, 50000}};
    return levels;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double x = 0.0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc{} || p != end || !std::isfinite(x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc{} || p != end) throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
    return x;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string num(double x) { return csv::format_number(x); }

struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define GF_DOUBLE(k, member)                                                          \
    Field {                                                                           \
        k, [](RunConfig& c, const std::string& v) { c.member = to_double(k, v); },    \
            [](const RunConfig& c) { return num(c.member); }                          \
    }
#define GF_UINT(k, member)                                                                                     \
    Field {                                                                                                    \
        k, [](RunConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_uint(k, v)); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }                                        \
    }
#define GF_STRING(k, member)                                                  \
    Field {                                                                   \
        k, [](RunConfig& c, const std::string& v) { c.member = v; },          \
            [](const RunConfig& c) { return c.member; }                       \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table{
        GF_STRING("data.prices", prices),
        GF_STRING("data.market", market),
        Field{"data.train_rows",
              [](RunConfig& c, const std::string& v) {
                  if (v.empty()) c.split.train_rows.reset();
                  else c.split.train_rows = to_uint("data.train_rows", v);
              },
              [](const RunConfig& c) { return c.split.train_rows ? std::to_string(*c.split.train_rows) : ""; }},
        Field{"data.split_date",
              [](RunConfig& c, const std::string& v) {
                  if (v.empty()) c.split.split_date.reset();
                  else c.split.split_date = v;
              },
              [](const RunConfig& c) { return c.split.split_date.value_or(""); }},
        GF_DOUBLE("data.train_fraction", split.train_fraction),
        GF_DOUBLE("train.l_fix", train.l_fix),
        GF_DOUBLE("train.l_tv", train.l_tv),
        GF_UINT("train.outer_iterations", train.outer_iterations),
        GF_UINT("train.fix_epochs", train.fix_epochs),
        GF_UINT("train.tv_epochs", train.tv_epochs),
        GF_UINT("train.window", train.window),
        Field{"train.validation_fraction",
              [](RunConfig& c, const std::string& v) {
                  c.train.validation_fraction = to_double("train.validation_fraction", v);
                  c.split.validation_fraction = c.train.validation_fraction;
              },
              [](const RunConfig& c) { return num(c.train.validation_fraction); }},
        GF_UINT("train.ensemble", train.ensemble),
        Field{"train.ablation", [](RunConfig& c, const std::string& v) { c.train.ablation = parse_ablation(v); },
              [](const RunConfig& c) { return to_string(c.train.ablation); }},
        GF_UINT("train.hidden_market", train.hidden_market),
        GF_UINT("train.hidden_stock", train.hidden_stock),
        GF_UINT("train.eval_every", train.eval_every),
        GF_UINT("train.patience", train.patience),
        GF_DOUBLE("train.momentum", train.momentum),
        GF_DOUBLE("train.tail_init", train.tail_init),
        GF_DOUBLE("train.scale_a", train.scale_a),
        GF_UINT("train.chunk", train.chunk),
        GF_UINT("train.workers", train.workers),
        GF_UINT("train.seed", train_seed),
        GF_DOUBLE("cvar.q", q),
        GF_UINT("cvar.n", scenarios),
        Field{"cvar.targets",
              [](RunConfig& c, const std::string& v) {
                  c.targets.clear();
                  for (const auto& t : split_list(v)) c.targets.push_back(Target::parse(t));
              },
              [](const RunConfig& c) {
                  std::string s;
                  for (const auto& t : c.targets) s += (s.empty() ? "" : ",") + t.label();
                  return s;
              }},
        Field{"cvar.allow_nonstandard",
              [](RunConfig& c, const std::string& v) { c.allow_nonstandard = to_bool("cvar.allow_nonstandard", v); },
              [](const RunConfig& c) { return std::string(c.allow_nonstandard ? "true" : "false"); }},
        GF_UINT("backtest.repetitions", repetitions),
        Field{"backtest.strategies", [](RunConfig& c, const std::string& v) { c.strategies = split_list(v); },
              [](const RunConfig& c) {
                  std::string s;
                  for (const auto& t : c.strategies) s += (s.empty() ? "" : ",") + t;
                  return s;
              }},
        GF_UINT("backtest.seed", backtest_seed),
        GF_UINT("backtest.workers", workers),
        Field{"backtest.coverage", [](RunConfig& c, const std::string& v) { c.coverage = to_bool("backtest.coverage", v); },
              [](const RunConfig& c) { return std::string(c.coverage ? "true" : "false"); }},
        GF_STRING("paths.model_dir", model_dir),
        GF_STRING("paths.output_dir", output_dir),
    };
    return table;
}

#undef GF_DOUBLE
#undef GF_UINT
#undef GF_STRING

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& f : fields()) out.push_back(f.key);
        return out;
    }();
    return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(*this, trim(value));
            return;
        }
    }
    throw ConfigError("unknown configuration key '" + key + "'");
}

void RunConfig::validate() const {
    train.validate();
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("cvar.q: must lie in (0, 1)");
    if (scenarios == 0) throw ConfigError("cvar.n: must be positive");
    if (!allow_nonstandard) {
        bool ok = false;
        for (const auto& [lq, ln] : standard_cvar_levels()) ok = ok || (std::abs(q - lq) < 1e-12 && scenarios == ln);
        if (!ok) {
            throw ConfigError("cvar.q/cvar.n: (" + num(q) + ", " + std::to_string(scenarios) +
                              ") is not one of (0.9, 5000), (0.95, 10000), (0.99, 50000); set "
                              "cvar.allow_nonstandard=true to override");
        }
    }
    if (repetitions == 0) throw ConfigError("backtest.repetitions: must be positive");
    if (workers == 0) throw ConfigError("backtest.workers: must be positive");
    if (strategies.empty()) throw ConfigError("backtest.strategies: empty list");
    if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0)) {
        throw ConfigError("data.train_fraction: must lie in (0, 1)");
    }
    if (split.split_date && !valid_iso_date(*split.split_date)) {
        throw ConfigError("data.split_date: expected YYYY-MM-DD, got '" + *split.split_date + "'");
    }
    if (market.empty()) throw ConfigError("data.market: empty ticker");
}

std::string RunConfig::canonical() const {
    std::vector<std::string> lines;
    for (const auto& f : fields()) lines.push_back(f.key + "=" + f.get(*this));
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    return out;
}

std::string RunConfig::hash() const {
    std::istringstream in(canonical());
    std::string kept;
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("paths.", 0) != 0) kept += line + "\n";
    }
    return fnv1a_hex(kept);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : fields()) j[f.key] = f.get(*this);
    return j;
}

std::map<std::string, std::string> parse_key_values(std::istream& in) {
    std::map<std::string, std::string> out;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (!section.empty()) key = section + "." + key;
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

std::string env_name(const std::string& key) {
    std::string out = "GFAGRU_";
    for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

RunConfig load_config(const std::optional<std::string>& path, const EnvLookup& env,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError("cannot open config file '" + *path + "'");
        for (const auto& [k, v] : parse_key_values(in)) cfg.set(k, v);
    }
    if (env) {
        for (const auto& k : RunConfig::keys()) {
            if (auto v = env(env_name(k))) cfg.set(k, *v);
        }
    }
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    cfg.validate();
    return cfg;
}

EnvLookup process_env() {
    return [](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str())) return std::string(v);
        return std::nullopt;
    };
}

}  // namespace gfagru
