#pragma once

// Run configuration: an INI-style key-value file with [sections], overridden
// by GFAGRU_<SECTION>_<KEY> environment variables, overridden in turn by
// command-line assignments.

#include "gfagru/backtest.hpp"
#include "gfagru/data.hpp"
#include "gfagru/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gfagru {

/// Accepted (q, n) pairs; each satisfies n (1 - q) = 500.
const std::vector<std::pair<double, std::size_t>>& standard_cvar_levels();

struct RunConfig {
    // [data]
    std::string prices;
    std::string market = "MKT";
    SplitSpec split;
    // [train]
    TrainConfig train;
    std::uint64_t train_seed = 1;
    // [cvar]
    double q = 0.95;
    std::size_t scenarios = 10000;
    std::vector<Target> targets{Target{false, 0.01}, Target{false, 0.02}, Target{false, 0.03}, Target{true, 0.0}};
    bool allow_nonstandard = false;
    // [backtest]
    std::size_t repetitions = 10;
    std::vector<std::string> strategies{"EW", "SAA", "DCC-MM", "GF-AGRU"};
    std::uint64_t backtest_seed = 7;
    std::size_t workers = 1;
    bool coverage = false;
    // [paths]
    std::string model_dir = "model";
    std::string output_dir = "reports";

    /// Assigns one "section.key"; unknown keys and malformed values are ConfigError.
    void set(const std::string& key, const std::string& value);
    void validate() const;

    /// Sorted "key=value" lines of every field.
    std::string canonical() const;
    /// FNV-1a 64 of canonical() without the paths.* lines, 16 hex digits.
    std::string hash() const;
    nlohmann::json to_json() const;

    static const std::vector<std::string>& keys();
};

/// Parses the key-value format into "section.key" -> value.
std::map<std::string, std::string> parse_key_values(std::istream& in);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Variable name for a key: "cvar.q" -> "GFAGRU_CVAR_Q".
std::string env_name(const std::string& key);

/// Defaults, then the file (if any), then the environment, then overrides.
RunConfig load_config(const std::optional<std::string>& path, const EnvLookup& env,
                      const std::vector<std::pair<std::string, std::string>>& overrides);

/// std::getenv-backed lookup.
EnvLookup process_env();

std::string fnv1a_hex(const std::string& text);

}  // namespace gfagru
