#include "gfagru/config.hpp"

#include "gfagru/errors.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace gfagru;

namespace {

EnvLookup env_from(std::map<std::string, std::string> vars) {
    return [vars = std::move(vars)](const std::string& name) -> std::optional<std::string> {
        const auto it = vars.find(name);
        if (it == vars.end()) return std::nullopt;
        return it->second;
    };
}

EnvLookup no_env() { return env_from({}); }

std::string write_temp(const std::string& name, const std::string& text) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << text;
    return path.string();
}

}  // namespace

TEST(ConfigParse, SectionsCommentsAndWhitespace) {
    std::istringstream in("# top\n[cvar]\n q = 0.99 # inline\nn=50000\n\n[data]\nprices = a b.csv\n");
    const auto kv = parse_key_values(in);
    ASSERT_EQ(kv.size(), 3u);
    EXPECT_EQ(kv.at("cvar.q"), "0.99");
    EXPECT_EQ(kv.at("cvar.n"), "50000");
    EXPECT_EQ(kv.at("data.prices"), "a b.csv");
}

TEST(ConfigParse, MalformedLines) {
    std::istringstream a("[cvar\nq=1\n");
    EXPECT_THROW(parse_key_values(a), ConfigError);
    std::istringstream b("[cvar]\nq 0.9\n");
    EXPECT_THROW(parse_key_values(b), ConfigError);
    std::istringstream c("= 3\n");
    EXPECT_THROW(parse_key_values(c), ConfigError);
}

TEST(Config, Defaults) {
    const auto c = load_config(std::nullopt, no_env(), {});
    EXPECT_DOUBLE_EQ(c.q, 0.95);
    EXPECT_EQ(c.scenarios, 10000u);
    ASSERT_EQ(c.targets.size(), 4u);
    EXPECT_TRUE(c.targets[3].ew);
    EXPECT_EQ(c.strategies.size(), 4u);
    EXPECT_EQ(c.train.window, 200u);
}

TEST(Config, EnvironmentName) {
    EXPECT_EQ(env_name("cvar.q"), "GFAGRU_CVAR_Q");
    EXPECT_EQ(env_name("train.l_fix"), "GFAGRU_TRAIN_L_FIX");
}

TEST(Config, PrecedenceFileEnvFlag) {
    const auto path = write_temp("gfagru_prec.ini", "[train]\nwindow = 50\nensemble = 2\nl_tv = 0.002\n");
    auto c = load_config(path, no_env(), {});
    EXPECT_EQ(c.train.window, 50u);
    c = load_config(path, env_from({{"GFAGRU_TRAIN_WINDOW", "60"}}), {});
    EXPECT_EQ(c.train.window, 60u);
    EXPECT_EQ(c.train.ensemble, 2u);
    c = load_config(path, env_from({{"GFAGRU_TRAIN_WINDOW", "60"}}), {{"train.window", "70"}});
    EXPECT_EQ(c.train.window, 70u);
    EXPECT_DOUBLE_EQ(c.train.l_tv, 0.002);
}

TEST(Config, StandardCvarLevels) {
    for (const auto& [q, n] : standard_cvar_levels()) {
        EXPECT_NEAR(static_cast<double>(n) * (1.0 - q), 500.0, 1e-6);
        EXPECT_NO_THROW(load_config(std::nullopt, no_env(), {{"cvar.q", std::to_string(q)}, {"cvar.n", std::to_string(n)}}));
    }
    EXPECT_THROW(load_config(std::nullopt, no_env(), {{"cvar.q", "0.95"}, {"cvar.n", "5000"}}), ConfigError);
    const auto c = load_config(std::nullopt, no_env(),
                               {{"cvar.q", "0.95"}, {"cvar.n", "5000"}, {"cvar.allow_nonstandard", "true"}});
    EXPECT_EQ(c.scenarios, 5000u);
}

TEST(Config, RejectsBadValues) {
    EXPECT_THROW(load_config(std::nullopt, no_env(), {{"cvar.nope", "1"}}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, no_env(), {{"train.window", "-3"}}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, no_env(), {{"cvar.q", "high"}}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, no_env(), {{"backtest.coverage", "maybe"}}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, no_env(), {{"backtest.repetitions", "0"}}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, no_env(), {{"data.split_date", "June"}}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, no_env(), {{"train.ablation", "half"}}), ConfigError);
    EXPECT_THROW(load_config(std::string("/nonexistent/gfagru.ini"), no_env(), {}), ConfigError);
}

TEST(Config, ListValues) {
    const auto c = load_config(std::nullopt, no_env(),
                               {{"cvar.targets", "0.01, ew"}, {"backtest.strategies", "EW,SAA"}});
    ASSERT_EQ(c.targets.size(), 2u);
    EXPECT_DOUBLE_EQ(c.targets[0].value, 0.01);
    EXPECT_TRUE(c.targets[1].ew);
    EXPECT_EQ(c.strategies, (std::vector<std::string>{"EW", "SAA"}));
}

TEST(ConfigHash, Fnv1aVectors) {
    EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
    EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
    EXPECT_EQ(fnv1a_hex("foobar"), "85944171f73967e8");
}

TEST(ConfigHash, StableAndSensitive) {
    const auto a = load_config(std::nullopt, no_env(), {});
    const auto b = load_config(std::nullopt, no_env(), {});
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_EQ(a.hash().size(), 16u);
    EXPECT_NE(a.hash(), fnv1a_hex(a.canonical()));
    // output locations do not change results
    const auto moved = load_config(std::nullopt, no_env(), {{"paths.output_dir", "elsewhere"}, {"paths.model_dir", "m2"}});
    EXPECT_EQ(a.hash(), moved.hash());
    EXPECT_NE(a.canonical(), moved.canonical());
    const auto c = load_config(std::nullopt, no_env(), {{"backtest.seed", "8"}});
    EXPECT_NE(a.hash(), c.hash());
    // the order of assignments does not matter
    const auto d = load_config(std::nullopt, no_env(), {{"train.window", "9"}, {"backtest.seed", "8"}});
    const auto e = load_config(std::nullopt, no_env(), {{"backtest.seed", "8"}, {"train.window", "9"}});
    EXPECT_EQ(d.hash(), e.hash());
}

TEST(ConfigHash, CanonicalLinesAreSorted) {
    const auto c = load_config(std::nullopt, no_env(), {});
    std::istringstream in(c.canonical());
    std::string prev, line;
    std::size_t count = 0;
    while (std::getline(in, line)) {
        EXPECT_LT(prev, line);
        prev = line;
        ++count;
    }
    EXPECT_EQ(count, RunConfig::keys().size());
}

TEST(Config, JsonCarriesEveryKey) {
    const auto c = load_config(std::nullopt, no_env(), {});
    const auto j = c.to_json();
    for (const auto& k : RunConfig::keys()) EXPECT_TRUE(j.contains(k)) << k;
}
