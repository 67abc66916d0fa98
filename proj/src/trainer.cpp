#include "gfagru/trainer.hpp"

#include "gfagru/errors.hpp"
#include "gfagru/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace gfagru {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::naive: return "naive";
        case Ablation::no_attention: return "no-attention";
    }
    return "full";
}

Ablation parse_ablation(const std::string& text) {
    if (text == "full") return Ablation::full;
    if (text == "naive") return Ablation::naive;
    if (text == "no-attention" || text == "no_attention") return Ablation::no_attention;
    throw ConfigError("unknown ablation '" + text + "' (expected full, naive or no-attention)");
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("train." + field + ": " + why);
    };
    if (!(l_fix > 0.0)) fail("l_fix", "must be positive");
    if (!(l_tv > 0.0)) fail("l_tv", "must be positive");
    if (outer_iterations == 0) fail("outer_iterations", "must be at least 1");
    if (window == 0) fail("window", "must be at least 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) fail("validation_fraction", "must lie in [0, 1)");
    if (ensemble == 0) fail("ensemble", "must be at least 1");
    if (hidden_market == 0) fail("hidden_market", "must be at least 1");
    if (hidden_stock == 0) fail("hidden_stock", "must be at least 1");
    if (eval_every == 0) fail("eval_every", "must be at least 1");
    if (patience == 0) fail("patience", "must be at least 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
    if (!(tail_init >= kTailMin && tail_init <= kTailMax)) fail("tail_init", "must lie in [1, 3]");
    if (!(scale_a > 0.0)) fail("scale_a", "must be positive");
    if (chunk == 0) fail("chunk", "must be at least 1");
    if (workers == 0) fail("workers", "must be at least 1");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"l_fix", l_fix},
            {"l_tv", l_tv},
            {"outer_iterations", outer_iterations},
            {"fix_epochs", fix_epochs},
            {"tv_epochs", tv_epochs},
            {"window", window},
            {"validation_fraction", validation_fraction},
            {"ensemble", ensemble},
            {"ablation", to_string(ablation)},
            {"hidden_market", hidden_market},
            {"hidden_stock", hidden_stock},
            {"eval_every", eval_every},
            {"patience", patience},
            {"momentum", momentum},
            {"tail_init", tail_init},
            {"scale_a", scale_a},
            {"chunk", chunk}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.l_fix = j.at("l_fix").get<double>();
    c.l_tv = j.at("l_tv").get<double>();
    c.outer_iterations = j.at("outer_iterations").get<std::size_t>();
    c.fix_epochs = j.at("fix_epochs").get<std::size_t>();
    c.tv_epochs = j.at("tv_epochs").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    c.ensemble = j.at("ensemble").get<std::size_t>();
    c.ablation = parse_ablation(j.at("ablation").get<std::string>());
    c.hidden_market = j.at("hidden_market").get<std::size_t>();
    c.hidden_stock = j.at("hidden_stock").get<std::size_t>();
    c.eval_every = j.at("eval_every").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.momentum = j.at("momentum").get<double>();
    c.tail_init = j.at("tail_init").get<double>();
    c.scale_a = j.at("scale_a").get<double>();
    c.chunk = j.at("chunk").get<std::size_t>();
    return c;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Tensor Normalization::apply(const Tensor& window) const {
    if (window.rank() != 2 || window.rows() != feature_mean.size()) {
        throw std::invalid_argument("normalization: window shape " + shape_string(window.shape()) +
                                    " does not match " + std::to_string(feature_mean.size()) + " feature rows");
    }
    Tensor out(window.shape());
    for (std::size_t d = 0; d < window.rows(); ++d) {
        for (std::size_t t = 0; t < window.cols(); ++t) {
            out.at(d, t) = (window.at(d, t) - feature_mean[d]) / feature_scale[d];
        }
    }
    return out;
}

nlohmann::json Normalization::to_json() const {
    return {{"feature_mean", feature_mean},
            {"feature_scale", feature_scale},
            {"label_mean", label_mean},
            {"label_scale", label_scale}};
}

Normalization Normalization::from_json(const nlohmann::json& j) {
    Normalization n;
    n.feature_mean = j.at("feature_mean").get<std::vector<double>>();
    n.feature_scale = j.at("feature_scale").get<std::vector<double>>();
    n.label_mean = j.at("label_mean").get<double>();
    n.label_scale = j.at("label_scale").get<double>();
    if (n.feature_mean.size() != n.feature_scale.size() || !(n.label_scale > 0.0)) {
        throw DataError("normalization record is inconsistent");
    }
    return n;
}

Normalization fit_normalization(std::span<const SamplePair> samples) {
    if (samples.empty()) throw DataError("normalization: no samples");
    const std::size_t rows = samples[0].features.rows();
    Normalization n;
    n.feature_mean.assign(rows, 0.0);
    n.feature_scale.assign(rows, 0.0);
    double count = 0.0;
    double ly = 0.0;
    for (const auto& s : samples) {
        for (std::size_t d = 0; d < rows; ++d) {
            for (std::size_t t = 0; t < s.features.cols(); ++t) n.feature_mean[d] += s.features.at(d, t);
        }
        count += static_cast<double>(s.features.cols());
        ly += s.label;
    }
    for (double& m : n.feature_mean) m /= count;
    n.label_mean = ly / static_cast<double>(samples.size());
    double vy = 0.0;
    for (const auto& s : samples) {
        for (std::size_t d = 0; d < rows; ++d) {
            for (std::size_t t = 0; t < s.features.cols(); ++t) {
                const double e = s.features.at(d, t) - n.feature_mean[d];
                n.feature_scale[d] += e * e;
            }
        }
        vy += (s.label - n.label_mean) * (s.label - n.label_mean);
    }
    for (double& v : n.feature_scale) {
        v = std::sqrt(v / count);
        if (!(v > 0.0)) v = 1.0;
    }
    n.label_scale = std::sqrt(vy / static_cast<double>(samples.size()));
    if (!(n.label_scale > 0.0)) n.label_scale = 1.0;
    return n;
}

nlohmann::json TrainingLog::to_json() const {
    return {{"initial_validation_nll", initial_validation_nll},
            {"accepted_validation_nll", accepted_validation_nll},
            {"validation_nll", validation_nll},
            {"fix_train_nll_before", fix_train_nll_before},
            {"fix_train_nll_after", fix_train_nll_after},
            {"tv_epochs_run", tv_epochs_run},
            {"fix_epochs_run", fix_epochs_run},
            {"nan_recoveries", nan_recoveries},
            {"fix_optim_skipped", fix_optim_skipped}};
}

std::span<const SamplePair> TrainingSet::fit_part() const {
    return std::span<const SamplePair>(samples).first(samples.size() - validation);
}

std::span<const SamplePair> TrainingSet::validation_part() const {
    return std::span<const SamplePair>(samples).last(validation);
}

// ---------------------------------------------------------------------------
// Fitting engine shared by the market and stock problems
// ---------------------------------------------------------------------------

namespace {

enum class Kind { market, stock };

struct Chunk {
    std::vector<Tensor> steps;
    Tensor y;   // S x 1, normalized
    Tensor zm;  // S x 1, stock problems only
    std::size_t count = 0;
};

std::vector<Chunk> make_chunks(std::span<const SamplePair> samples, std::span<const double> zm,
                               const Normalization& norm, std::size_t chunk) {
    std::vector<Chunk> out;
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const std::size_t count = std::min(chunk, samples.size() - begin);
        Chunk c;
        c.count = count;
        std::vector<Tensor> windows;
        windows.reserve(count);
        c.y = Tensor::matrix(count, 1);
        if (!zm.empty()) c.zm = Tensor::matrix(count, 1);
        for (std::size_t s = 0; s < count; ++s) {
            windows.push_back(norm.apply(samples[begin + s].features));
            c.y[s] = norm.label(samples[begin + s].label);
            if (!zm.empty()) c.zm[s] = zm[begin + s];
        }
        c.steps = to_steps(windows);
        out.push_back(std::move(c));
    }
    return out;
}

struct Problem {
    Kind kind = Kind::market;
    HeadSpec head;
    double scale_a = kDefaultScaleA;
    std::vector<Chunk> fit;
    std::vector<Chunk> val;
    std::size_t fit_count = 0;
    std::size_t val_count = 0;
};

Var chunk_nll(const Problem& p, Var theta, std::span<const Var> tails, const Chunk& c) {
    Tape& tape = *theta.tape;
    Var y = tape.constant(c.y);
    if (p.kind == Kind::market) {
        return ad::market_nll(ad::slice_cols(theta, 0, 1), ad::slice_cols(theta, 1, 1), tails[0], tails[1], y,
                              p.scale_a);
    }
    Var zm = tape.constant(c.zm);
    return ad::stock_nll(ad::slice_cols(theta, 0, 1), ad::slice_cols(theta, 1, 1), ad::slice_cols(theta, 2, 1),
                         tails[0], tails[1], tails[2], tails[3], y, zm, p.scale_a);
}

std::vector<Var> bind_tails(Tape& tape, std::span<const Tensor> tails, bool trainable) {
    std::vector<Var> out;
    for (const Tensor& t : tails) out.push_back(trainable ? tape.leaf(t) : tape.constant(t));
    return out;
}

/// Summed normalized NLL; accumulates network gradients when `grads` is set.
double network_pass(const Problem& p, const AgruParams& params, std::span<const Tensor> tails,
                    std::span<const Chunk> chunks, std::vector<Tensor>* grads) {
    double total = 0.0;
    if (grads) {
        grads->clear();
        for (const Tensor* t : params.tensors()) grads->emplace_back(t->shape(), 0.0);
    }
    for (const Chunk& c : chunks) {
        Tape tape;
        const AgruVars vars = bind(tape, params, grads != nullptr);
        const auto tv = bind_tails(tape, tails, false);
        Var theta = forward_theta(tape, vars, p.head, c.steps);
        Var nll = chunk_nll(p, theta, tv, c);
        total += nll.value()[0];
        if (grads) {
            tape.backward(nll, Tensor::scalar(1.0));
            for (std::size_t k = 0; k < vars.vars.size(); ++k) {
                const Tensor g = tape.grad(vars.vars[k]);
                auto dst = (*grads)[k].values();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
            }
        }
    }
    return total;
}

std::vector<Tensor> frozen_thetas(const Problem& p, const AgruParams& params, std::span<const Chunk> chunks) {
    std::vector<Tensor> out;
    for (const Chunk& c : chunks) {
        Tape tape;
        const AgruVars vars = bind(tape, params, false);
        out.push_back(forward_theta(tape, vars, p.head, c.steps).value());
    }
    return out;
}

/// Summed normalized NLL with the network outputs fixed; gradients for every tail tensor.
double tail_pass(const Problem& p, std::span<const Tensor> thetas, std::span<const Tensor> tails,
                 std::span<const Chunk> chunks, std::vector<Tensor>* grads) {
    double total = 0.0;
    if (grads) {
        grads->clear();
        for (const Tensor& t : tails) grads->emplace_back(t.shape(), 0.0);
    }
    for (std::size_t k = 0; k < chunks.size(); ++k) {
        Tape tape;
        Var theta = tape.constant(thetas[k]);
        const auto tv = bind_tails(tape, tails, grads != nullptr);
        Var nll = chunk_nll(p, theta, tv, chunks[k]);
        total += nll.value()[0];
        if (grads) {
            tape.backward(nll, Tensor::scalar(1.0));
            for (std::size_t i = 0; i < tv.size(); ++i) (*grads)[i][0] += tape.grad(tv[i])[0];
        }
    }
    return total;
}

struct FitResult {
    AgruParams params;
    std::vector<Tensor> tails;
    Normalization norm;
    TrainingLog log;
};

void scale_grads(std::vector<Tensor>& grads, double k) {
    for (Tensor& g : grads) {
        for (double& x : g.values()) x *= k;
    }
}

FitResult fit_problem(Kind kind, const TrainingSet& data, std::span<const double> zm, const TrainConfig& cfg,
                      std::uint64_t seed) {
    cfg.validate();
    if (data.samples.empty()) throw DataError("training set is empty");
    if (data.validation >= data.samples.size()) throw DataError("validation part leaves no fitting samples");
    const std::size_t d_in = kind == Kind::market ? 2 : 4;
    for (const auto& s : data.samples) {
        if (s.features.rows() != d_in) {
            throw DataError("training sample has " + std::to_string(s.features.rows()) + " feature rows, expected " +
                            std::to_string(d_in));
        }
    }
    if (kind == Kind::stock && zm.size() != data.samples.size()) {
        throw DataError("realized market factor is not aligned with the stock samples");
    }

    FitResult r;
    r.norm = fit_normalization(data.fit_part());
    Problem p;
    p.kind = kind;
    p.head = kind == Kind::market ? HeadSpec::market() : HeadSpec::stock();
    p.scale_a = cfg.scale_a;
    const auto fit = data.fit_part();
    const auto val = data.validation_part();
    p.fit = make_chunks(fit, zm.empty() ? zm : zm.first(fit.size()), r.norm, cfg.chunk);
    p.val = make_chunks(val, zm.empty() ? zm : zm.last(val.size()), r.norm, cfg.chunk);
    p.fit_count = fit.size();
    p.val_count = val.size();
    const bool has_val = p.val_count > 0;
    const double log_scale = std::log(r.norm.label_scale);
    auto original = [&](double nll, std::size_t count) { return nll + static_cast<double>(count) * log_scale; };

    const bool naive = cfg.ablation == Ablation::naive;
    const double tail0 = naive ? 1.0 : cfg.tail_init;
    r.tails.assign(kind == Kind::market ? 2 : 4, Tensor::scalar(tail0));
    r.params = init_params(d_in, kind == Kind::market ? cfg.hidden_market : cfg.hidden_stock,
                           kind == Kind::market ? 2 : 3, seed, cfg.ablation != Ablation::no_attention);

    auto val_nll = [&](const AgruParams& params, std::span<const Tensor> tails) {
        return has_val ? network_pass(p, params, tails, p.val, nullptr) : network_pass(p, params, tails, p.fit, nullptr);
    };
    const std::size_t val_size = has_val ? p.val_count : p.fit_count;

    AgruParams best_params = r.params;
    std::vector<Tensor> best_tails = r.tails;
    double best_val = val_nll(r.params, r.tails);
    r.log.initial_validation_nll = original(best_val, val_size);
    r.log.fix_optim_skipped = naive;

    RmsPropConfig tv_cfg{cfg.l_tv, cfg.momentum};
    RmsPropConfig fix_cfg{cfg.l_fix, cfg.momentum};
    auto param_ptrs = r.params.tensors();
    auto param_values = [&] {
        std::vector<Tensor> v;
        for (Tensor* t : param_ptrs) v.push_back(*t);
        return v;
    };
    OptimizerState tv_state(tv_cfg, param_values());
    bool recovered = false;
    auto recover = [&](const NumericError& e, double& lr) {
        if (recovered) throw NumericError(std::string("training aborted after a second numeric failure: ") + e.what());
        recovered = true;
        lr *= 0.5;
        ++r.log.nan_recoveries;
    };

    std::vector<Tensor> grads;
    for (std::size_t outer = 0; outer < cfg.outer_iterations; ++outer) {
        // TV-AGRU
        AgruParams block_best = r.params;
        double block_val = val_nll(r.params, r.tails);
        std::size_t stale = 0;
        for (std::size_t epoch = 1; epoch <= cfg.tv_epochs; ++epoch) {
            try {
                network_pass(p, r.params, r.tails, p.fit, &grads);
                scale_grads(grads, 1.0 / static_cast<double>(p.fit_count));
                std::vector<Tensor> values = param_values();
                rmsprop_step(values, grads, tv_state);
                for (std::size_t k = 0; k < values.size(); ++k) *param_ptrs[k] = std::move(values[k]);
                ++r.log.tv_epochs_run;
                if (epoch % cfg.eval_every != 0 && epoch != cfg.tv_epochs) continue;
                const double v = val_nll(r.params, r.tails);
                r.log.validation_nll.push_back(original(v, val_size));
                if (v < block_val) {
                    block_val = v;
                    block_best = r.params;
                    stale = 0;
                } else if (++stale >= cfg.patience) {
                    break;
                }
            } catch (const NumericError& e) {
                recover(e, tv_cfg.learning_rate);
                r.params = block_best;
                param_ptrs = r.params.tensors();
                tv_state = OptimizerState(tv_cfg, param_values());
            }
        }
        r.params = block_best;
        param_ptrs = r.params.tensors();
        if (block_val < best_val) {
            best_val = block_val;
            best_params = r.params;
            best_tails = r.tails;
        }
        if (naive) continue;

        // FIX-OPTIM
        const auto thetas = frozen_thetas(p, r.params, p.fit);
        OptimizerState fix_state(fix_cfg, r.tails);
        std::vector<Tensor> block_tails = r.tails;
        double block_loss = std::numeric_limits<double>::infinity();
        double first_loss = 0.0;
        for (std::size_t epoch = 0; epoch <= cfg.fix_epochs; ++epoch) {
            try {
                const double loss = tail_pass(p, thetas, r.tails, p.fit, &grads);
                if (epoch == 0) first_loss = loss;
                if (loss < block_loss) {
                    block_loss = loss;
                    block_tails = r.tails;
                }
                if (epoch == cfg.fix_epochs) break;
                scale_grads(grads, 1.0 / static_cast<double>(p.fit_count));
                rmsprop_step(r.tails, grads, fix_state);
                for (Tensor& t : r.tails) t[0] = std::clamp(t[0], kTailMin, kTailMax);
                ++r.log.fix_epochs_run;
            } catch (const NumericError& e) {
                recover(e, fix_cfg.learning_rate);
                r.tails = block_tails;
                fix_state = OptimizerState(fix_cfg, r.tails);
            }
        }
        r.tails = block_tails;
        r.log.fix_train_nll_before.push_back(original(first_loss, p.fit_count));
        r.log.fix_train_nll_after.push_back(original(block_loss, p.fit_count));
        const double v = val_nll(r.params, r.tails);
        r.log.validation_nll.push_back(original(v, val_size));
        if (v < best_val) {
            best_val = v;
            best_params = r.params;
            best_tails = r.tails;
        }
    }
    r.params = best_params;
    r.tails = best_tails;
    r.log.accepted_validation_nll = original(best_val, val_size);
    return r;
}

MarketTheta denormalize_market(const std::vector<double>& t, const Normalization& n) {
    return MarketTheta{n.label_mean + n.label_scale * t[0], n.label_scale * t[1]};
}

StockTheta denormalize_stock(const std::vector<double>& t, const Normalization& n) {
    return StockTheta{n.label_mean + n.label_scale * t[0], n.label_scale * t[1], n.label_scale * t[2]};
}

std::vector<Tensor> normalized(const Normalization& n, std::span<const Tensor> windows) {
    std::vector<Tensor> out;
    out.reserve(windows.size());
    for (const Tensor& w : windows) out.push_back(n.apply(w));
    return out;
}

std::vector<Tensor> sample_windows(std::span<const SamplePair> samples) {
    std::vector<Tensor> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.features);
    return out;
}

}  // namespace

TrainedMarketModel fit_market(const TrainingSet& data, const TrainConfig& cfg, std::uint64_t seed) {
    FitResult r = fit_problem(Kind::market, data, {}, cfg, seed);
    TrainedMarketModel m;
    m.params = std::move(r.params);
    m.tail = TailParams{r.tails[0][0], r.tails[1][0]};
    m.norm = std::move(r.norm);
    m.log = std::move(r.log);
    m.seed = seed;
    m.z_tilde = realized_market_factor(m, data.samples, cfg.scale_a);
    return m;
}

TrainedStockModel fit_stock(const std::string& ticker, const TrainingSet& data, std::span<const double> z_market,
                            const TrainConfig& cfg, std::uint64_t seed) {
    FitResult r = fit_problem(Kind::stock, data, z_market, cfg, seed);
    TrainedStockModel m;
    m.ticker = ticker;
    m.params = std::move(r.params);
    m.tail_market = TailParams{r.tails[0][0], r.tails[1][0]};
    m.tail_residual = TailParams{r.tails[2][0], r.tails[3][0]};
    m.norm = std::move(r.norm);
    m.log = std::move(r.log);
    m.seed = seed;
    return m;
}

std::vector<MarketTheta> predict_market(const TrainedMarketModel& m, std::span<const Tensor> windows) {
    std::vector<MarketTheta> out;
    if (windows.empty()) return out;
    const auto raw = predict_theta_batch(m.params, HeadSpec::market(), normalized(m.norm, windows));
    for (const auto& t : raw) out.push_back(denormalize_market(t, m.norm));
    return out;
}

std::vector<StockTheta> predict_stock(const TrainedStockModel& m, std::span<const Tensor> windows) {
    std::vector<StockTheta> out;
    if (windows.empty()) return out;
    const auto raw = predict_theta_batch(m.params, HeadSpec::stock(), normalized(m.norm, windows));
    for (const auto& t : raw) out.push_back(denormalize_stock(t, m.norm));
    return out;
}

double market_nll(const TrainedMarketModel& m, std::span<const SamplePair> samples, double scale_a) {
    const auto thetas = predict_market(m, sample_windows(samples));
    double total = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        total -= market_loglik(samples[s].label, thetas[s], m.tail, scale_a);
    }
    return total;
}

double stock_nll(const TrainedStockModel& m, std::span<const SamplePair> samples, std::span<const double> z_market,
                 double scale_a) {
    if (z_market.size() != samples.size()) throw DataError("stock_nll: market factor not aligned with samples");
    const auto thetas = predict_stock(m, sample_windows(samples));
    double total = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        total -= stock_cond_loglik(samples[s].label, z_market[s], thetas[s], m.tail_market, m.tail_residual, scale_a);
    }
    return total;
}

std::vector<double> realized_market_factor(const TrainedMarketModel& m, std::span<const SamplePair> samples,
                                           double scale_a) {
    const auto thetas = predict_market(m, sample_windows(samples));
    std::vector<double> z(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s) z[s] = latent_market(samples[s].label, thetas[s], m.tail, scale_a);
    return z;
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

std::uint64_t member_seed(std::uint64_t seed, std::size_t member, std::size_t stream) {
    // splitmix64 finalizer over the packed coordinates
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (member * 1000003ULL + stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

TrainedEnsemble train_ensemble(const ReturnPanel& panel, const Split& split, const TrainConfig& cfg,
                               std::uint64_t seed) {
    cfg.validate();
    Split s = split;
    s.validation_rows =
        static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(s.train_rows)));
    const auto anchors = training_anchors(s, cfg.window);
    const std::size_t n_val = validation_count(s, anchors);

    TrainingSet market_set{market_samples(panel, anchors, cfg.window, s.train_rows), n_val};
    std::vector<TrainingSet> stock_sets;
    for (std::size_t i = 0; i < panel.stocks(); ++i) {
        stock_sets.push_back({stock_samples(panel, i, anchors, cfg.window, s.train_rows), n_val});
    }

    TrainedEnsemble ens;
    ens.config = cfg;
    ens.tickers = panel.tickers;
    ens.seed = seed;
    for (std::size_t b = 0; b < cfg.ensemble; ++b) {
        EnsembleMember member;
        member.market = fit_market(market_set, cfg, member_seed(seed, b, 0));
        member.stocks.resize(panel.stocks());
        const std::vector<double>& z = member.market.z_tilde;
        parallel_for(panel.stocks(), cfg.workers, [&](std::size_t i) {
            member.stocks[i] = fit_stock(panel.tickers[i], stock_sets[i], z, cfg, member_seed(seed, b, i + 1));
        });
        ens.members.push_back(std::move(member));
    }
    return ens;
}

ForecastedFactorModel average_forecasts(std::span<const ForecastedFactorModel> models) {
    if (models.empty()) throw std::invalid_argument("average_forecasts: no models");
    ForecastedFactorModel out = models[0];
    const double k = 1.0 / static_cast<double>(models.size());
    for (std::size_t b = 1; b < models.size(); ++b) {
        if (models[b].stocks.size() != out.stocks.size()) {
            throw std::invalid_argument("average_forecasts: members disagree on the stock count");
        }
        for (std::size_t i = 0; i < out.stocks.size(); ++i) {
            if (models[b].stocks[i].ticker != out.stocks[i].ticker) {
                throw std::invalid_argument("average_forecasts: members disagree on tickers");
            }
        }
    }
    auto avg = [&](auto get) {
        double s = 0.0;
        for (const auto& m : models) s += get(m);
        return s * k;
    };
    out.market.alpha = avg([](const auto& m) { return m.market.alpha; });
    out.market.beta = avg([](const auto& m) { return m.market.beta; });
    out.tail_market.u = avg([](const auto& m) { return m.tail_market.u; });
    out.tail_market.v = avg([](const auto& m) { return m.tail_market.v; });
    for (std::size_t i = 0; i < out.stocks.size(); ++i) {
        StockModel& s = out.stocks[i];
        s.theta.alpha = avg([i](const auto& m) { return m.stocks[i].theta.alpha; });
        s.theta.beta = avg([i](const auto& m) { return m.stocks[i].theta.beta; });
        s.theta.gamma = avg([i](const auto& m) { return m.stocks[i].theta.gamma; });
        s.tail_market.u = avg([i](const auto& m) { return m.stocks[i].tail_market.u; });
        s.tail_market.v = avg([i](const auto& m) { return m.stocks[i].tail_market.v; });
        s.tail_residual.u = avg([i](const auto& m) { return m.stocks[i].tail_residual.u; });
        s.tail_residual.v = avg([i](const auto& m) { return m.stocks[i].tail_residual.v; });
    }
    return out;
}

namespace {

void check_architecture(const TrainedEnsemble& ens) {
    if (ens.members.empty()) throw std::invalid_argument("ensemble has no members");
    const auto& ref = ens.members.front();
    for (const auto& m : ens.members) {
        if (m.stocks.size() != ens.tickers.size()) throw std::invalid_argument("ensemble member misses stocks");
        if (m.market.params.hidden != ref.market.params.hidden ||
            m.market.params.attention != ref.market.params.attention) {
            throw std::invalid_argument("ensemble members have mismatched market architectures");
        }
        for (std::size_t i = 0; i < m.stocks.size(); ++i) {
            if (m.stocks[i].params.hidden != ref.stocks[i].params.hidden ||
                m.stocks[i].params.attention != ref.stocks[i].params.attention) {
                throw std::invalid_argument("ensemble members have mismatched stock architectures");
            }
        }
    }
}

}  // namespace

ForecastedFactorModel member_forecast(const EnsembleMember& member, const Tensor& market_window,
                                      std::span<const Tensor> stock_windows, double scale_a) {
    if (stock_windows.size() != member.stocks.size()) {
        throw std::invalid_argument("member_forecast: one window per stock required");
    }
    ForecastedFactorModel f;
    f.scale_a = scale_a;
    f.market = predict_market(member.market, std::span<const Tensor>(&market_window, 1)).front();
    f.tail_market = member.market.tail;
    for (std::size_t i = 0; i < member.stocks.size(); ++i) {
        const auto& sm = member.stocks[i];
        f.stocks.push_back({sm.ticker, predict_stock(sm, stock_windows.subspan(i, 1)).front(), sm.tail_market,
                            sm.tail_residual});
    }
    return f;
}

ForecastedFactorModel ensemble_forecast(const TrainedEnsemble& ens, const Tensor& market_window,
                                        std::span<const Tensor> stock_windows) {
    check_architecture(ens);
    std::vector<ForecastedFactorModel> fs;
    for (const auto& m : ens.members) fs.push_back(member_forecast(m, market_window, stock_windows, ens.config.scale_a));
    return average_forecasts(fs);
}

std::vector<ForecastedFactorModel> ensemble_forecast_panel(const TrainedEnsemble& ens, const ReturnPanel& panel,
                                                           std::span<const std::size_t> anchors) {
    check_architecture(ens);
    if (panel.tickers != ens.tickers) throw DataError("panel tickers do not match the trained model");
    const std::size_t window = ens.config.window;
    std::vector<Tensor> market_windows;
    for (std::size_t a : anchors) market_windows.push_back(build_features(panel.market_returns, {}, a, window));
    std::vector<std::vector<Tensor>> stock_windows(panel.stocks());
    for (std::size_t i = 0; i < panel.stocks(); ++i) {
        for (std::size_t a : anchors) {
            stock_windows[i].push_back(build_features(panel.market_returns, panel.stock_returns[i], a, window));
        }
    }
    std::vector<std::vector<ForecastedFactorModel>> per_date(anchors.size());
    for (const auto& member : ens.members) {
        const auto mk = predict_market(member.market, market_windows);
        std::vector<std::vector<StockTheta>> st;
        for (std::size_t i = 0; i < panel.stocks(); ++i) st.push_back(predict_stock(member.stocks[i], stock_windows[i]));
        for (std::size_t d = 0; d < anchors.size(); ++d) {
            ForecastedFactorModel f;
            f.scale_a = ens.config.scale_a;
            f.market = mk[d];
            f.tail_market = member.market.tail;
            for (std::size_t i = 0; i < panel.stocks(); ++i) {
                const auto& sm = member.stocks[i];
                f.stocks.push_back({sm.ticker, st[i][d], sm.tail_market, sm.tail_residual});
            }
            per_date[d].push_back(std::move(f));
        }
    }
    std::vector<ForecastedFactorModel> out;
    for (const auto& fs : per_date) out.push_back(average_forecasts(fs));
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

void write_network(const fs::path& path, const AgruParams& params) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    const auto named = params.to_named();
    write_snapshot(out, named);
    if (!out) throw DataError("failed writing '" + path.string() + "'");
}

AgruParams read_network(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model snapshot '" + path.string() + "'");
    try {
        const auto named = read_snapshot(in);
        return AgruParams::from_named(named);
    } catch (const std::runtime_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace

void save_ensemble(const TrainedEnsemble& ens, const std::string& dir, const nlohmann::json& run) {
    fs::create_directories(dir);
    nlohmann::json members = nlohmann::json::array();
    for (std::size_t b = 0; b < ens.members.size(); ++b) {
        const auto& m = ens.members[b];
        const std::string market_file = "member" + std::to_string(b) + "_market.snap";
        write_network(fs::path(dir) / market_file, m.market.params);
        nlohmann::json stocks = nlohmann::json::array();
        for (std::size_t i = 0; i < m.stocks.size(); ++i) {
            const auto& s = m.stocks[i];
            const std::string file = "member" + std::to_string(b) + "_stock" + std::to_string(i) + ".snap";
            write_network(fs::path(dir) / file, s.params);
            stocks.push_back({{"ticker", s.ticker},
                              {"file", file},
                              {"seed", s.seed},
                              {"tail_market", {{"u", s.tail_market.u}, {"v", s.tail_market.v}}},
                              {"tail_residual", {{"u", s.tail_residual.u}, {"v", s.tail_residual.v}}},
                              {"normalization", s.norm.to_json()},
                              {"log", s.log.to_json()}});
        }
        members.push_back({{"market",
                            {{"file", market_file},
                             {"seed", m.market.seed},
                             {"tail", {{"u", m.market.tail.u}, {"v", m.market.tail.v}}},
                             {"normalization", m.market.norm.to_json()},
                             {"z_tilde", m.market.z_tilde},
                             {"log", m.market.log.to_json()}}},
                           {"stocks", stocks}});
    }
    nlohmann::json manifest{{"format", "gfagru-model"},
                            {"version", 1},
                            {"seed", ens.seed},
                            {"tickers", ens.tickers},
                            {"config", ens.config.to_json()},
                            {"fix_optim_skipped", ens.config.ablation == Ablation::naive},
                            {"run", run},
                            {"members", members}};
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw DataError("cannot write manifest in '" + dir + "'");
    out << manifest.dump(2) << "\n";
}

TrainedEnsemble load_ensemble(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw DataError("no trained model at '" + dir + "' (missing manifest.json)");
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("format").get<std::string>() != "gfagru-model") throw DataError("not a gfagru model manifest");
        TrainedEnsemble ens;
        ens.seed = j.at("seed").get<std::uint64_t>();
        ens.tickers = j.at("tickers").get<std::vector<std::string>>();
        ens.config = TrainConfig::from_json(j.at("config"));
        for (const auto& mj : j.at("members")) {
            EnsembleMember m;
            const auto& mk = mj.at("market");
            m.market.params = read_network(fs::path(dir) / mk.at("file").get<std::string>());
            m.market.seed = mk.at("seed").get<std::uint64_t>();
            m.market.tail = TailParams{mk.at("tail").at("u").get<double>(), mk.at("tail").at("v").get<double>()};
            m.market.norm = Normalization::from_json(mk.at("normalization"));
            m.market.z_tilde = mk.at("z_tilde").get<std::vector<double>>();
            for (const auto& sj : mj.at("stocks")) {
                TrainedStockModel s;
                s.ticker = sj.at("ticker").get<std::string>();
                s.params = read_network(fs::path(dir) / sj.at("file").get<std::string>());
                s.seed = sj.at("seed").get<std::uint64_t>();
                s.tail_market = TailParams{sj.at("tail_market").at("u").get<double>(),
                                           sj.at("tail_market").at("v").get<double>()};
                s.tail_residual = TailParams{sj.at("tail_residual").at("u").get<double>(),
                                             sj.at("tail_residual").at("v").get<double>()};
                s.norm = Normalization::from_json(sj.at("normalization"));
                m.stocks.push_back(std::move(s));
            }
            ens.members.push_back(std::move(m));
        }
        check_architecture(ens);
        return ens;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }
}

}  // namespace gfagru
