#include "gfagru/agru.hpp"

#include "gfagru/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gfagru {

HeadSpec HeadSpec::market() {
    return HeadSpec{{Channel{ChannelKind::unbounded, -kUnboundedClip, kUnboundedClip},
                     Channel{ChannelKind::positive, kPositiveFloor, 0.0}}};
}

HeadSpec HeadSpec::stock() {
    return HeadSpec{{Channel{ChannelKind::unbounded, -kUnboundedClip, kUnboundedClip},
                     Channel{ChannelKind::unbounded, -kUnboundedClip, kUnboundedClip},
                     Channel{ChannelKind::positive, kPositiveFloor, 0.0}}};
}

std::vector<Tensor*> AgruParams::tensors() {
    std::vector<Tensor*> out{&w_z, &u_z, &b_z, &w_r, &u_r, &b_r, &w_h, &u_h, &b_h};
    if (attention) {
        out.push_back(&w_a);
        out.push_back(&u_a);
        out.push_back(&v_a);
    }
    out.push_back(&w_o);
    out.push_back(&b_o);
    return out;
}

std::vector<const Tensor*> AgruParams::tensors() const {
    auto mut = const_cast<AgruParams*>(this)->tensors();
    return std::vector<const Tensor*>(mut.begin(), mut.end());
}

std::vector<std::string> AgruParams::tensor_names() const {
    std::vector<std::string> out{"w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"};
    if (attention) {
        out.insert(out.end(), {"w_a", "u_a", "v_a"});
    }
    out.insert(out.end(), {"w_o", "b_o"});
    return out;
}

std::size_t AgruParams::parameter_count() const {
    std::size_t total = 0;
    for (const Tensor* t : tensors()) total += t->size();
    return total;
}

std::vector<NamedTensor> AgruParams::to_named(const std::string& prefix) const {
    std::vector<NamedTensor> out;
    const auto names = tensor_names();
    const auto ts = tensors();
    for (std::size_t k = 0; k < ts.size(); ++k) out.push_back({prefix + names[k], *ts[k]});
    return out;
}

AgruParams AgruParams::from_named(std::span<const NamedTensor> named, const std::string& prefix) {
    auto find = [&](const std::string& name) -> const Tensor* {
        for (const auto& t : named) {
            if (t.name == prefix + name) return &t.value;
        }
        return nullptr;
    };
    AgruParams p;
    const Tensor* wz = find("w_z");
    const Tensor* wo = find("w_o");
    if (!wz || !wo) throw std::runtime_error("snapshot is missing network tensors under '" + prefix + "'");
    p.d_in = wz->rows();
    p.hidden = wz->cols();
    p.d_out = wo->cols();
    p.attention = find("w_a") != nullptr;
    const auto names = p.tensor_names();
    auto slots = p.tensors();
    for (std::size_t k = 0; k < names.size(); ++k) {
        const Tensor* t = find(names[k]);
        if (!t) throw std::runtime_error("snapshot is missing tensor '" + prefix + names[k] + "'");
        *slots[k] = *t;
    }
    p.validate();
    return p;
}

void AgruParams::validate() const {
    const std::size_t n = hidden;
    auto check = [](const Tensor& t, std::size_t r, std::size_t c, const char* name) {
        if (t.rank() != 2 || t.rows() != r || t.cols() != c) {
            throw std::invalid_argument(std::string("AgruParams: ") + name + " has shape " +
                                        shape_string(t.shape()) + ", expected [" +
                                        std::to_string(r) + "x" + std::to_string(c) + "]");
        }
        if (!t.all_finite()) throw NumericError(std::string("AgruParams: ") + name + " is not finite");
    };
    if (d_in == 0 || n == 0 || d_out == 0) throw std::invalid_argument("AgruParams: zero dimension");
    check(w_z, d_in, n, "w_z");
    check(w_r, d_in, n, "w_r");
    check(w_h, d_in, n, "w_h");
    check(u_z, n, n, "u_z");
    check(u_r, n, n, "u_r");
    check(u_h, n, n, "u_h");
    check(b_z, 1, n, "b_z");
    check(b_r, 1, n, "b_r");
    check(b_h, 1, n, "b_h");
    if (attention) {
        check(w_a, n, n, "w_a");
        check(u_a, n, n, "u_a");
        check(v_a, n, 1, "v_a");
    }
    check(w_o, n, d_out, "w_o");
    check(b_o, 1, d_out, "b_o");
}

AgruParams init_params(std::size_t d_in, std::size_t hidden, std::size_t d_out, std::uint64_t seed,
                       bool attention) {
    if (d_in == 0 || hidden == 0 || d_out == 0) {
        throw std::invalid_argument("init_params: dimensions must be positive");
    }
    auto rng = make_engine(seed, 0x61677275);
    const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::uniform_real_distribution<double> unif(-k, k);
    auto draw = [&](std::size_t r, std::size_t c) {
        Tensor t = Tensor::matrix(r, c);
        for (double& x : t.values()) x = unif(rng);
        return t;
    };
    AgruParams p;
    p.d_in = d_in;
    p.hidden = hidden;
    p.d_out = d_out;
    p.attention = attention;
    p.w_z = draw(d_in, hidden);
    p.u_z = draw(hidden, hidden);
    p.w_r = draw(d_in, hidden);
    p.u_r = draw(hidden, hidden);
    p.w_h = draw(d_in, hidden);
    p.u_h = draw(hidden, hidden);
    p.b_z = Tensor::matrix(1, hidden);
    p.b_r = Tensor::matrix(1, hidden);
    p.b_h = Tensor::matrix(1, hidden);
    // always drawn so the head weights do not depend on the attention switch
    Tensor w_a = draw(hidden, hidden);
    Tensor u_a = draw(hidden, hidden);
    Tensor v_a = draw(hidden, 1);
    if (attention) {
        p.w_a = std::move(w_a);
        p.u_a = std::move(u_a);
        p.v_a = std::move(v_a);
    }
    p.w_o = draw(hidden, d_out);
    p.b_o = Tensor::matrix(1, d_out);
    return p;
}

AgruVars bind(Tape& tape, const AgruParams& params, bool trainable) {
    params.validate();
    AgruVars out;
    out.params = &params;
    for (const Tensor* t : params.tensors()) {
        out.vars.push_back(trainable ? tape.leaf(*t) : tape.constant(*t));
    }
    return out;
}

namespace {

enum Slot { WZ, UZ, BZ, WR, UR, BR, WH, UH, BH };

struct Named {
    Var w_a, u_a, v_a, w_o, b_o;
    bool attention;
};

Named tail_vars(const AgruVars& p) {
    Named n{};
    n.attention = p.params->attention;
    std::size_t k = 9;
    if (n.attention) {
        n.w_a = p.vars[k++];
        n.u_a = p.vars[k++];
        n.v_a = p.vars[k++];
    }
    n.w_o = p.vars[k++];
    n.b_o = p.vars[k];
    return n;
}

}  // namespace

std::vector<Var> gru_sequence(Tape& tape, const AgruVars& p, std::span<const Tensor> steps) {
    if (steps.empty()) throw std::invalid_argument("gru_sequence: window length must be at least 1");
    const std::size_t rows = steps[0].rows();
    const std::size_t d_in = p.params->d_in;
    const auto& v = p.vars;
    Var h = tape.constant(Tensor::matrix(rows, p.params->hidden));
    std::vector<Var> ys;
    ys.reserve(steps.size());
    for (const Tensor& step : steps) {
        if (step.rank() != 2 || step.rows() != rows || step.cols() != d_in) {
            throw std::invalid_argument("gru_sequence: step shape " + shape_string(step.shape()) +
                                        " does not match input dimension " + std::to_string(d_in));
        }
        Var x = tape.constant(step);
        Var z = ad::sigmoid(ad::matmul(x, v[WZ]) + ad::matmul(h, v[UZ]) + v[BZ]);
        Var r = ad::sigmoid(ad::matmul(x, v[WR]) + ad::matmul(h, v[UR]) + v[BR]);
        Var cand = ad::tanh(ad::matmul(x, v[WH]) + ad::matmul(r * h, v[UH]) + v[BH]);
        h = h + z * (cand - h);
        ys.push_back(h);
    }
    return ys;
}

AttentionVars attention_batch(Tape& tape, const AgruVars& p, std::span<const Var> ys) {
    (void)tape;
    if (ys.empty()) throw std::invalid_argument("attention: empty hidden sequence");
    const Named n = tail_vars(p);
    if (!n.attention) throw std::logic_error("attention: network was built without attention");
    Var last = ad::matmul(ys.back(), n.u_a);
    std::vector<Var> scores;
    scores.reserve(ys.size());
    for (const Var& y : ys) scores.push_back(ad::matmul(ad::tanh(ad::matmul(y, n.w_a) + last), n.v_a));
    Var weights = ad::softmax_rows(ad::concat_cols(scores));
    Var context = ad::slice_cols(weights, 0, 1) * ys[0];
    for (std::size_t t = 1; t < ys.size(); ++t) context = context + ad::slice_cols(weights, t, 1) * ys[t];
    return {context, weights};
}

Var apply_head(Tape& tape, Var raw, const HeadSpec& head) {
    (void)tape;
    const std::size_t d_out = raw.value().cols();
    if (head.channels.size() != d_out) {
        throw std::invalid_argument("apply_head: head has " + std::to_string(head.channels.size()) +
                                    " channels but the network emits " + std::to_string(d_out));
    }
    std::vector<Var> parts;
    for (std::size_t c = 0; c < d_out; ++c) {
        const Channel& ch = head.channels[c];
        Var x = ad::slice_cols(raw, c, 1);
        switch (ch.kind) {
            case ChannelKind::unbounded:
                parts.push_back(ad::clamp(x, ch.lo, ch.hi));
                break;
            case ChannelKind::positive:
                parts.push_back(ad::add_scalar(ad::softplus(x), ch.lo));
                break;
            case ChannelKind::box:
                parts.push_back(ad::add_scalar(ad::scale(ad::sigmoid(x), ch.hi - ch.lo), ch.lo));
                break;
        }
    }
    return ad::concat_cols(parts);
}

Var forward_theta(Tape& tape, const AgruVars& p, const HeadSpec& head, std::span<const Tensor> steps) {
    const auto ys = gru_sequence(tape, p, steps);
    const Named n = tail_vars(p);
    Var feature = n.attention ? attention_batch(tape, p, ys).context : ys.back();
    Var raw = ad::matmul(feature, n.w_o) + n.b_o;
    return apply_head(tape, raw, head);
}

std::vector<Tensor> to_steps(std::span<const Tensor> windows) {
    if (windows.empty()) throw std::invalid_argument("to_steps: no windows");
    const std::size_t d_in = windows[0].rows();
    const std::size_t len = windows[0].cols();
    std::vector<Tensor> steps(len, Tensor::matrix(windows.size(), d_in));
    for (std::size_t s = 0; s < windows.size(); ++s) {
        const Tensor& w = windows[s];
        if (w.rank() != 2 || w.rows() != d_in || w.cols() != len) {
            throw std::invalid_argument("to_steps: window " + std::to_string(s) + " has shape " +
                                        shape_string(w.shape()));
        }
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t d = 0; d < d_in; ++d) steps[t].at(s, d) = w.at(d, t);
        }
    }
    return steps;
}

Tensor gru_forward(const AgruParams& params, const Tensor& window) {
    if (window.rank() != 2 || window.rows() != params.d_in) {
        throw std::invalid_argument("gru_forward: window shape " + shape_string(window.shape()) +
                                    " does not match input dimension " + std::to_string(params.d_in));
    }
    Tape tape;
    const AgruVars p = bind(tape, params, false);
    const auto steps = to_steps(std::span<const Tensor>(&window, 1));
    const auto ys = gru_sequence(tape, p, steps);
    Tensor out = Tensor::matrix(params.hidden, ys.size());
    for (std::size_t t = 0; t < ys.size(); ++t) {
        for (std::size_t j = 0; j < params.hidden; ++j) out.at(j, t) = ys[t].value().at(0, j);
    }
    return out;
}

AttentionResult attention(const AgruParams& params, const Tensor& ys) {
    if (ys.rank() != 2 || ys.rows() != params.hidden || ys.cols() == 0) {
        throw std::invalid_argument("attention: hidden sequence shape " + shape_string(ys.shape()));
    }
    Tape tape;
    const AgruVars p = bind(tape, params, false);
    std::vector<Var> cols;
    for (std::size_t t = 0; t < ys.cols(); ++t) {
        Tensor y = Tensor::matrix(1, params.hidden);
        for (std::size_t j = 0; j < params.hidden; ++j) y.at(0, j) = ys.at(j, t);
        cols.push_back(tape.constant(std::move(y)));
    }
    const AttentionVars a = attention_batch(tape, p, cols);
    const auto c = a.context.value().values();
    const auto w = a.weights.value().values();
    return {std::vector<double>(c.begin(), c.end()), std::vector<double>(w.begin(), w.end())};
}

std::vector<double> predict_theta(const AgruParams& params, const HeadSpec& head, const Tensor& window) {
    return predict_theta_batch(params, head, std::span<const Tensor>(&window, 1)).front();
}

std::vector<std::vector<double>> predict_theta_batch(const AgruParams& params, const HeadSpec& head,
                                                     std::span<const Tensor> windows) {
    constexpr std::size_t chunk = 256;
    std::vector<std::vector<double>> out;
    out.reserve(windows.size());
    for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
        const std::size_t count = std::min(chunk, windows.size() - begin);
        Tape tape;
        const AgruVars p = bind(tape, params, false);
        const auto steps = to_steps(windows.subspan(begin, count));
        Var theta = forward_theta(tape, p, head, steps);
        const Tensor& v = theta.value();
        for (std::size_t s = 0; s < count; ++s) {
            std::vector<double> row(v.cols());
            for (std::size_t c = 0; c < v.cols(); ++c) {
                row[c] = v.at(s, c);
                if (!std::isfinite(row[c])) {
                    throw NumericError("predict_theta: non-finite output in channel " + std::to_string(c));
                }
            }
            out.push_back(std::move(row));
        }
    }
    return out;
}

}  // namespace gfagru
