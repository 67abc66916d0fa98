#include "gfagru/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <utility>

namespace gfagru {

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

namespace {

std::size_t product(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank above 2 is not supported");
    data_.assign(product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank above 2 is not supported");
    if (data_.size() != product(shape_)) {
        throw std::invalid_argument("Tensor: " + std::to_string(data_.size()) +
                                    " values do not fill shape " + shape_string(shape_));
    }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
    return Tensor(Shape{rows, cols}, fill);
}

Tensor Tensor::column(std::vector<double> values) {
    const std::size_t k = values.size();
    return Tensor(Shape{k, 1}, std::move(values));
}

std::size_t Tensor::rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
    if (!value.all_finite()) throw NumericError("autodiff: leaf holds a non-finite value");
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw NumericError("autodiff: constant holds a non-finite value");
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::record(std::string_view op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
    if (backward_done_) throw std::logic_error("autodiff: tape already differentiated");
    Node n;
    n.op = op;
    n.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
        if (in.tape != this) throw std::invalid_argument("autodiff: operand from a different tape");
        n.inputs.push_back(in.id);
        n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
    if (!value.all_finite()) {
        const auto vals = value.values();
        const auto bad =
            std::find_if(vals.begin(), vals.end(), [](double x) { return !std::isfinite(x); });
        std::ostringstream msg;
        msg << "autodiff: primitive '" << op << "' produced a non-finite value at element "
            << (bad - vals.begin());
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            msg << "; operand " << k << " shape " << shape_string(nodes_[n.inputs[k]].value.shape());
        }
        throw NumericError(msg.str());
    }
    n.value = std::move(value);
    n.backward = std::move(backward);
    return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id).value; }

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

void Tape::backward(Var root, const Tensor& seed) {
    if (root.tape != this) throw std::invalid_argument("autodiff: root belongs to a different tape");
    if (backward_done_) throw std::logic_error("autodiff: backward already ran on this tape");
    if (!seed.same_shape(nodes_.at(root.id).value)) {
        throw std::invalid_argument("autodiff: seed shape " + shape_string(seed.shape()) +
                                    " does not match root " +
                                    shape_string(nodes_[root.id].value.shape()));
    }
    backward_done_ = true;
    grads_.assign(nodes_.size(), Tensor{});
    std::vector<bool> has(nodes_.size(), false);
    grads_[root.id] = seed;
    has[root.id] = true;

    std::vector<const Tensor*> in_values;
    std::vector<Tensor> in_grads;
    std::unique_ptr<bool[]> need;
    std::size_t need_cap = 0;

    for (std::size_t id = root.id + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!has[id] || !node.requires_grad || !node.backward) continue;
        const std::size_t k = node.inputs.size();
        if (k > need_cap) {
            need.reset(new bool[k]);
            need_cap = k;
        }
        in_values.resize(k);
        in_grads.assign(k, Tensor{});
        for (std::size_t i = 0; i < k; ++i) {
            in_values[i] = &nodes_[node.inputs[i]].value;
            need[i] = nodes_[node.inputs[i]].requires_grad;
        }
        BackwardContext ctx{grads_[id], node.value, in_values, in_grads,
                            std::span<const bool>(need.get(), k)};
        node.backward(ctx);
        for (std::size_t i = 0; i < k; ++i) {
            if (!need[i] || in_grads[i].size() == 0) continue;
            const std::size_t in = node.inputs[i];
            if (!has[in]) {
                grads_[in] = std::move(in_grads[i]);
                has[in] = true;
            } else {
                auto dst = grads_[in].values();
                auto src = in_grads[i].values();
                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
            }
        }
        grads_[id] = Tensor{};
    }
}

Tensor Tape::grad(Var v) const {
    if (!backward_done_) throw std::logic_error("autodiff: grad requested before backward");
    const Tensor& g = grads_.at(v.id);
    const Tensor& val = nodes_[v.id].value;
    if (!g.same_shape(val) || g.size() != val.size()) return Tensor(val.shape(), 0.0);
    return g;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace ad {
namespace {

Tape& common_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw std::invalid_argument("autodiff: operands on different tapes");
    }
    return *a.tape;
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t k = 0; k < rank; ++k) {
        const std::size_t ea = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
        const std::size_t eb = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
        if (ea == eb || eb == 1) {
            out[k] = ea;
        } else if (ea == 1) {
            out[k] = eb;
        } else {
            throw std::invalid_argument("autodiff: '" + std::string(op) + "' cannot broadcast " +
                                        shape_string(a) + " with " + shape_string(b));
        }
    }
    return out;
}

// Maps an output (i, j) onto the flat index of a broadcast operand.
struct Stride {
    std::size_t row;
    std::size_t col;
    std::size_t at(std::size_t i, std::size_t j) const { return i * row + j * col; }
};

Stride stride_for(const Tensor& operand) {
    const std::size_t r = operand.rows();
    const std::size_t c = operand.cols();
    return Stride{r == 1 ? std::size_t{0} : c, c == 1 ? std::size_t{0} : std::size_t{1}};
}

[[noreturn]] void elementwise_failure(std::string_view op, std::size_t element,
                                      std::initializer_list<double> operands) {
    std::ostringstream msg;
    msg << "autodiff: primitive '" << op << "' produced a non-finite value at element " << element;
    std::size_t k = 0;
    for (double v : operands) msg << "; operand " << k++ << " = " << v;
    throw NumericError(msg.str());
}

// y = f(x); df(x, y) = dy/dx.
template <class F, class DF>
Var unary(std::string_view op, Var a, F f, DF df) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    auto xv = x.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        yv[i] = f(xv[i]);
        if (!std::isfinite(yv[i])) elementwise_failure(op, i, {xv[i]});
    }
    return a.tape->record(op, {a}, std::move(y), [df](BackwardContext& ctx) {
        if (!ctx.need[0]) return;
        const auto xs = ctx.inputs[0]->values();
        const auto ys = ctx.value.values();
        const auto g = ctx.grad_out.values();
        Tensor gx(ctx.inputs[0]->shape());
        auto out = gx.values();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = g[i] * df(xs[i], ys[i]);
        ctx.in_grads[0] = std::move(gx);
    });
}

// z = f(x, y) with broadcasting; dfx/dfy(x, y, z) are the partials.
template <class F, class DX, class DY>
Var binary(std::string_view op, Var a, Var b, F f, DX dfx, DY dfy) {
    Tape& tape = common_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Tensor z(broadcast_shape(x.shape(), y.shape(), op));
    const std::size_t rows = z.rows();
    const std::size_t cols = z.cols();
    const Stride sx = stride_for(x);
    const Stride sy = stride_for(y);
    {
        auto xv = x.values();
        auto yv = y.values();
        auto zv = z.values();
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                const double xi = xv[sx.at(i, j)];
                const double yi = yv[sy.at(i, j)];
                const double r = f(xi, yi);
                if (!std::isfinite(r)) elementwise_failure(op, i * cols + j, {xi, yi});
                zv[i * cols + j] = r;
            }
        }
    }
    return tape.record(op, {a, b}, std::move(z), [dfx, dfy, sx, sy, rows, cols](BackwardContext& ctx) {
        const auto xv = ctx.inputs[0]->values();
        const auto yv = ctx.inputs[1]->values();
        const auto zv = ctx.value.values();
        const auto g = ctx.grad_out.values();
        Tensor gx, gy;
        if (ctx.need[0]) gx = Tensor(ctx.inputs[0]->shape(), 0.0);
        if (ctx.need[1]) gy = Tensor(ctx.inputs[1]->shape(), 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                const std::size_t o = i * cols + j;
                const std::size_t ix = sx.at(i, j);
                const std::size_t iy = sy.at(i, j);
                if (ctx.need[0]) gx[ix] += g[o] * dfx(xv[ix], yv[iy], zv[o]);
                if (ctx.need[1]) gy[iy] += g[o] * dfy(xv[ix], yv[iy], zv[o]);
            }
        }
        if (ctx.need[0]) ctx.in_grads[0] = std::move(gx);
        if (ctx.need[1]) ctx.in_grads[1] = std::move(gy);
    });
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace

Var add(Var a, Var b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double z) { return -z / y; });
}

Var neg(Var a) {
    return unary(
        "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double k) {
    return unary(
        "scale", a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(Var a, double k) {
    return unary(
        "add_scalar", a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(Var a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
    return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
    return unary("softplus", a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var clamp(Var a, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("autodiff: clamp with lo > hi");
    return unary(
        "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var pow(Var base, Var exponent) {
    for (std::size_t i = 0; i < base.value().size(); ++i) {
        if (!(base.value()[i] > 0.0)) {
            std::ostringstream msg;
            msg << "autodiff: primitive 'pow' requires a positive base; operand 0 element " << i
                << " = " << base.value()[i];
            throw NumericError(msg.str());
        }
    }
    return binary(
        "pow", base, exponent, [](double b, double e) { return std::exp(e * std::log(b)); },
        [](double b, double e, double z) { return e * z / b; },
        [](double b, double, double z) { return z * std::log(b); });
}

Var maximum(Var a, Var b) {
    return binary(
        "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Var minimum(Var a, Var b) {
    return binary(
        "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
        [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Var matmul(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) {
        throw std::invalid_argument("autodiff: matmul shape mismatch " + shape_string(x.shape()) +
                                    " * " + shape_string(y.shape()));
    }
    const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
    Tensor z = Tensor::matrix(m, n);
    {
        const auto xv = x.values();
        const auto yv = y.values();
        auto zv = z.values();
        for (std::size_t i = 0; i < m; ++i) {
            double* zr = &zv[i * n];
            for (std::size_t p = 0; p < k; ++p) {
                const double xip = xv[i * k + p];
                const double* yr = &yv[p * n];
                for (std::size_t j = 0; j < n; ++j) zr[j] += xip * yr[j];
            }
        }
    }
    return tape.record("matmul", {a, b}, std::move(z), [m, k, n](BackwardContext& ctx) {
        const auto xv = ctx.inputs[0]->values();
        const auto yv = ctx.inputs[1]->values();
        const auto g = ctx.grad_out.values();
        if (ctx.need[0]) {
            // dX = G * Y^T
            Tensor gx = Tensor::matrix(m, k);
            auto gv = gx.values();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * yv[p * n + j];
                    gv[i * k + p] = s;
                }
            }
            ctx.in_grads[0] = std::move(gx);
        }
        if (ctx.need[1]) {
            // dY = X^T * G
            Tensor gy = Tensor::matrix(k, n);
            auto gv = gy.values();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double xip = xv[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gv[p * n + j] += xip * g[i * n + j];
                }
            }
            ctx.in_grads[1] = std::move(gy);
        }
    });
}

Var softmax_rows(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 2) throw std::invalid_argument("autodiff: softmax_rows expects a rank-2 tensor");
    const std::size_t rows = x.rows(), cols = x.cols();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x.at(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            y.at(i, j) = std::exp(x.at(i, j) - mx);
            total += y.at(i, j);
        }
        for (std::size_t j = 0; j < cols; ++j) y.at(i, j) /= total;
    }
    return a.tape->record("softmax_rows", {a}, std::move(y), [rows, cols](BackwardContext& ctx) {
        if (!ctx.need[0]) return;
        const Tensor& y = ctx.value;
        const Tensor& g = ctx.grad_out;
        Tensor gx(y.shape());
        for (std::size_t i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < cols; ++j) gx.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
        }
        ctx.in_grads[0] = std::move(gx);
    });
}

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    return a.tape->record("sum", {a}, Tensor::scalar(total), [](BackwardContext& ctx) {
        if (!ctx.need[0]) return;
        ctx.in_grads[0] = Tensor(ctx.inputs[0]->shape(), ctx.grad_out[0]);
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const Tensor& x = a.value();
    if (x.rank() != 2 || begin + count > x.cols()) {
        throw std::invalid_argument("autodiff: slice_cols out of range for " + shape_string(x.shape()));
    }
    const std::size_t rows = x.rows(), cols = x.cols();
    Tensor y = Tensor::matrix(rows, count);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < count; ++j) y.at(i, j) = x.at(i, begin + j);
    }
    return a.tape->record("slice_cols", {a}, std::move(y),
                          [rows, cols, begin, count](BackwardContext& ctx) {
                              if (!ctx.need[0]) return;
                              Tensor gx = Tensor::matrix(rows, cols);
                              for (std::size_t i = 0; i < rows; ++i) {
                                  for (std::size_t j = 0; j < count; ++j) {
                                      gx.at(i, begin + j) = ctx.grad_out.at(i, j);
                                  }
                              }
                              ctx.in_grads[0] = std::move(gx);
                          });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("autodiff: concat_cols of nothing");
    Tape* tape = parts[0].tape;
    const std::size_t rows = parts[0].value().rows();
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.tape != tape) throw std::invalid_argument("autodiff: operands on different tapes");
        if (p.value().rank() != 2 || p.value().rows() != rows) {
            throw std::invalid_argument("autodiff: concat_cols row mismatch");
        }
        total += p.value().cols();
    }
    Tensor y = Tensor::matrix(rows, total);
    std::vector<std::size_t> offsets;
    offsets.reserve(parts.size());
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& x = p.value();
        offsets.push_back(off);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < x.cols(); ++j) y.at(i, off + j) = x.at(i, j);
        }
        off += x.cols();
    }
    return tape->record("concat_cols", std::vector<Var>(parts.begin(), parts.end()), std::move(y),
                        [offsets, rows](BackwardContext& ctx) {
                            for (std::size_t k = 0; k < ctx.inputs.size(); ++k) {
                                if (!ctx.need[k]) continue;
                                const std::size_t c = ctx.inputs[k]->cols();
                                Tensor gx = Tensor::matrix(rows, c);
                                for (std::size_t i = 0; i < rows; ++i) {
                                    for (std::size_t j = 0; j < c; ++j) {
                                        gx.at(i, j) = ctx.grad_out.at(i, offsets[k] + j);
                                    }
                                }
                                ctx.in_grads[k] = std::move(gx);
                            }
                        });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// RMSProp
// ---------------------------------------------------------------------------

OptimizerState::OptimizerState(RmsPropConfig cfg, std::span<const Tensor> params) : config(cfg) {
    square_avg.reserve(params.size());
    momentum_buffer.reserve(params.size());
    for (const Tensor& p : params) {
        square_avg.emplace_back(p.shape(), 0.0);
        momentum_buffer.emplace_back(p.shape(), 0.0);
    }
}

void rmsprop_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state) {
    const RmsPropConfig& cfg = state.config;
    if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("rmsprop: learning rate must be positive");
    if (!(cfg.rho > 0.0 && cfg.rho < 1.0)) throw std::invalid_argument("rmsprop: rho must lie in (0,1)");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
        throw std::invalid_argument("rmsprop: momentum must lie in [0,1)");
    }
    if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("rmsprop: epsilon must be positive");
    if (params.size() != grads.size() || params.size() != state.square_avg.size() ||
        params.size() != state.momentum_buffer.size()) {
        throw std::invalid_argument("rmsprop: parameter, gradient and state counts differ");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].same_shape(grads[k]) || !params[k].same_shape(state.square_avg[k]) ||
            !params[k].same_shape(state.momentum_buffer[k])) {
            throw std::invalid_argument("rmsprop: shape mismatch at parameter " + std::to_string(k));
        }
        if (!grads[k].all_finite()) {
            throw NumericError("rmsprop: non-finite gradient for parameter " + std::to_string(k) +
                               "; step rejected");
        }
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k].values();
        auto g = grads[k].values();
        auto v = state.square_avg[k].values();
        auto buf = state.momentum_buffer[k].values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = cfg.rho * v[i] + (1.0 - cfg.rho) * g[i] * g[i];
            buf[i] = cfg.momentum * buf[i] + g[i] / (std::sqrt(v[i]) + cfg.epsilon);
            p[i] -= cfg.learning_rate * buf[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

void write_snapshot(std::ostream& out, std::span<const NamedTensor> tensors) {
    std::size_t total = 0;
    out << "gfagru-snapshot 1\n";
    out << "tensors " << tensors.size() << "\n";
    for (const auto& t : tensors) {
        if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos) {
            throw std::invalid_argument("snapshot: tensor names must be non-empty without whitespace");
        }
        out << t.name << " " << t.value.rank();
        for (auto e : t.value.shape()) out << " " << e;
        out << "\n";
        total += t.value.size();
    }
    out << "values " << total << "\n";
    out << std::hexfloat;
    for (const auto& t : tensors) {
        for (double v : t.value.values()) out << v << "\n";
    }
    out << std::defaultfloat;
    out << "end\n";
}

std::vector<NamedTensor> read_snapshot(std::istream& in) {
    auto fail = [](const std::string& what) -> std::runtime_error {
        return std::runtime_error("snapshot: " + what);
    };
    std::string word;
    int version = 0;
    if (!(in >> word >> version) || word != "gfagru-snapshot" || version != 1) {
        throw fail("bad header");
    }
    std::size_t count = 0;
    if (!(in >> word >> count) || word != "tensors") throw fail("missing tensor table");
    std::vector<NamedTensor> out;
    out.reserve(count);
    std::vector<Shape> shapes;
    for (std::size_t k = 0; k < count; ++k) {
        NamedTensor t;
        std::size_t rank = 0;
        if (!(in >> t.name >> rank) || rank > 2) throw fail("bad shape table entry");
        Shape shape(rank);
        for (auto& e : shape) {
            if (!(in >> e)) throw fail("bad extent");
        }
        shapes.push_back(shape);
        out.push_back(std::move(t));
    }
    std::size_t total = 0;
    if (!(in >> word >> total) || word != "values") throw fail("missing values block");
    std::size_t expected = 0;
    for (const auto& s : shapes) expected += product(s);
    if (expected != total) throw fail("value count does not match shape table");
    for (std::size_t k = 0; k < count; ++k) {
        std::vector<double> vals(product(shapes[k]));
        for (auto& v : vals) {
            if (!(in >> word)) throw fail("truncated values");
            char* end = nullptr;
            v = std::strtod(word.c_str(), &end);
            if (end == word.c_str() || *end != '\0') throw fail("unparsable value '" + word + "'");
        }
        out[k].value = Tensor(shapes[k], std::move(vals));
    }
    if (!(in >> word) || word != "end") throw fail("missing end marker");
    return out;
}

}  // namespace gfagru
