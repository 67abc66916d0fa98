#pragma once

// Reverse-mode differentiation over dense row-major tensors of rank <= 2,
// plus the RMSProp-with-momentum optimizer used by the trainer.
//
// Expressions are built eagerly: every primitive computes its value
// immediately and appends a node to the owning Tape. Tape::backward replays
// the nodes in reverse order exactly once.
//
// Broadcasting follows numpy rules on rank <= 2 shapes (rank-1 {k} aligns as
// {1, k}; a dimension of extent 1 stretches).

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gfagru {

/// Raised when a computation produces or receives a non-finite value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    /// k x 1 column from the given values.
    static Tensor column(std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    // Rank-2 view: rank 0 is 1x1, rank 1 {k} is 1xk.
    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool all_finite() const noexcept;
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

std::string shape_string(const Shape& shape);

class Tape;

/// Handle to a node on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
};

/// Everything a primitive's backward rule can see. Entries of `in_grads`
/// whose `need` flag is false may be left empty.
struct BackwardContext {
    const Tensor& grad_out;
    const Tensor& value;
    std::span<const Tensor* const> inputs;
    std::span<Tensor> in_grads;
    std::span<const bool> need;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input.
    Var leaf(Tensor value);
    /// Input excluded from differentiation.
    Var constant(Tensor value);

    /// Appends a primitive. Throws NumericError when `value` is not finite.
    Var record(std::string_view op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t node_count() const noexcept { return nodes_.size(); }

    /// Propagates `seed` (shape of root's value) back to every leaf.
    /// May be called once per tape.
    void backward(Var root, const Tensor& seed);

    /// Gradient accumulated at `v`; zeros when `v` did not influence the root.
    Tensor grad(Var v) const;

private:
    struct Node {
        std::string_view op;
        std::vector<std::size_t> inputs;
        Tensor value;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool backward_done_ = false;
};

namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var square(Var a);
/// Rank-2 matrix product.
Var matmul(Var a, Var b);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
/// Row-wise softmax of a rank-2 tensor.
Var softmax_rows(Var a);
/// base^exponent evaluated as exp(exponent * ln base); requires base > 0.
Var pow(Var base, Var exponent);
Var maximum(Var a, Var b);
Var minimum(Var a, Var b);
/// Elementwise clamp to [lo, hi].
Var clamp(Var a, double lo, double hi);
/// Sum of all elements, rank-0 result.
Var sum(Var a);
/// Columns [begin, begin + count) of a rank-2 tensor.
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Horizontal concatenation of rank-2 tensors with equal row counts.
Var concat_cols(std::span<const Var> parts);

}  // namespace ad

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(Var a, Var b) { return ad::mul(a, b); }
inline Var operator/(Var a, Var b) { return ad::div(a, b); }
inline Var operator-(Var a) { return ad::neg(a); }

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct RmsPropConfig {
    double learning_rate = 1e-3;
    double momentum = 0.2;
    double rho = 0.99;
    double epsilon = 1e-8;
};

/// Squared-gradient averages and momentum buffers, one per parameter tensor.
struct OptimizerState {
    RmsPropConfig config;
    std::vector<Tensor> square_avg;
    std::vector<Tensor> momentum_buffer;

    OptimizerState() = default;
    OptimizerState(RmsPropConfig cfg, std::span<const Tensor> params);
};

/// v <- rho v + (1 - rho) g^2;  buf <- m buf + g / (sqrt(v) + eps);  p <- p - lr buf.
/// A non-finite gradient rejects the whole step (params and state untouched).
void rmsprop_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state);

// ---------------------------------------------------------------------------
// Parameter snapshots
// ---------------------------------------------------------------------------

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Text format, bit-exact via hexadecimal floating point:
//
//   gfagru-snapshot 1
//   tensors <K>
//   <name> <rank> <extent>...        (K lines)
//   values <total>
//   <hexfloat>                       (total lines, row-major, tensor order)
//   end
void write_snapshot(std::ostream& out, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_snapshot(std::istream& in);

}  // namespace gfagru
