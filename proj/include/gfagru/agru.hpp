#pragma once

// One-layer GRU + additive attention + bounded linear head.
//
// Weights are stored in row-batch orientation: a batch of S inputs is an
// S x D_in matrix X and the gate pre-activation is X W + H U + b.

#include "gfagru/autodiff.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gfagru {

enum class ChannelKind { unbounded, positive, box };

struct Channel {
    ChannelKind kind = ChannelKind::unbounded;
    // unbounded: clipped to [lo, hi]; positive: softplus + lo; box: lo + (hi - lo) sigmoid
    double lo = -5.0;
    double hi = 5.0;
};

struct HeadSpec {
    std::vector<Channel> channels;

    /// (alpha unbounded, beta positive)
    static HeadSpec market();
    /// (alpha unbounded, beta unbounded, gamma positive)
    static HeadSpec stock();
};

constexpr double kPositiveFloor = 1e-4;
constexpr double kUnboundedClip = 5.0;

struct AgruParams {
    std::size_t d_in = 0;
    std::size_t hidden = 0;
    std::size_t d_out = 0;
    bool attention = true;

    Tensor w_z, u_z, b_z;
    Tensor w_r, u_r, b_r;
    Tensor w_h, u_h, b_h;
    Tensor w_a, u_a, v_a;  // empty when attention is off
    Tensor w_o, b_o;

    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    std::vector<std::string> tensor_names() const;
    std::size_t parameter_count() const;

    std::vector<NamedTensor> to_named(const std::string& prefix = "") const;
    static AgruParams from_named(std::span<const NamedTensor> named, const std::string& prefix = "");
    void validate() const;
};

/// Uniform [-1/sqrt(n), 1/sqrt(n)] weights, zero biases. Draw order is GRU,
/// attention, head, so the attention-free variant shares GRU weights.
AgruParams init_params(std::size_t d_in, std::size_t hidden, std::size_t d_out, std::uint64_t seed,
                       bool attention = true);

/// Parameters bound to a tape, either as leaves or constants.
struct AgruVars {
    const AgruParams* params = nullptr;
    std::vector<Var> vars;  // same order as AgruParams::tensors()
};

AgruVars bind(Tape& tape, const AgruParams& params, bool trainable);

/// steps[t] is S x D_in. Returns y_1..y_T, each S x n.
std::vector<Var> gru_sequence(Tape& tape, const AgruVars& p, std::span<const Tensor> steps);

struct AttentionVars {
    Var context;  // S x n
    Var weights;  // S x T
};

AttentionVars attention_batch(Tape& tape, const AgruVars& p, std::span<const Var> ys);

/// Bounded head output, S x D_out.
Var apply_head(Tape& tape, Var raw, const HeadSpec& head);

/// Full network on a batch: S x D_out bounded outputs.
Var forward_theta(Tape& tape, const AgruVars& p, const HeadSpec& head, std::span<const Tensor> steps);

// Single-window helpers. `window` is D_in x T.

/// Hidden sequence, n x T.
Tensor gru_forward(const AgruParams& params, const Tensor& window);

struct AttentionResult {
    std::vector<double> context;
    std::vector<double> weights;
};

/// `ys` is n x T.
AttentionResult attention(const AgruParams& params, const Tensor& ys);

std::vector<double> predict_theta(const AgruParams& params, const HeadSpec& head, const Tensor& window);

/// Batched prediction without gradients; windows are D_in x T each.
std::vector<std::vector<double>> predict_theta_batch(const AgruParams& params, const HeadSpec& head,
                                                     std::span<const Tensor> windows);

/// Converts D_in x T windows into T step matrices of shape S x D_in.
std::vector<Tensor> to_steps(std::span<const Tensor> windows);

}  // namespace gfagru
