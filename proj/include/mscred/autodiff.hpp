#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mscred/array.hpp"
#include "mscred/kernels.hpp"

namespace mscred::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the computation graph. Nodes hold their forward value,
/// a lazily allocated gradient buffer, and a closure that scatters the
/// node's gradient to its parents. The graph is acyclic: children own
/// shared_ptrs to parents, so dropping the root frees the interior while
/// parameter leaves survive in the model.
struct Node {
    nd::Array value;
    nd::Array grad;
    bool needs_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;

    /// Gradient buffer, allocated (zeroed) on first use.
    nd::Array& grad_buf() {
        if (grad.size() == 0) grad = nd::Array(value.shape());
        return grad;
    }
    void clear_grad() { grad = nd::Array(); }
    bool has_grad() const { return grad.size() != 0; }
};

Var constant(nd::Array value);
Var parameter(nd::Array value);

double scalar_value(const Var& v);

// Elementwise and shape ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var elementwise_mul(const Var& a, const Var& b);  // Hadamard product
Var selu(const Var& x);
Var sigmoid(const Var& x);
Var tanh_act(const Var& x);
Var concat_channels(const Var& a, const Var& b);  // along the last axis
Var add_channel_bias(const Var& x, const Var& bias);

// Spatial ops on [H, W, C] maps; kernels are [k, k, C_in, C_out].
Var conv2d(const Var& x, const Var& kernel, int stride);
Var deconv2d(const Var& x, const Var& kernel, int stride, int out_h, int out_w);

// Reductions and attention building blocks.
Var dot(const Var& a, const Var& b);              // scalar [1]
Var stack_scalars(const std::vector<Var>& xs);    // [m]
Var softmax(const Var& scores);                   // [m] -> [m], max-subtracted
Var weighted_sum(const Var& weights, const std::vector<Var>& maps);
Var sum_squares(const Var& x);                    // scalar [1]

/// Fused ConvLSTM gate pre-activation:
/// conv(x, kx, stride 1) + conv(h, kh, stride 1) + peep .* c + bias,
/// with the peephole pair optional (pass nullptr for both).
Var gate_preact(const Var& x, const Var& kx, const Var& h, const Var& kh,
                const Var& c, const Var& peep, const Var& bias);

/// Packed (and lazily transposed) gate kernels. Parameters are frozen
/// between optimizer steps, so one pack serves a whole mini-batch.
struct GateKernels;
using GateKernelsPtr = std::shared_ptr<GateKernels>;
GateKernelsPtr pack_gate_kernels(const std::array<Var, 4>& kx, const std::array<Var, 4>& kh);

/// All four gate pre-activations of one cell in a single wide convolution
/// pair: out[..., g*d:(g+1)*d] = conv(x, kx[g]) + conv(h, kh[g]) + bias[g].
/// The kernels are concatenated once (per call, or per batch when `packed`
/// is supplied), so the input maps stream through the conv kernels once
/// instead of four times.
Var conv2d_gates(const Var& x, const Var& h, const std::array<Var, 4>& kx,
                 const std::array<Var, 4>& kh, const std::array<Var, 4>& bias,
                 GateKernelsPtr packed = nullptr);

/// Channels [lo, lo+width) of a rank-3 map.
Var slice_channels(const Var& x, int lo, int width);

/// C_new = input_gate .* candidate + forget_gate .* c_prev
Var cell_state(const Var& input_gate, const Var& candidate, const Var& forget_gate,
               const Var& c_prev);

/// H = output_gate .* tanh(c)
Var hidden_out(const Var& output_gate, const Var& c);

/// Reverse accumulation from a scalar loss. Gradients of reachable nodes
/// with needs_grad are populated; everything else stays empty (zero).
void backward(const Var& loss);

void zero_grad(std::span<const Var> params);

}  // namespace mscred::ad
