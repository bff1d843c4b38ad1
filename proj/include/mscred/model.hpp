#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mscred/adam.hpp"
#include "mscred/autodiff.hpp"
#include "mscred/signature.hpp"

namespace mscred::model {

/// Which recurrent/attention paths are active. The reduced variants drop
/// ConvLSTM cells from the shallow end together with those layers' skip
/// concatenation into the decoder; attention runs only in `full`.
enum class Ablation { full, no_attention, convlstm_last2, convlstm_last1 };

std::string ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

/// Static network description: four conv layers 3x3/3x3/2x2/2x2 with
/// strides 1/2/2/2, mirrored by four transposed-conv layers with skip
/// concatenation. Channel widths are configurable (paper: 32/64/128/256).
struct NetConfig {
    int n = 30;
    std::vector<int> scales = {10, 30, 60};
    std::array<int, 4> channels = {32, 64, 128, 256};
    int h = 5;
    int gap = 10;
    double attention_rescale = 5.0;
    Ablation ablation = Ablation::full;
    bool standardize = true;

    static constexpr std::array<int, 4> kernel_sizes = {3, 3, 2, 2};
    static constexpr std::array<int, 4> strides = {1, 2, 2, 2};

    int s() const { return static_cast<int>(scales.size()); }

    /// Spatial sizes n0..n4 following the ceil(in/stride) rule.
    std::array<int, 5> spatial() const;

    /// True when layer l (1-based) carries a ConvLSTM cell.
    bool convlstm_at(int layer) const;
    bool attention_on() const { return ablation == Ablation::full; }

    std::uint64_t hash() const;
    void validate() const;
};

/// One layer's ConvLSTM weights: input/state convolutions for the four
/// gates, Hadamard peephole maps for the input/forget/output gates, and
/// per-gate biases.
struct ConvLstmParams {
    ad::Var wx_input, wh_input, peep_input, b_input;
    ad::Var wx_forget, wh_forget, peep_forget, b_forget;
    ad::Var wx_cand, wh_cand, b_cand;
    ad::Var wx_output, wh_output, peep_output, b_output;
};

struct ModelParams {
    NetConfig net;
    sig::Standardizer norm;
    std::array<ad::Var, 4> enc_kernel, enc_bias;
    std::array<std::optional<ConvLstmParams>, 4> cells;
    std::array<ad::Var, 4> dec_kernel, dec_bias;

    /// Stable (name, var) list used by the optimizer, checkpoints, and the
    /// gradient checker.
    std::vector<std::pair<std::string, ad::Var>> named() const;
    std::vector<ad::Var> vars() const;
};

ModelParams init_params(const NetConfig& net, const sig::Standardizer& norm,
                        std::uint64_t seed);

/// Per-layer recurrent state, zeroed at sequence start.
struct CellState {
    std::array<ad::Var, 4> hidden;
    std::array<ad::Var, 4> cell;
};

CellState initial_state(const NetConfig& net);

// --- Network pieces (all build autodiff graphs) ---

/// SELU(conv+bias) chained through the four encoder layers.
std::array<ad::Var, 4> encode(const ad::Var& x, const ModelParams& p);

/// One ConvLSTM cell update; returns (hidden, cell). `packed` lets a
/// caller reuse concatenated gate kernels across steps and samples while
/// the parameters are frozen (within one optimizer step).
std::pair<ad::Var, ad::Var> convlstm_step(const ad::Var& x, const ad::Var& h_prev,
                                          const ad::Var& c_prev, const ConvLstmParams& cp,
                                          ad::GateKernelsPtr packed = nullptr);

/// Per-layer packed gate kernels, valid until the next parameter update.
struct CellCaches {
    std::array<ad::GateKernelsPtr, 4> packed;
};

CellCaches make_cell_caches(const ModelParams& params);

/// Softmax-weighted combination of the history of hidden maps, scores
/// flatten-dot(last, each)/rescale. Returns the refined map and the weights.
std::pair<ad::Var, std::vector<double>> attention(const std::vector<ad::Var>& history,
                                                  double rescale);

/// Stacked transposed-conv decoder with channel concatenation; features[l]
/// is the refined map of layer l+1 (ignored for ablated layers, whose
/// skip path is gone). Output is n x n x s.
ad::Var decode(const std::array<ad::Var, 4>& features, const ModelParams& p);

/// Sum of squared Frobenius norms of the per-channel differences.
ad::Var reconstruction_loss(const ad::Var& target, const ad::Var& reconstruction);

struct ForwardResult {
    ad::Var reconstruction;
    /// Attention weights per layer for the last step (empty when attention
    /// is off or the layer is non-recurrent).
    std::array<std::vector<double>, 4> attention_weights;
};

/// Full pipeline over one h-step sequence of signature tensors
/// (oldest first): encode each step, run the cells, refine, decode.
ForwardResult forward(std::span<const nd::Array* const> sequence, const ModelParams& p,
                      const CellCaches* caches = nullptr);

/// Inference helper: reconstruction of the sequence's last tensor as a
/// plain array.
nd::Array reconstruct(std::span<const nd::Array* const> sequence, const ModelParams& p);

// --- Training ---

struct EpochLog {
    int epoch = 0;            // 0 is the pre-training evaluation
    double train_loss = 0.0;  // mean per anchor
    double valid_loss = 0.0;
    double wall_seconds = 0.0;
};

struct TrainConfig {
    int epochs = 30;
    int batch = 16;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int patience = 5;
    std::uint64_t seed = 0;
    /// Called after each epoch (and once for the pre-training row).
    std::function<void(const EpochLog&)> on_epoch;
};

struct FitResult {
    std::vector<EpochLog> log;
    int best_epoch = 0;
    double best_valid = 0.0;
};

/// Adam on mini-batches of anchor sequences; loss is the reconstruction of
/// each sequence's final tensor. Deterministic given cfg.seed. Keeps the
/// best-validation parameters; stops early after `patience` epochs without
/// improvement. Throws NumericError when the loss stops being finite.
FitResult fit(const sig::SignatureStore& store, std::span<const std::int64_t> train_anchors,
              std::span<const std::int64_t> valid_anchors, ModelParams& params,
              const TrainConfig& cfg);

double mean_loss(const sig::SignatureStore& store, std::span<const std::int64_t> anchors,
                 const ModelParams& params);

// --- Checkpointing ---
// Layout: magic "MSCR" | u32 version | u64 config hash | u32 n |
// standardizer (u8 enabled, n f64 means, n f64 stdevs) | u32 array count |
// per array: u32 name length, name bytes, u32 rank, dims, f64 payload.
// All integers and floats little-endian.

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path, const NetConfig& expected);

void write_train_log(const std::vector<EpochLog>& log, const std::string& path);

}  // namespace mscred::model
