#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mscred/array.hpp"
#include "mscred/timeseries.hpp"

namespace mscred::sig {

/// One n x n x s stack of signature matrices anchored at a time step.
/// Channel c holds the pairwise window correlations at scale scales[c].
struct SignatureTensor {
    nd::Array data;  // [n, n, s]
    std::int64_t anchor = 0;
    std::vector<int> scales;

    int n() const { return data.rank() == 3 ? data.dim(0) : 0; }
    int channels() const { return data.rank() == 3 ? data.dim(2) : 0; }
};

/// h tensors at anchors t-(h-1)*g, ..., t; oldest first.
struct SignatureSequence {
    std::vector<SignatureTensor> tensors;
    int gap = 0;

    int h() const { return static_cast<int>(tensors.size()); }
    std::int64_t anchor() const { return tensors.empty() ? 0 : tensors.back().anchor; }
};

/// Per-series z-score transform fitted on the training split and applied
/// identically everywhere, stored with the model checkpoint.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stdev;
    bool enabled = true;

    static Standardizer fit(const nd::Array& values, ts::StepRange range);
    static Standardizer identity(int n);
    nd::Array apply(const nd::Array& values) const;
};

/// Windowed inner product of Eq. form: sum_{d=0..w} xi[t-d]*xj[t-d] / rescale,
/// where the two spans are the (w+1)-point windows ending at t.
double pair_correlation(std::span<const double> xi_window,
                        std::span<const double> xj_window, double rescale);

/// data[i][j][c] = pair_correlation over the window of length scales[c]+1
/// ending at t, rescaled by scales[c]. Requires t >= max(scales).
SignatureTensor signature_tensor(const nd::Array& values, std::int64_t t,
                                 const std::vector<int>& scales);

SignatureSequence signature_sequence(const nd::Array& values, std::int64_t t,
                                     const std::vector<int>& scales, int h, int gap);

/// Anchor steps at stride `gap` covering [split.lo, split.hi), each with full
/// left context for scales and an h-step history (context may come from
/// earlier steps outside the split). Empty result when nothing fits.
std::vector<std::int64_t> anchor_schedule(ts::StepRange split,
                                          const std::vector<int>& scales, int h, int gap);

std::int64_t first_valid_anchor(const std::vector<int>& scales, int h, int gap);

/// Precomputed tensors for a set of anchors; the training and detection
/// paths assemble sequences out of this store instead of recomputing
/// windows per sequence.
class SignatureStore {
public:
    SignatureStore() = default;
    SignatureStore(const nd::Array& values, std::vector<std::int64_t> anchors,
                   std::vector<int> scales, int h, int gap);

    const nd::Array& tensor_at(std::int64_t anchor) const;
    bool has(std::int64_t anchor) const;

    /// Pointers to the h tensors ending at `anchor`, oldest first.
    std::vector<const nd::Array*> sequence(std::int64_t anchor) const;

    const std::vector<std::int64_t>& anchors() const { return anchors_; }
    const std::vector<int>& scales() const { return scales_; }
    int n() const { return n_; }
    int channels() const { return static_cast<int>(scales_.size()); }
    int h() const { return h_; }
    int gap() const { return gap_; }

    /// On-disk cache: consecutive little-endian records, one per anchor:
    ///   magic "MSIG" | u32 version=1 | u32 n | u32 s | u32 h | u32 g |
    ///   i64 anchor | n*n*s f64 (row-major)
    /// Sequences are reassembled by reading the h records spaced g apart.
    void save(const std::string& path) const;
    static SignatureStore load(const std::string& path);

private:
    std::vector<std::int64_t> anchors_;
    std::vector<nd::Array> tensors_;
    std::vector<int> scales_;
    int n_ = 0;
    int h_ = 0;
    int gap_ = 0;
    std::int64_t base_ = 0;   // anchors_ form an arithmetic progression
    std::int64_t stride_ = 0; // 0 when irregular; lookup falls back to search
};

}  // namespace mscred::sig
