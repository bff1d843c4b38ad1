#include "mscred/signature.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mscred/io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

static_assert(std::endian::native == std::endian::little,
              "cache and checkpoint formats assume a little-endian host");

namespace mscred::sig {

Standardizer Standardizer::fit(const nd::Array& values, ts::StepRange range) {
    const int n = values.dim(0);
    const std::int64_t T = values.dim(1);
    if (range.lo < 0 || range.hi > T || range.length() < 2)
        throw DataError("standardizer range invalid");
    Standardizer st;
    st.mean.resize(static_cast<std::size_t>(n));
    st.stdev.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = values.data() + static_cast<std::int64_t>(i) * T;
        double m = 0.0;
        for (std::int64_t t = range.lo; t < range.hi; ++t) m += row[t];
        m /= static_cast<double>(range.length());
        double var = 0.0;
        for (std::int64_t t = range.lo; t < range.hi; ++t) {
            const double d = row[t] - m;
            var += d * d;
        }
        var /= static_cast<double>(range.length());
        st.mean[static_cast<std::size_t>(i)] = m;
        // Constant series would otherwise blow up; leave them untouched.
        st.stdev[static_cast<std::size_t>(i)] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return st;
}

Standardizer Standardizer::identity(int n) {
    Standardizer st;
    st.mean.assign(static_cast<std::size_t>(n), 0.0);
    st.stdev.assign(static_cast<std::size_t>(n), 1.0);
    st.enabled = false;
    return st;
}

nd::Array Standardizer::apply(const nd::Array& values) const {
    const int n = values.dim(0);
    if (static_cast<std::size_t>(n) != mean.size())
        throw ShapeError("standardizer fitted for a different series count");
    if (!enabled) return values;
    const std::int64_t T = values.dim(1);
    nd::Array out({n, static_cast<int>(T)});
    for (int i = 0; i < n; ++i) {
        const double* src = values.data() + static_cast<std::int64_t>(i) * T;
        double* dst = out.data() + static_cast<std::int64_t>(i) * T;
        const double m = mean[static_cast<std::size_t>(i)];
        const double inv = 1.0 / stdev[static_cast<std::size_t>(i)];
        for (std::int64_t t = 0; t < T; ++t) dst[t] = (src[t] - m) * inv;
    }
    return out;
}

double pair_correlation(std::span<const double> xi_window,
                        std::span<const double> xj_window, double rescale) {
    if (xi_window.size() != xj_window.size())
        throw ShapeError("correlation windows differ in length");
    if (!(rescale > 0.0)) throw ConfigError("rescale factor must be positive");
    // Accumulation runs from the window end backwards, matching the
    // formula's delta = 0..w order bit for bit.
    double acc = 0.0;
    for (std::size_t k = xi_window.size(); k > 0; --k)
        acc += xi_window[k - 1] * xj_window[k - 1];
    return acc / rescale;
}

SignatureTensor signature_tensor(const nd::Array& values, std::int64_t t,
                                 const std::vector<int>& scales) {
    if (values.rank() != 2) throw ShapeError("expected an n x T series matrix");
    if (scales.empty()) throw ConfigError("need at least one scale");
    const int n = values.dim(0);
    const std::int64_t T = values.dim(1);
    const int w_max = *std::max_element(scales.begin(), scales.end());
    if (t < w_max)
        throw ContextError("step " + std::to_string(t) + " lacks window history; first valid step is " +
                               std::to_string(w_max),
                           w_max);
    if (t >= T) throw DataError("anchor step beyond series end");

    const int s = static_cast<int>(scales.size());
    SignatureTensor out;
    out.anchor = t;
    out.scales = scales;
    out.data = nd::Array({n, n, s});
    double* dst = out.data.data();

    for (int c = 0; c < s; ++c) {
        const int w = scales[static_cast<std::size_t>(c)];
        const double inv = 1.0 / static_cast<double>(w);
        for (int i = 0; i < n; ++i) {
            const double* xi = values.data() + static_cast<std::int64_t>(i) * T + t;
            for (int j = i; j < n; ++j) {
                const double* xj = values.data() + static_cast<std::int64_t>(j) * T + t;
                // delta = 0..w, newest point first, per the formula.
                double acc = 0.0;
                for (int d = 0; d <= w; ++d) acc += xi[-d] * xj[-d];
                const double v = acc * inv;
                dst[(static_cast<std::int64_t>(i) * n + j) * s + c] = v;
                dst[(static_cast<std::int64_t>(j) * n + i) * s + c] = v;
            }
        }
    }
    return out;
}

std::int64_t first_valid_anchor(const std::vector<int>& scales, int h, int gap) {
    const int w_max = *std::max_element(scales.begin(), scales.end());
    return static_cast<std::int64_t>(w_max) + static_cast<std::int64_t>(h - 1) * gap;
}

SignatureSequence signature_sequence(const nd::Array& values, std::int64_t t,
                                     const std::vector<int>& scales, int h, int gap) {
    if (h < 1) throw ConfigError("history length must be >= 1");
    if (gap < 1) throw ConfigError("segment gap must be >= 1");
    const std::int64_t first = first_valid_anchor(scales, h, gap);
    if (t < first)
        throw ContextError("anchor " + std::to_string(t) +
                               " lacks history for h=" + std::to_string(h) +
                               "; first valid anchor is " + std::to_string(first),
                           first);
    SignatureSequence seq;
    seq.gap = gap;
    for (int k = h - 1; k >= 0; --k)
        seq.tensors.push_back(signature_tensor(values, t - static_cast<std::int64_t>(k) * gap, scales));
    return seq;
}

std::vector<std::int64_t> anchor_schedule(ts::StepRange split,
                                          const std::vector<int>& scales, int h, int gap) {
    std::vector<std::int64_t> anchors;
    if (split.lo >= split.hi) return anchors;
    const std::int64_t first_ok = first_valid_anchor(scales, h, gap);
    std::int64_t start = split.lo;
    if (start < first_ok) {
        const std::int64_t skip = (first_ok - split.lo + gap - 1) / gap;
        start = split.lo + skip * gap;
    }
    for (std::int64_t a = start; a < split.hi; a += gap) anchors.push_back(a);
    return anchors;
}

SignatureStore::SignatureStore(const nd::Array& values, std::vector<std::int64_t> target_anchors,
                               std::vector<int> scales, int h, int gap)
    : scales_(std::move(scales)), h_(h), gap_(gap) {
    n_ = values.dim(0);
    // Every sequence target also needs its h-1 history anchors.
    std::vector<std::int64_t> needed;
    needed.reserve(target_anchors.size() * static_cast<std::size_t>(h));
    for (std::int64_t t : target_anchors)
        for (int k = 0; k < h; ++k) needed.push_back(t - static_cast<std::int64_t>(k) * gap);
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    anchors_ = std::move(needed);

    tensors_.resize(anchors_.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(anchors_.size()); ++idx)
        tensors_[static_cast<std::size_t>(idx)] =
            signature_tensor(values, anchors_[static_cast<std::size_t>(idx)], scales_).data;
}

bool SignatureStore::has(std::int64_t anchor) const {
    return std::binary_search(anchors_.begin(), anchors_.end(), anchor);
}

const nd::Array& SignatureStore::tensor_at(std::int64_t anchor) const {
    const auto it = std::lower_bound(anchors_.begin(), anchors_.end(), anchor);
    if (it == anchors_.end() || *it != anchor)
        throw DataError("no signature tensor cached for anchor " + std::to_string(anchor));
    return tensors_[static_cast<std::size_t>(it - anchors_.begin())];
}

std::vector<const nd::Array*> SignatureStore::sequence(std::int64_t anchor) const {
    std::vector<const nd::Array*> seq;
    seq.reserve(static_cast<std::size_t>(h_));
    for (int k = h_ - 1; k >= 0; --k)
        seq.push_back(&tensor_at(anchor - static_cast<std::int64_t>(k) * gap_));
    return seq;
}

namespace {

template <typename T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size()) throw DataError("truncated signature cache");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

constexpr char kMagic[4] = {'M', 'S', 'I', 'G'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void SignatureStore::save(const std::string& path) const {
    std::string buf;
    const int s = channels();
    const std::size_t payload = static_cast<std::size_t>(n_) * n_ * s * sizeof(double);
    buf.reserve(anchors_.size() * (24 + sizeof(std::int64_t) + payload));
    for (std::size_t idx = 0; idx < anchors_.size(); ++idx) {
        buf.append(kMagic, 4);
        put<std::uint32_t>(buf, kVersion);
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(n_));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(s));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(h_));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(gap_));
        put<std::int64_t>(buf, anchors_[idx]);
        const nd::Array& t = tensors_[idx];
        buf.append(reinterpret_cast<const char*>(t.data()), payload);
    }
    io::atomic_write(path, buf);
}

SignatureStore SignatureStore::load(const std::string& path) {
    const std::string buf = io::read_file(path);
    SignatureStore store;
    std::size_t off = 0;
    bool first = true;
    while (off < buf.size()) {
        if (off + 4 > buf.size() || std::memcmp(buf.data() + off, kMagic, 4) != 0)
            throw DataError(path + ": bad signature cache magic");
        off += 4;
        const auto version = take<std::uint32_t>(buf, off);
        if (version != kVersion)
            throw DataError(path + ": unsupported cache version " + std::to_string(version));
        const int n = static_cast<int>(take<std::uint32_t>(buf, off));
        const int s = static_cast<int>(take<std::uint32_t>(buf, off));
        const int h = static_cast<int>(take<std::uint32_t>(buf, off));
        const int gap = static_cast<int>(take<std::uint32_t>(buf, off));
        const auto anchor = take<std::int64_t>(buf, off);
        if (first) {
            store.n_ = n;
            store.h_ = h;
            store.gap_ = gap;
            store.scales_.assign(static_cast<std::size_t>(s), 0);
            first = false;
        } else if (n != store.n_ || s != store.channels() || h != store.h_ || gap != store.gap_) {
            throw DataError(path + ": inconsistent cache records");
        }
        nd::Array t({n, n, s});
        const std::size_t payload = static_cast<std::size_t>(t.size()) * sizeof(double);
        if (off + payload > buf.size()) throw DataError(path + ": truncated record");
        std::memcpy(t.data(), buf.data() + off, payload);
        off += payload;
        store.anchors_.push_back(anchor);
        store.tensors_.push_back(std::move(t));
    }
    if (first) throw DataError(path + ": empty signature cache");
    return store;
}

}  // namespace mscred::sig
