#include "mscred/kernels.hpp"

#include <algorithm>
#include <vector>

#include "mscred/array.hpp"
#include "mscred/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#ifdef __AVX512F__
#include <immintrin.h>
#endif

namespace mscred::kern {

void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

ConvGeom conv_geom(int in_h, int in_w, int in_c, int k, int stride, int out_c) {
    if (k < 1 || stride < 1) throw ConfigError("kernel and stride must be >= 1");
    ConvGeom g;
    g.in_h = in_h;
    g.in_w = in_w;
    g.in_c = in_c;
    g.k = k;
    g.stride = stride;
    g.out_c = out_c;
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const int pad_h = std::max((g.out_h - 1) * stride + k - in_h, 0);
    const int pad_w = std::max((g.out_w - 1) * stride + k - in_w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
    return g;
}

DeconvGeom deconv_geom(int in_h, int in_w, int in_c, int k, int stride, int out_h,
                       int out_w, int out_c) {
    if ((out_h + stride - 1) / stride != in_h || (out_w + stride - 1) / stride != in_w) {
        const int lo_h = stride * (in_h - 1) + 1, hi_h = stride * in_h;
        throw ShapeError("transposed conv cannot reach " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " from " + std::to_string(in_h) + "x" +
                         std::to_string(in_w) + " at stride " + std::to_string(stride) +
                         "; achievable heights are " + std::to_string(lo_h) + ".." +
                         std::to_string(hi_h));
    }
    DeconvGeom g;
    g.in_h = in_h;
    g.in_w = in_w;
    g.in_c = in_c;
    g.k = k;
    g.stride = stride;
    g.out_c = out_c;
    g.out_h = out_h;
    g.out_w = out_w;
    const int pad_h = std::max((in_h - 1) * stride + k - out_h, 0);
    const int pad_w = std::max((in_w - 1) * stride + k - out_w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
    return g;
}

namespace {

// Vector-register blocking widths. Accumulators live in registers across
// the whole reduction; all summation orders are fixed, so results are
// bitwise reproducible for any thread count.
constexpr int kBlock = 32;      // single-pixel path
constexpr int kTileCo = 16;     // 4-pixel tiled path
constexpr int kTilePixels = 4;

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Fixed 8-lane partial-sum dot; lane layout is part of the definition.
inline double dot8(const double* __restrict a, const double* __restrict b, int n) {
    double part[8] = {};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) part[j] += a[i + j] * b[i + j];
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((part[0] + part[1]) + (part[2] + part[3])) +
            ((part[4] + part[5]) + (part[6] + part[7]))) +
           tail;
}

// One output pixel of the forward convolution, all channel blocks.
inline void conv_fwd_pixel(const ConvGeom& g, const double* x, const double* kernel,
                           int oy, int ox, double* __restrict out) {
    const int iy0 = oy * g.stride - g.pad_top;
    const int ix0 = ox * g.stride - g.pad_left;
    const int ky_lo = iy0 < 0 ? -iy0 : 0;
    const int ky_hi = std::min(g.k, g.in_h - iy0);
    const int kx_lo = ix0 < 0 ? -ix0 : 0;
    const int kx_hi = std::min(g.k, g.in_w - ix0);
    for (int cb = 0; cb < g.out_c; cb += kBlock) {
        const int width = std::min(kBlock, g.out_c - cb);
        double acc[kBlock] = {};
        for (int ky = ky_lo; ky < ky_hi; ++ky)
            for (int kx = kx_lo; kx < kx_hi; ++kx) {
                const double* __restrict xin =
                    x + (static_cast<std::int64_t>(iy0 + ky) * g.in_w + ix0 + kx) * g.in_c;
                const double* __restrict krow =
                    kernel + (static_cast<std::int64_t>(ky) * g.k + kx) * g.in_c * g.out_c + cb;
                if (width == kBlock) {
                    for (int ci = 0; ci < g.in_c; ++ci) {
                        const double a = xin[ci];
                        const double* __restrict kr =
                            krow + static_cast<std::int64_t>(ci) * g.out_c;
                        for (int j = 0; j < kBlock; ++j) acc[j] += a * kr[j];
                    }
                } else {
                    for (int ci = 0; ci < g.in_c; ++ci) {
                        const double a = xin[ci];
                        const double* __restrict kr =
                            krow + static_cast<std::int64_t>(ci) * g.out_c;
                        for (int j = 0; j < width; ++j) acc[j] += a * kr[j];
                    }
                }
            }
        for (int j = 0; j < width; ++j) out[cb + j] = acc[j];
    }
}

#ifdef __AVX512F__

// Four consecutive output pixels (same row, fully interior) share each
// kernel row load: 4 px x 16 channels held in eight 512-bit accumulators.
inline void conv_fwd_tile4(const ConvGeom& g, const double* x, const double* kernel,
                           int oy, int ox, double* out) {
    const int iy0 = oy * g.stride - g.pad_top;
    const std::int64_t step = static_cast<std::int64_t>(g.stride) * g.in_c;
    for (int cb = 0; cb < g.out_c; cb += kTileCo) {
        __m512d a00 = _mm512_setzero_pd(), a01 = a00, a10 = a00, a11 = a00;
        __m512d a20 = a00, a21 = a00, a30 = a00, a31 = a00;
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                const double* xin =
                    x + (static_cast<std::int64_t>(iy0 + ky) * g.in_w + ox * g.stride -
                         g.pad_left + kx) *
                            g.in_c;
                const double* krow =
                    kernel + (static_cast<std::int64_t>(ky) * g.k + kx) * g.in_c * g.out_c + cb;
                for (int ci = 0; ci < g.in_c; ++ci) {
                    const double* kr = krow + static_cast<std::int64_t>(ci) * g.out_c;
                    const __m512d k0 = _mm512_loadu_pd(kr);
                    const __m512d k1 = _mm512_loadu_pd(kr + 8);
                    const __m512d b0 = _mm512_set1_pd(xin[ci]);
                    const __m512d b1 = _mm512_set1_pd(xin[ci + step]);
                    const __m512d b2 = _mm512_set1_pd(xin[ci + 2 * step]);
                    const __m512d b3 = _mm512_set1_pd(xin[ci + 3 * step]);
                    a00 = _mm512_fmadd_pd(b0, k0, a00);
                    a01 = _mm512_fmadd_pd(b0, k1, a01);
                    a10 = _mm512_fmadd_pd(b1, k0, a10);
                    a11 = _mm512_fmadd_pd(b1, k1, a11);
                    a20 = _mm512_fmadd_pd(b2, k0, a20);
                    a21 = _mm512_fmadd_pd(b2, k1, a21);
                    a30 = _mm512_fmadd_pd(b3, k0, a30);
                    a31 = _mm512_fmadd_pd(b3, k1, a31);
                }
            }
        _mm512_storeu_pd(out + cb, a00);
        _mm512_storeu_pd(out + cb + 8, a01);
        _mm512_storeu_pd(out + g.out_c + cb, a10);
        _mm512_storeu_pd(out + g.out_c + cb + 8, a11);
        _mm512_storeu_pd(out + 2 * g.out_c + cb, a20);
        _mm512_storeu_pd(out + 2 * g.out_c + cb + 8, a21);
        _mm512_storeu_pd(out + 3 * g.out_c + cb, a30);
        _mm512_storeu_pd(out + 3 * g.out_c + cb + 8, a31);
    }
}

// Single pixel, 16-channel blocks.
inline void conv_fwd_pixel16(const ConvGeom& g, const double* x, const double* kernel,
                             int oy, int ox, double* out) {
    const int iy0 = oy * g.stride - g.pad_top;
    const int ix0 = ox * g.stride - g.pad_left;
    const int ky_lo = iy0 < 0 ? -iy0 : 0;
    const int ky_hi = std::min(g.k, g.in_h - iy0);
    const int kx_lo = ix0 < 0 ? -ix0 : 0;
    const int kx_hi = std::min(g.k, g.in_w - ix0);
    for (int cb = 0; cb < g.out_c; cb += kTileCo) {
        __m512d a0 = _mm512_setzero_pd(), a1 = a0;
        for (int ky = ky_lo; ky < ky_hi; ++ky)
            for (int kx = kx_lo; kx < kx_hi; ++kx) {
                const double* xin =
                    x + (static_cast<std::int64_t>(iy0 + ky) * g.in_w + ix0 + kx) * g.in_c;
                const double* krow =
                    kernel + (static_cast<std::int64_t>(ky) * g.k + kx) * g.in_c * g.out_c + cb;
                for (int ci = 0; ci < g.in_c; ++ci) {
                    const double* kr = krow + static_cast<std::int64_t>(ci) * g.out_c;
                    const __m512d b = _mm512_set1_pd(xin[ci]);
                    a0 = _mm512_fmadd_pd(b, _mm512_loadu_pd(kr), a0);
                    a1 = _mm512_fmadd_pd(b, _mm512_loadu_pd(kr + 8), a1);
                }
            }
        _mm512_storeu_pd(out + cb, a0);
        _mm512_storeu_pd(out + cb + 8, a1);
    }
}

#endif  // __AVX512F__

}  // namespace

void conv_fwd(const ConvGeom& g, const double* x, const double* kernel, double* y) {
#ifdef __AVX512F__
    if (g.stride == 1 && g.k > 1 && g.out_c % kTileCo == 0) {
        // Zero-pad explicitly so every row tiles without boundary checks;
        // the small maps with wide channels live on this path.
        const int ph = g.in_h + g.k - 1;
        const int pw = g.in_w + g.k - 1;
        static thread_local std::vector<double> scratch;
        const std::size_t need = static_cast<std::size_t>(ph) * pw * g.in_c;
        if (scratch.size() != need) {
            scratch.assign(need, 0.0);
        } else {
            // Only the border rows/columns carry stale data.
            const std::size_t row = static_cast<std::size_t>(pw) * g.in_c;
            for (int iy = 0; iy < g.pad_top; ++iy)
                std::fill_n(scratch.data() + static_cast<std::size_t>(iy) * row, row, 0.0);
            for (int iy = g.pad_top + g.in_h; iy < ph; ++iy)
                std::fill_n(scratch.data() + static_cast<std::size_t>(iy) * row, row, 0.0);
            for (int iy = g.pad_top; iy < g.pad_top + g.in_h; ++iy) {
                double* r = scratch.data() + static_cast<std::size_t>(iy) * row;
                std::fill_n(r, static_cast<std::size_t>(g.pad_left) * g.in_c, 0.0);
                std::fill_n(r + (static_cast<std::size_t>(g.pad_left) + g.in_w) * g.in_c,
                            (static_cast<std::size_t>(pw) - g.pad_left - g.in_w) * g.in_c, 0.0);
            }
        }
        for (int iy = 0; iy < g.in_h; ++iy)
            std::copy_n(x + static_cast<std::int64_t>(iy) * g.in_w * g.in_c,
                        static_cast<std::size_t>(g.in_w) * g.in_c,
                        scratch.data() +
                            (static_cast<std::int64_t>(iy + g.pad_top) * pw + g.pad_left) *
                                g.in_c);
        ConvGeom pg = g;
        pg.in_h = ph;
        pg.in_w = pw;
        pg.pad_top = 0;
        pg.pad_left = 0;
        const double* xp = scratch.data();
#pragma omp parallel for schedule(static)
        for (int oy = 0; oy < g.out_h; ++oy) {
            double* row = y + static_cast<std::int64_t>(oy) * g.out_w * g.out_c;
            int ox = 0;
            for (; ox + kTilePixels <= g.out_w; ox += kTilePixels)
                conv_fwd_tile4(pg, xp, kernel, oy, ox,
                               row + static_cast<std::int64_t>(ox) * g.out_c);
            for (; ox < g.out_w; ++ox)
                conv_fwd_pixel16(pg, xp, kernel, oy, ox,
                                 row + static_cast<std::int64_t>(ox) * g.out_c);
        }
        return;
    }
    if (g.out_c % kTileCo == 0) {
        // Interior columns whose kernel taps are all in range (and rows
        // likewise) qualify for the 4-pixel tiles.
        const int ox_lo = ceil_div(std::max(g.pad_left, 0), g.stride);
        const int ox_hi = std::min(g.out_w, (g.in_w - g.k + g.pad_left) / g.stride + 1);
        const int oy_lo = ceil_div(std::max(g.pad_top, 0), g.stride);
        const int oy_hi = std::min(g.out_h, (g.in_h - g.k + g.pad_top) / g.stride + 1);
#pragma omp parallel for schedule(static)
        for (int oy = 0; oy < g.out_h; ++oy) {
            double* row = y + static_cast<std::int64_t>(oy) * g.out_w * g.out_c;
            int ox = 0;
            if (oy >= oy_lo && oy < oy_hi) {
                for (; ox < ox_lo; ++ox)
                    conv_fwd_pixel16(g, x, kernel, oy, ox,
                                     row + static_cast<std::int64_t>(ox) * g.out_c);
                for (; ox + kTilePixels <= ox_hi; ox += kTilePixels)
                    conv_fwd_tile4(g, x, kernel, oy, ox,
                                   row + static_cast<std::int64_t>(ox) * g.out_c);
            }
            for (; ox < g.out_w; ++ox)
                conv_fwd_pixel16(g, x, kernel, oy, ox,
                                 row + static_cast<std::int64_t>(ox) * g.out_c);
        }
        return;
    }
#endif
#pragma omp parallel for schedule(static)
    for (int oy = 0; oy < g.out_h; ++oy) {
        double* row = y + static_cast<std::int64_t>(oy) * g.out_w * g.out_c;
        for (int ox = 0; ox < g.out_w; ++ox)
            conv_fwd_pixel(g, x, kernel, oy, ox, row + static_cast<std::int64_t>(ox) * g.out_c);
    }
}

namespace {

// kernel[k,k,ci,co] -> kt[k,k,co,ci], so the data gradient can run as a
// register-blocked gather over contiguous ci.
nd::buffer transpose_kernel_data(const double* kernel, int k, int in_c, int out_c) {
    nd::buffer kt;
    kt.resize(static_cast<std::size_t>(k) * k * in_c * out_c);
    for (int t = 0; t < k * k; ++t) {
        const double* src = kernel + static_cast<std::int64_t>(t) * in_c * out_c;
        double* dst = kt.data() + static_cast<std::int64_t>(t) * in_c * out_c;
        for (int ci = 0; ci < in_c; ++ci)
            for (int co = 0; co < out_c; ++co)
                dst[static_cast<std::int64_t>(co) * in_c + ci] =
                    src[static_cast<std::int64_t>(ci) * out_c + co];
    }
    return kt;
}

// One input pixel of the data gradient: gin += sum over taps/co of
// gy * kt, SAXPY over the contiguous ci axis.
inline void conv_bwd_data_pixel(const ConvGeom& g, const double* gy, const double* kt,
                                int iy, int ix, double* __restrict gin) {
    for (int cb = 0; cb < g.in_c; cb += kBlock) {
        const int width = std::min(kBlock, g.in_c - cb);
        double acc[kBlock] = {};
        for (int ky = 0; ky < g.k; ++ky) {
            const int num = iy + g.pad_top - ky;
            if (num < 0 || num % g.stride != 0) continue;
            const int oy = num / g.stride;
            if (oy >= g.out_h) continue;
            for (int kx = 0; kx < g.k; ++kx) {
                const int numx = ix + g.pad_left - kx;
                if (numx < 0 || numx % g.stride != 0) continue;
                const int ox = numx / g.stride;
                if (ox >= g.out_w) continue;
                const double* __restrict grow =
                    gy + (static_cast<std::int64_t>(oy) * g.out_w + ox) * g.out_c;
                const double* __restrict krow =
                    kt + (static_cast<std::int64_t>(ky) * g.k + kx) * g.in_c * g.out_c + cb;
                if (width == kBlock) {
                    for (int co = 0; co < g.out_c; ++co) {
                        const double a = grow[co];
                        const double* __restrict kr =
                            krow + static_cast<std::int64_t>(co) * g.in_c;
                        for (int j = 0; j < kBlock; ++j) acc[j] += a * kr[j];
                    }
                } else {
                    for (int co = 0; co < g.out_c; ++co) {
                        const double a = grow[co];
                        const double* __restrict kr =
                            krow + static_cast<std::int64_t>(co) * g.in_c;
                        for (int j = 0; j < width; ++j) acc[j] += a * kr[j];
                    }
                }
            }
        }
        for (int j = 0; j < width; ++j) gin[cb + j] += acc[j];
    }
}

#ifdef __AVX512F__

// Data gradient for one input pixel, 16 input channels per block, using
// the transposed kernel.
inline void conv_bwd_data_pixel16(const ConvGeom& g, const double* gy, const double* kt,
                                  int iy, int ix, double* gin) {
    for (int cb = 0; cb < g.in_c; cb += kTileCo) {
        __m512d a0 = _mm512_setzero_pd(), a1 = a0;
        for (int ky = 0; ky < g.k; ++ky) {
            const int num = iy + g.pad_top - ky;
            if (num < 0 || num % g.stride != 0) continue;
            const int oy = num / g.stride;
            if (oy >= g.out_h) continue;
            for (int kx = 0; kx < g.k; ++kx) {
                const int numx = ix + g.pad_left - kx;
                if (numx < 0 || numx % g.stride != 0) continue;
                const int ox = numx / g.stride;
                if (ox >= g.out_w) continue;
                const double* grow =
                    gy + (static_cast<std::int64_t>(oy) * g.out_w + ox) * g.out_c;
                const double* krow =
                    kt + (static_cast<std::int64_t>(ky) * g.k + kx) * g.in_c * g.out_c + cb;
                for (int co = 0; co < g.out_c; ++co) {
                    const double* kr = krow + static_cast<std::int64_t>(co) * g.in_c;
                    const __m512d b = _mm512_set1_pd(grow[co]);
                    a0 = _mm512_fmadd_pd(b, _mm512_loadu_pd(kr), a0);
                    a1 = _mm512_fmadd_pd(b, _mm512_loadu_pd(kr + 8), a1);
                }
            }
        }
        _mm512_storeu_pd(gin + cb, _mm512_add_pd(_mm512_loadu_pd(gin + cb), a0));
        _mm512_storeu_pd(gin + cb + 8, _mm512_add_pd(_mm512_loadu_pd(gin + cb + 8), a1));
    }
}

#endif  // __AVX512F__

}  // namespace

void conv_bwd_data(const ConvGeom& g, const double* gy, const double* kernel, double* gx) {
#ifdef __AVX512F__
    if (g.in_c % kTileCo == 0) {
        const nd::buffer kt = transpose_kernel_data(kernel, g.k, g.in_c, g.out_c);
        const int pixels = g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
        for (int p = 0; p < pixels; ++p)
            conv_bwd_data_pixel16(g, gy, kt.data(), p / g.in_w, p % g.in_w,
                                  gx + static_cast<std::int64_t>(p) * g.in_c);
        return;
    }
#endif
    if (static_cast<std::int64_t>(g.k) * g.k * g.in_c * g.out_c >= 4096 && g.in_c >= 16) {
        const nd::buffer kt = transpose_kernel_data(kernel, g.k, g.in_c, g.out_c);
        const int pixels = g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
        for (int p = 0; p < pixels; ++p)
            conv_bwd_data_pixel(g, gy, kt.data(), p / g.in_w, p % g.in_w,
                                gx + static_cast<std::int64_t>(p) * g.in_c);
        return;
    }
    // Narrow kernels: plain gather with lane-split dots.
    const int pixels = g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < pixels; ++p) {
        const int iy = p / g.in_w;
        const int ix = p % g.in_w;
        double* gin = gx + static_cast<std::int64_t>(p) * g.in_c;
        for (int ky = 0; ky < g.k; ++ky) {
            const int num = iy + g.pad_top - ky;
            if (num < 0 || num % g.stride != 0) continue;
            const int oy = num / g.stride;
            if (oy >= g.out_h) continue;
            for (int kx = 0; kx < g.k; ++kx) {
                const int numx = ix + g.pad_left - kx;
                if (numx < 0 || numx % g.stride != 0) continue;
                const int ox = numx / g.stride;
                if (ox >= g.out_w) continue;
                const double* grow =
                    gy + (static_cast<std::int64_t>(oy) * g.out_w + ox) * g.out_c;
                const double* krow =
                    kernel + (static_cast<std::int64_t>(ky) * g.k + kx) * g.in_c * g.out_c;
                for (int ci = 0; ci < g.in_c; ++ci)
                    gin[ci] += dot8(krow + static_cast<std::int64_t>(ci) * g.out_c, grow,
                                    g.out_c);
            }
        }
    }
}

void conv_bwd_kernel(const ConvGeom& g, const double* x, const double* gy, double* gk,
                     bool accumulate) {
    const int slices = g.k * g.k * g.in_c;
#pragma omp parallel for schedule(static)
    for (int slice = 0; slice < slices; ++slice) {
        const int ci = slice % g.in_c;
        const int kx = (slice / g.in_c) % g.k;
        const int ky = slice / (g.in_c * g.k);
        double* __restrict grad = gk + static_cast<std::int64_t>(slice) * g.out_c;
        // Valid output ranges for this tap.
        const int oy_lo = ceil_div(std::max(g.pad_top - ky, 0), g.stride);
        const int oy_hi = std::min(g.out_h, (g.in_h - 1 - ky + g.pad_top) / g.stride + 1);
        const int ox_lo = ceil_div(std::max(g.pad_left - kx, 0), g.stride);
        const int ox_hi = std::min(g.out_w, (g.in_w - 1 - kx + g.pad_left) / g.stride + 1);
#ifdef __AVX512F__
        if (g.out_c % kTileCo == 0) {
            for (int cb = 0; cb < g.out_c; cb += kTileCo) {
                __m512d a0 = _mm512_setzero_pd(), a1 = a0;
                for (int oy = oy_lo; oy < oy_hi; ++oy) {
                    const int iy = oy * g.stride - g.pad_top + ky;
                    const double* xrow =
                        x + (static_cast<std::int64_t>(iy) * g.in_w - g.pad_left + kx) * g.in_c +
                        ci;
                    const double* gyrow =
                        gy + static_cast<std::int64_t>(oy) * g.out_w * g.out_c + cb;
                    for (int ox = ox_lo; ox < ox_hi; ++ox) {
                        const __m512d b = _mm512_set1_pd(
                            xrow[static_cast<std::int64_t>(ox) * g.stride * g.in_c]);
                        const double* grow = gyrow + static_cast<std::int64_t>(ox) * g.out_c;
                        a0 = _mm512_fmadd_pd(b, _mm512_loadu_pd(grow), a0);
                        a1 = _mm512_fmadd_pd(b, _mm512_loadu_pd(grow + 8), a1);
                    }
                }
                if (accumulate) {
                    a0 = _mm512_add_pd(_mm512_loadu_pd(grad + cb), a0);
                    a1 = _mm512_add_pd(_mm512_loadu_pd(grad + cb + 8), a1);
                }
                _mm512_storeu_pd(grad + cb, a0);
                _mm512_storeu_pd(grad + cb + 8, a1);
            }
            continue;
        }
#endif
        for (int cb = 0; cb < g.out_c; cb += kBlock) {
            const int width = std::min(kBlock, g.out_c - cb);
            double acc[kBlock] = {};
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
                const int iy = oy * g.stride - g.pad_top + ky;
                const double* __restrict xrow =
                    x + (static_cast<std::int64_t>(iy) * g.in_w - g.pad_left + kx) * g.in_c + ci;
                const double* __restrict gyrow =
                    gy + static_cast<std::int64_t>(oy) * g.out_w * g.out_c + cb;
                int ox = ox_lo;
                if (width == kBlock) {
                    for (; ox + 2 <= ox_hi; ox += 2) {
                        const double a0 = xrow[static_cast<std::int64_t>(ox) * g.stride * g.in_c];
                        const double a1 =
                            xrow[static_cast<std::int64_t>(ox + 1) * g.stride * g.in_c];
                        const double* __restrict g0 = gyrow + static_cast<std::int64_t>(ox) * g.out_c;
                        const double* __restrict g1 =
                            gyrow + static_cast<std::int64_t>(ox + 1) * g.out_c;
                        for (int j = 0; j < kBlock; ++j) acc[j] += a0 * g0[j] + a1 * g1[j];
                    }
                }
                for (; ox < ox_hi; ++ox) {
                    const double a = xrow[static_cast<std::int64_t>(ox) * g.stride * g.in_c];
                    const double* __restrict grow = gyrow + static_cast<std::int64_t>(ox) * g.out_c;
                    for (int j = 0; j < width; ++j) acc[j] += a * grow[j];
                }
            }
            if (accumulate)
                for (int j = 0; j < width; ++j) grad[cb + j] += acc[j];
            else
                for (int j = 0; j < width; ++j) grad[cb + j] = acc[j];
        }
    }
}

void deconv_fwd(const DeconvGeom& g, const double* x, const double* kernel, double* y) {
    const int pixels = g.out_h * g.out_w;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < pixels; ++p) {
        const int oy = p / g.out_w;
        const int ox = p % g.out_w;
        double* __restrict out = y + static_cast<std::int64_t>(p) * g.out_c;
        for (int cb = 0; cb < g.out_c; cb += kBlock) {
            const int width = std::min(kBlock, g.out_c - cb);
            double acc[kBlock] = {};
            for (int ky = 0; ky < g.k; ++ky) {
                const int num = oy + g.pad_top - ky;
                if (num < 0 || num % g.stride != 0) continue;
                const int sy = num / g.stride;
                if (sy >= g.in_h) continue;
                for (int kx = 0; kx < g.k; ++kx) {
                    const int numx = ox + g.pad_left - kx;
                    if (numx < 0 || numx % g.stride != 0) continue;
                    const int sx = numx / g.stride;
                    if (sx >= g.in_w) continue;
                    const double* __restrict xin =
                        x + (static_cast<std::int64_t>(sy) * g.in_w + sx) * g.in_c;
                    const double* __restrict krow =
                        kernel + (static_cast<std::int64_t>(ky) * g.k + kx) * g.in_c * g.out_c +
                        cb;
                    if (width == kBlock) {
                        for (int ci = 0; ci < g.in_c; ++ci) {
                            const double a = xin[ci];
                            const double* __restrict kr =
                                krow + static_cast<std::int64_t>(ci) * g.out_c;
                            for (int j = 0; j < kBlock; ++j) acc[j] += a * kr[j];
                        }
                    } else {
                        for (int ci = 0; ci < g.in_c; ++ci) {
                            const double a = xin[ci];
                            const double* __restrict kr =
                                krow + static_cast<std::int64_t>(ci) * g.out_c;
                            for (int j = 0; j < width; ++j) acc[j] += a * kr[j];
                        }
                    }
                }
            }
            for (int j = 0; j < width; ++j) out[cb + j] = acc[j];
        }
    }
}

void deconv_bwd_data(const DeconvGeom& g, const double* gy, const double* kernel, double* gx) {
    const int pixels = g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < pixels; ++p) {
        const int sy = p / g.in_w;
        const int sx = p % g.in_w;
        double* gin = gx + static_cast<std::int64_t>(p) * g.in_c;
        const int oy0 = sy * g.stride - g.pad_top;
        const int ox0 = sx * g.stride - g.pad_left;
        for (int ky = 0; ky < g.k; ++ky) {
            const int oy = oy0 + ky;
            if (oy < 0 || oy >= g.out_h) continue;
            for (int kx = 0; kx < g.k; ++kx) {
                const int ox = ox0 + kx;
                if (ox < 0 || ox >= g.out_w) continue;
                const double* grow =
                    gy + (static_cast<std::int64_t>(oy) * g.out_w + ox) * g.out_c;
                const double* krow =
                    kernel + (static_cast<std::int64_t>(ky) * g.k + kx) * g.in_c * g.out_c;
                for (int ci = 0; ci < g.in_c; ++ci)
                    gin[ci] += dot8(krow + static_cast<std::int64_t>(ci) * g.out_c, grow,
                                    g.out_c);
            }
        }
    }
}

void deconv_bwd_kernel(const DeconvGeom& g, const double* x, const double* gy, double* gk) {
    const int slices = g.k * g.k * g.in_c;
#pragma omp parallel for schedule(static)
    for (int slice = 0; slice < slices; ++slice) {
        const int ci = slice % g.in_c;
        const int kx = (slice / g.in_c) % g.k;
        const int ky = slice / (g.in_c * g.k);
        double* __restrict grad = gk + static_cast<std::int64_t>(slice) * g.out_c;
        for (int cb = 0; cb < g.out_c; cb += kBlock) {
            const int width = std::min(kBlock, g.out_c - cb);
            double acc[kBlock] = {};
            for (int sy = 0; sy < g.in_h; ++sy) {
                const int oy = sy * g.stride - g.pad_top + ky;
                if (oy < 0 || oy >= g.out_h) continue;
                for (int sx = 0; sx < g.in_w; ++sx) {
                    const int ox = sx * g.stride - g.pad_left + kx;
                    if (ox < 0 || ox >= g.out_w) continue;
                    const double a =
                        x[(static_cast<std::int64_t>(sy) * g.in_w + sx) * g.in_c + ci];
                    const double* __restrict grow =
                        gy + (static_cast<std::int64_t>(oy) * g.out_w + ox) * g.out_c + cb;
                    if (width == kBlock) {
                        for (int j = 0; j < kBlock; ++j) acc[j] += a * grow[j];
                    } else {
                        for (int j = 0; j < width; ++j) acc[j] += a * grow[j];
                    }
                }
            }
            for (int j = 0; j < width; ++j) grad[cb + j] += acc[j];
        }
    }
}

}  // namespace mscred::kern
