#pragma once

#include <cstdint>

namespace mscred::kern {

/// Same-style convolution geometry: output spatial size ceil(in/stride),
/// total padding max((out-1)*stride + k - in, 0) split with the extra row
/// and column on the bottom/right.
struct ConvGeom {
    int in_h = 0, in_w = 0, in_c = 0;
    int k = 0, stride = 1, out_c = 0;
    int out_h = 0, out_w = 0;
    int pad_top = 0, pad_left = 0;
};

ConvGeom conv_geom(int in_h, int in_w, int in_c, int k, int stride, int out_c);

/// Transposed-convolution geometry. The output (the larger map) plays the
/// role of the input of the mirrored convolution; target sizes must satisfy
/// ceil(target/stride) == in. Kernel layout is [k, k, in_c, out_c].
struct DeconvGeom {
    int in_h = 0, in_w = 0, in_c = 0;
    int k = 0, stride = 1, out_c = 0;
    int out_h = 0, out_w = 0;
    int pad_top = 0, pad_left = 0;
};

DeconvGeom deconv_geom(int in_h, int in_w, int in_c, int k, int stride, int out_h,
                       int out_w, int out_c);

// Kernel layout for convolution: [k, k, in_c, out_c], row-major.
void conv_fwd(const ConvGeom& g, const double* x, const double* kernel, double* y);
void conv_bwd_data(const ConvGeom& g, const double* gy, const double* kernel, double* gx);
/// accumulate=false overwrites gk instead of adding into it, so scratch
/// buffers need no zero pass.
void conv_bwd_kernel(const ConvGeom& g, const double* x, const double* gy, double* gk,
                     bool accumulate = true);

void deconv_fwd(const DeconvGeom& g, const double* x, const double* kernel, double* y);
void deconv_bwd_data(const DeconvGeom& g, const double* gy, const double* kernel, double* gx);
void deconv_bwd_kernel(const DeconvGeom& g, const double* x, const double* gy, double* gk);

/// Number of worker threads used by the parallel loops (OpenMP when built
/// with it). 0 keeps the current setting.
void set_threads(int n);
int threads();

}  // namespace mscred::kern
