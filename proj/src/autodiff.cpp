#include "mscred/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mscred::ad {

namespace {

// Published SELU constants.
constexpr double kSeluScale = 1.0507009873554804934193349852946;
constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

// Elementwise loops above this size fan out across threads; writes are
// disjoint so results do not depend on the thread count.
constexpr std::int64_t kParThreshold = 16384;

template <typename F>
inline void for_each_span(std::int64_t n, const F& f) {
    if (n >= kParThreshold) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) f(i);
    } else {
        for (std::int64_t i = 0; i < n; ++i) f(i);
    }
}

Var make_node(nd::Array value, std::vector<Var> parents,
              std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->parents = std::move(parents);
    for (const auto& p : node->parents)
        if (p->needs_grad) node->needs_grad = true;
    if (node->needs_grad) node->backprop = std::move(backprop);
    return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw ShapeError(std::string(op) + ": shapes " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
}

}  // namespace

Var constant(nd::Array value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return node;
}

Var parameter(nd::Array value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->needs_grad = true;
    return node;
}

double scalar_value(const Var& v) {
    if (v->value.size() != 1) throw ShapeError("expected a scalar node");
    return v->value[0];
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    nd::Array out = nd::Array::uninitialized(a->value.shape());
    const std::int64_t m = out.size();
    for_each_span(m, [&](std::int64_t i) { out[i] = a->value[i] + b->value[i]; });
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const std::int64_t m2 = n.value.size();
        for (int side = 0; side < 2; ++side) {
            Node& p = *n.parents[static_cast<std::size_t>(side)];
            if (!p.needs_grad) continue;
            nd::Array& g = p.grad_buf();
            for_each_span(m2, [&](std::int64_t i) { g[i] += n.grad[i]; });
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    nd::Array out = nd::Array::uninitialized(a->value.shape());
    const std::int64_t m = out.size();
    for_each_span(m, [&](std::int64_t i) { out[i] = a->value[i] - b->value[i]; });
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const std::int64_t m2 = n.value.size();
        if (n.parents[0]->needs_grad) {
            nd::Array& g = n.parents[0]->grad_buf();
            for_each_span(m2, [&](std::int64_t i) { g[i] += n.grad[i]; });
        }
        if (n.parents[1]->needs_grad) {
            nd::Array& g = n.parents[1]->grad_buf();
            for_each_span(m2, [&](std::int64_t i) { g[i] -= n.grad[i]; });
        }
    });
}

Var scale(const Var& a, double factor) {
    nd::Array out = nd::Array::uninitialized(a->value.shape());
    const std::int64_t m = out.size();
    for (std::int64_t i = 0; i < m; ++i) out[i] = a->value[i] * factor;
    return make_node(std::move(out), {a}, [factor](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        nd::Array& g = n.parents[0]->grad_buf();
        const std::int64_t m2 = n.value.size();
        for (std::int64_t i = 0; i < m2; ++i) g[i] += factor * n.grad[i];
    });
}

Var elementwise_mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "elementwise_mul");
    nd::Array out = nd::Array::uninitialized(a->value.shape());
    const std::int64_t m = out.size();
    for_each_span(m, [&](std::int64_t i) { out[i] = a->value[i] * b->value[i]; });
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Node& a2 = *n.parents[0];
        Node& b2 = *n.parents[1];
        const std::int64_t m2 = n.value.size();
        if (a2.needs_grad) {
            nd::Array& g = a2.grad_buf();
            for_each_span(m2, [&](std::int64_t i) { g[i] += n.grad[i] * b2.value[i]; });
        }
        if (b2.needs_grad) {
            nd::Array& g = b2.grad_buf();
            for_each_span(m2, [&](std::int64_t i) { g[i] += n.grad[i] * a2.value[i]; });
        }
    });
}

Var selu(const Var& x) {
    nd::Array out = nd::Array::uninitialized(x->value.shape());
    const std::int64_t m = out.size();
    for_each_span(m, [&](std::int64_t i) {
        const double v = x->value[i];
        out[i] = v > 0.0 ? kSeluScale * v : kSeluScale * kSeluAlpha * std::expm1(v);
    });
    return make_node(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Node& p = *n.parents[0];
        nd::Array& g = p.grad_buf();
        const std::int64_t m2 = n.value.size();
        for_each_span(m2, [&](std::int64_t i) {
            const double slope = p.value[i] > 0.0
                                     ? kSeluScale
                                     : n.value[i] + kSeluScale * kSeluAlpha;
            g[i] += n.grad[i] * slope;
        });
    });
}

Var sigmoid(const Var& x) {
    nd::Array out = nd::Array::uninitialized(x->value.shape());
    const std::int64_t m = out.size();
    for_each_span(m, [&](std::int64_t i) {
        const double v = x->value[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                          : std::exp(v) / (1.0 + std::exp(v));
    });
    return make_node(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        nd::Array& g = n.parents[0]->grad_buf();
        const std::int64_t m2 = n.value.size();
        for_each_span(m2, [&](std::int64_t i) {
            const double s = n.value[i];
            g[i] += n.grad[i] * s * (1.0 - s);
        });
    });
}

Var tanh_act(const Var& x) {
    nd::Array out = nd::Array::uninitialized(x->value.shape());
    const std::int64_t m = out.size();
    for_each_span(m, [&](std::int64_t i) { out[i] = std::tanh(x->value[i]); });
    return make_node(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        nd::Array& g = n.parents[0]->grad_buf();
        const std::int64_t m2 = n.value.size();
        for_each_span(m2, [&](std::int64_t i) {
            const double t = n.value[i];
            g[i] += n.grad[i] * (1.0 - t * t);
        });
    });
}

Var concat_channels(const Var& a, const Var& b) {
    if (a->value.rank() != 3 || b->value.rank() != 3)
        throw ShapeError("concat_channels expects rank-3 maps");
    if (a->value.dim(0) != b->value.dim(0) || a->value.dim(1) != b->value.dim(1))
        throw ShapeError("concat_channels: spatial sizes differ");
    const int h = a->value.dim(0), w = a->value.dim(1);
    const int ca = a->value.dim(2), cb = b->value.dim(2);
    nd::Array out = nd::Array::uninitialized({h, w, ca + cb});
    const std::int64_t pixels = static_cast<std::int64_t>(h) * w;
    for (std::int64_t p = 0; p < pixels; ++p) {
        double* dst = out.data() + p * (ca + cb);
        std::copy_n(a->value.data() + p * ca, ca, dst);
        std::copy_n(b->value.data() + p * cb, cb, dst + ca);
    }
    return make_node(std::move(out), {a, b}, [h, w, ca, cb](Node& n) {
        const std::int64_t pixels2 = static_cast<std::int64_t>(h) * w;
        if (n.parents[0]->needs_grad) {
            nd::Array& g = n.parents[0]->grad_buf();
            for (std::int64_t p = 0; p < pixels2; ++p) {
                const double* src = n.grad.data() + p * (ca + cb);
                double* dst = g.data() + p * ca;
                for (int c = 0; c < ca; ++c) dst[c] += src[c];
            }
        }
        if (n.parents[1]->needs_grad) {
            nd::Array& g = n.parents[1]->grad_buf();
            for (std::int64_t p = 0; p < pixels2; ++p) {
                const double* src = n.grad.data() + p * (ca + cb) + ca;
                double* dst = g.data() + p * cb;
                for (int c = 0; c < cb; ++c) dst[c] += src[c];
            }
        }
    });
}

Var add_channel_bias(const Var& x, const Var& bias) {
    if (x->value.rank() < 1 || bias->value.rank() != 1)
        throw ShapeError("add_channel_bias expects a map and a rank-1 bias");
    const int c = bias->value.dim(0);
    if (x->value.dim(x->value.rank() - 1) != c)
        throw ShapeError("bias length does not match channel count");
    nd::Array out = nd::Array::uninitialized(x->value.shape());
    const std::int64_t pixels = x->value.size() / c;
    for (std::int64_t p = 0; p < pixels; ++p) {
        const double* src = x->value.data() + p * c;
        double* dst = out.data() + p * c;
        for (int i = 0; i < c; ++i) dst[i] = src[i] + bias->value[i];
    }
    return make_node(std::move(out), {x, bias}, [c](Node& n) {
        const std::int64_t pixels2 = n.value.size() / c;
        if (n.parents[0]->needs_grad) {
            nd::Array& g = n.parents[0]->grad_buf();
            const std::int64_t m2 = n.value.size();
            for (std::int64_t i = 0; i < m2; ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->needs_grad) {
            nd::Array& g = n.parents[1]->grad_buf();
            for (std::int64_t p = 0; p < pixels2; ++p) {
                const double* src = n.grad.data() + p * c;
                for (int i = 0; i < c; ++i) g[i] += src[i];
            }
        }
    });
}

namespace {

kern::ConvGeom geom_for(const Var& x, const Var& kernel, int stride) {
    if (x->value.rank() != 3 || kernel->value.rank() != 4)
        throw ShapeError("conv2d expects [H,W,C] input and [k,k,Cin,Cout] kernel");
    if (kernel->value.dim(0) != kernel->value.dim(1))
        throw ShapeError("conv2d kernels must be square");
    if (kernel->value.dim(2) != x->value.dim(2))
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel->value.dim(2)) +
                         " input channels, got " + std::to_string(x->value.dim(2)));
    return kern::conv_geom(x->value.dim(0), x->value.dim(1), x->value.dim(2),
                           kernel->value.dim(0), stride, kernel->value.dim(3));
}

}  // namespace

Var conv2d(const Var& x, const Var& kernel, int stride) {
    const kern::ConvGeom g = geom_for(x, kernel, stride);
    nd::Array out = nd::Array::uninitialized({g.out_h, g.out_w, g.out_c});
    kern::conv_fwd(g, x->value.data(), kernel->value.data(), out.data());
    return make_node(std::move(out), {x, kernel}, [g](Node& n) {
        Node& xn = *n.parents[0];
        Node& kn = *n.parents[1];
        if (xn.needs_grad)
            kern::conv_bwd_data(g, n.grad.data(), kn.value.data(), xn.grad_buf().data());
        if (kn.needs_grad)
            kern::conv_bwd_kernel(g, xn.value.data(), n.grad.data(), kn.grad_buf().data());
    });
}

Var deconv2d(const Var& x, const Var& kernel, int stride, int out_h, int out_w) {
    if (x->value.rank() != 3 || kernel->value.rank() != 4)
        throw ShapeError("deconv2d expects [H,W,C] input and [k,k,Cin,Cout] kernel");
    if (kernel->value.dim(0) != kernel->value.dim(1))
        throw ShapeError("deconv2d kernels must be square");
    if (kernel->value.dim(2) != x->value.dim(2))
        throw ShapeError("deconv2d: kernel expects " + std::to_string(kernel->value.dim(2)) +
                         " input channels, got " + std::to_string(x->value.dim(2)));
    const kern::DeconvGeom g =
        kern::deconv_geom(x->value.dim(0), x->value.dim(1), x->value.dim(2),
                          kernel->value.dim(0), stride, out_h, out_w, kernel->value.dim(3));
    nd::Array out = nd::Array::uninitialized({g.out_h, g.out_w, g.out_c});
    kern::deconv_fwd(g, x->value.data(), kernel->value.data(), out.data());
    return make_node(std::move(out), {x, kernel}, [g](Node& n) {
        Node& xn = *n.parents[0];
        Node& kn = *n.parents[1];
        if (xn.needs_grad)
            kern::deconv_bwd_data(g, n.grad.data(), kn.value.data(), xn.grad_buf().data());
        if (kn.needs_grad)
            kern::deconv_bwd_kernel(g, xn.value.data(), n.grad.data(), kn.grad_buf().data());
    });
}

Var dot(const Var& a, const Var& b) {
    check_same_shape(a, b, "dot");
    double acc = 0.0;
    const std::int64_t m = a->value.size();
    for (std::int64_t i = 0; i < m; ++i) acc += a->value[i] * b->value[i];
    nd::Array out({1});
    out[0] = acc;
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const double gs = n.grad[0];
        Node& a2 = *n.parents[0];
        Node& b2 = *n.parents[1];
        const std::int64_t m2 = a2.value.size();
        if (a2.needs_grad) {
            nd::Array& g = a2.grad_buf();
            for (std::int64_t i = 0; i < m2; ++i) g[i] += gs * b2.value[i];
        }
        if (b2.needs_grad) {
            nd::Array& g = b2.grad_buf();
            for (std::int64_t i = 0; i < m2; ++i) g[i] += gs * a2.value[i];
        }
    });
}

Var stack_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("stack_scalars: empty input");
    nd::Array out({static_cast<int>(xs.size())});
    std::vector<Var> parents;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i]->value.size() != 1) throw ShapeError("stack_scalars expects scalars");
        out[static_cast<std::int64_t>(i)] = xs[i]->value[0];
        parents.push_back(xs[i]);
    }
    return make_node(std::move(out), std::move(parents), [](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            Node& p = *n.parents[i];
            if (p.needs_grad) p.grad_buf()[0] += n.grad[static_cast<std::int64_t>(i)];
        }
    });
}

Var softmax(const Var& scores) {
    if (scores->value.rank() != 1) throw ShapeError("softmax expects a vector");
    const std::int64_t m = scores->value.size();
    double mx = scores->value[0];
    for (std::int64_t i = 1; i < m; ++i) mx = std::max(mx, scores->value[i]);
    nd::Array out(scores->value.shape());
    double sum = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
        out[i] = std::exp(scores->value[i] - mx);
        sum += out[i];
    }
    for (std::int64_t i = 0; i < m; ++i) out[i] /= sum;
    return make_node(std::move(out), {scores}, [](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        nd::Array& g = n.parents[0]->grad_buf();
        const std::int64_t m2 = n.value.size();
        double inner = 0.0;
        for (std::int64_t i = 0; i < m2; ++i) inner += n.grad[i] * n.value[i];
        for (std::int64_t i = 0; i < m2; ++i) g[i] += n.value[i] * (n.grad[i] - inner);
    });
}

Var weighted_sum(const Var& weights, const std::vector<Var>& maps) {
    if (weights->value.rank() != 1 ||
        weights->value.size() != static_cast<std::int64_t>(maps.size()))
        throw ShapeError("weighted_sum: weight count must match map count");
    if (maps.empty()) throw ShapeError("weighted_sum: no maps");
    nd::Array out(maps[0]->value.shape());
    const std::int64_t m = out.size();
    for (std::size_t i = 0; i < maps.size(); ++i) {
        check_same_shape(maps[i], maps[0], "weighted_sum");
        const double w = weights->value[static_cast<std::int64_t>(i)];
        const nd::Array& src = maps[i]->value;
        for (std::int64_t j = 0; j < m; ++j) out[j] += w * src[j];
    }
    std::vector<Var> parents{weights};
    parents.insert(parents.end(), maps.begin(), maps.end());
    return make_node(std::move(out), std::move(parents), [](Node& n) {
        Node& wn = *n.parents[0];
        const std::int64_t m2 = n.value.size();
        for (std::size_t i = 1; i < n.parents.size(); ++i) {
            Node& p = *n.parents[i];
            const double w = wn.value[static_cast<std::int64_t>(i - 1)];
            if (wn.needs_grad) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < m2; ++j) acc += n.grad[j] * p.value[j];
                wn.grad_buf()[static_cast<std::int64_t>(i - 1)] += acc;
            }
            if (p.needs_grad) {
                nd::Array& g = p.grad_buf();
                for (std::int64_t j = 0; j < m2; ++j) g[j] += w * n.grad[j];
            }
        }
    });
}

Var sum_squares(const Var& x) {
    double acc = 0.0;
    const std::int64_t m = x->value.size();
    for (std::int64_t i = 0; i < m; ++i) acc += x->value[i] * x->value[i];
    nd::Array out({1});
    out[0] = acc;
    return make_node(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Node& p = *n.parents[0];
        nd::Array& g = p.grad_buf();
        const double gs = n.grad[0];
        const std::int64_t m2 = p.value.size();
        for (std::int64_t i = 0; i < m2; ++i) g[i] += 2.0 * gs * p.value[i];
    });
}

Var gate_preact(const Var& x, const Var& kx, const Var& h, const Var& kh,
                const Var& c, const Var& peep, const Var& bias) {
    const kern::ConvGeom gx = geom_for(x, kx, 1);
    const kern::ConvGeom gh = geom_for(h, kh, 1);
    if (gx.out_h != gh.out_h || gx.out_w != gh.out_w || gx.out_c != gh.out_c)
        throw ShapeError("gate_preact: input and state convolutions disagree");
    if ((c == nullptr) != (peep == nullptr))
        throw ShapeError("gate_preact: peephole needs both state and weights");
    nd::Array out = nd::Array::uninitialized({gx.out_h, gx.out_w, gx.out_c});
    kern::conv_fwd(gx, x->value.data(), kx->value.data(), out.data());
    {
        nd::Array tmp = nd::Array::uninitialized({gh.out_h, gh.out_w, gh.out_c});
        kern::conv_fwd(gh, h->value.data(), kh->value.data(), tmp.data());
        const std::int64_t m = out.size();
        for (std::int64_t i = 0; i < m; ++i) out[i] += tmp[i];
    }
    if (c) {
        if (!c->value.same_shape(out) || !peep->value.same_shape(out))
            throw ShapeError("gate_preact: peephole shape mismatch");
        const std::int64_t m = out.size();
        for (std::int64_t i = 0; i < m; ++i) out[i] += c->value[i] * peep->value[i];
    }
    if (bias->value.rank() != 1 || bias->value.dim(0) != gx.out_c)
        throw ShapeError("gate_preact: bias length mismatch");
    {
        const std::int64_t pixels = static_cast<std::int64_t>(gx.out_h) * gx.out_w;
        for (std::int64_t p = 0; p < pixels; ++p) {
            double* row = out.data() + p * gx.out_c;
            for (int i = 0; i < gx.out_c; ++i) row[i] += bias->value[i];
        }
    }
    std::vector<Var> parents{x, kx, h, kh, bias};
    if (c) {
        parents.push_back(c);
        parents.push_back(peep);
    }
    const bool with_peep = c != nullptr;
    return make_node(std::move(out), std::move(parents), [gx, gh, with_peep](Node& n) {
        Node& xn = *n.parents[0];
        Node& kxn = *n.parents[1];
        Node& hn = *n.parents[2];
        Node& khn = *n.parents[3];
        Node& bn = *n.parents[4];
        if (xn.needs_grad)
            kern::conv_bwd_data(gx, n.grad.data(), kxn.value.data(), xn.grad_buf().data());
        if (kxn.needs_grad)
            kern::conv_bwd_kernel(gx, xn.value.data(), n.grad.data(), kxn.grad_buf().data());
        if (hn.needs_grad)
            kern::conv_bwd_data(gh, n.grad.data(), khn.value.data(), hn.grad_buf().data());
        if (khn.needs_grad)
            kern::conv_bwd_kernel(gh, hn.value.data(), n.grad.data(), khn.grad_buf().data());
        if (bn.needs_grad) {
            nd::Array& g = bn.grad_buf();
            const int ch = gx.out_c;
            const std::int64_t pixels = static_cast<std::int64_t>(gx.out_h) * gx.out_w;
            for (std::int64_t p = 0; p < pixels; ++p) {
                const double* row = n.grad.data() + p * ch;
                for (int i = 0; i < ch; ++i) g[i] += row[i];
            }
        }
        if (with_peep) {
            Node& cn = *n.parents[5];
            Node& pn = *n.parents[6];
            const std::int64_t m2 = n.value.size();
            if (cn.needs_grad) {
                nd::Array& g = cn.grad_buf();
                for (std::int64_t i = 0; i < m2; ++i) g[i] += n.grad[i] * pn.value[i];
            }
            if (pn.needs_grad) {
                nd::Array& g = pn.grad_buf();
                for (std::int64_t i = 0; i < m2; ++i) g[i] += n.grad[i] * cn.value[i];
            }
        }
    });
}

namespace {

void concat_gate_kernels(const std::array<Var, 4>& ks, int k, int in_c, int d,
                         nd::Array& cat) {
    cat = nd::Array::uninitialized({k, k, in_c, 4 * d});
    for (int t = 0; t < k * k; ++t)
        for (int ci = 0; ci < in_c; ++ci) {
            double* dst = cat.data() + (static_cast<std::int64_t>(t) * in_c + ci) * 4 * d;
            for (int gate = 0; gate < 4; ++gate)
                std::copy_n(ks[static_cast<std::size_t>(gate)]->value.data() +
                                (static_cast<std::int64_t>(t) * in_c + ci) * d,
                            d, dst + static_cast<std::int64_t>(gate) * d);
        }
}

// cat[k,k,ci,4d] -> flipped+transposed [k,k,4d,ci]: the kernel of the
// stride-1 convolution that computes the data gradient.
nd::Array flip_transpose(const nd::Array& cat) {
    const int k = cat.dim(0), in_c = cat.dim(2), out_c = cat.dim(3);
    nd::Array kt = nd::Array::uninitialized({k, k, out_c, in_c});
    for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
            const double* src =
                cat.data() +
                (static_cast<std::int64_t>(k - 1 - ky) * k + (k - 1 - kx)) * in_c * out_c;
            double* dst = kt.data() + (static_cast<std::int64_t>(ky) * k + kx) * in_c * out_c;
            for (int ci = 0; ci < in_c; ++ci)
                for (int co = 0; co < out_c; ++co)
                    dst[static_cast<std::int64_t>(co) * in_c + ci] =
                        src[static_cast<std::int64_t>(ci) * out_c + co];
        }
    return kt;
}

// Accumulating stride-1 data gradient: gx += conv(gy, flipped kernel) with
// mirrored padding, which reuses the tiled forward path.
void bwd_data_as_conv(const kern::ConvGeom& fwd_geom, const double* gy, const nd::Array& kt,
                      double* gx) {
    kern::ConvGeom g;
    g.in_h = fwd_geom.out_h;
    g.in_w = fwd_geom.out_w;
    g.in_c = fwd_geom.out_c;
    g.k = fwd_geom.k;
    g.stride = 1;
    g.out_c = fwd_geom.in_c;
    g.out_h = fwd_geom.in_h;
    g.out_w = fwd_geom.in_w;
    g.pad_top = fwd_geom.k - 1 - fwd_geom.pad_top;
    g.pad_left = fwd_geom.k - 1 - fwd_geom.pad_left;
    nd::Array scratch = nd::Array::uninitialized({g.out_h, g.out_w, g.out_c});
    kern::conv_fwd(g, gy, kt.data(), scratch.data());
    const std::int64_t m = scratch.size();
    for_each_span(m, [&](std::int64_t i) { gx[i] += scratch[i]; });
}

}  // namespace

struct GateKernels {
    nd::Array kx_cat, kh_cat;  // [k,k,ci,4d]
    nd::Array kx_t, kh_t;      // flipped+transposed, built on first backward
    bool has_transposed = false;

    void ensure_transposed() {
        if (has_transposed) return;
        kx_t = flip_transpose(kx_cat);
        kh_t = flip_transpose(kh_cat);
        has_transposed = true;
    }
};

GateKernelsPtr pack_gate_kernels(const std::array<Var, 4>& kx, const std::array<Var, 4>& kh) {
    const int k = kx[0]->value.dim(0);
    const int d = kx[0]->value.dim(3);
    auto packed = std::make_shared<GateKernels>();
    concat_gate_kernels(kx, k, kx[0]->value.dim(2), d, packed->kx_cat);
    concat_gate_kernels(kh, k, kh[0]->value.dim(2), d, packed->kh_cat);
    return packed;
}

Var conv2d_gates(const Var& x, const Var& h, const std::array<Var, 4>& kx,
                 const std::array<Var, 4>& kh, const std::array<Var, 4>& bias,
                 GateKernelsPtr packed) {
    const int k = kx[0]->value.dim(0);
    const int d = kx[0]->value.dim(3);
    for (const auto& group : {kx, kh})
        for (const auto& kv : group)
            if (kv->value.dim(0) != k || kv->value.dim(1) != k || kv->value.dim(3) != d)
                throw ShapeError("conv2d_gates: gate kernels must share one shape");
    const kern::ConvGeom gx = kern::conv_geom(x->value.dim(0), x->value.dim(1),
                                              x->value.dim(2), k, 1, 4 * d);
    const kern::ConvGeom gh = kern::conv_geom(h->value.dim(0), h->value.dim(1),
                                              h->value.dim(2), k, 1, 4 * d);
    if (gx.out_h != gh.out_h || gx.out_w != gh.out_w)
        throw ShapeError("conv2d_gates: input and state spatial sizes disagree");

    if (!packed) packed = pack_gate_kernels(kx, kh);

    nd::Array out = nd::Array::uninitialized({gx.out_h, gx.out_w, 4 * d});
    kern::conv_fwd(gx, x->value.data(), packed->kx_cat.data(), out.data());
    {
        nd::Array tmp = nd::Array::uninitialized({gh.out_h, gh.out_w, 4 * d});
        kern::conv_fwd(gh, h->value.data(), packed->kh_cat.data(), tmp.data());
        const std::int64_t pixels = static_cast<std::int64_t>(gx.out_h) * gx.out_w;
        for_each_span(pixels, [&](std::int64_t p) {
            double* row = out.data() + p * 4 * d;
            const double* add = tmp.data() + p * 4 * d;
            for (int j = 0; j < 4 * d; ++j) row[j] += add[j];
            for (int gate = 0; gate < 4; ++gate) {
                const double* b = bias[static_cast<std::size_t>(gate)]->value.data();
                for (int j = 0; j < d; ++j) row[static_cast<std::int64_t>(gate) * d + j] += b[j];
            }
        });
    }

    std::vector<Var> parents{x, h};
    for (const auto& kv : kx) parents.push_back(kv);
    for (const auto& kv : kh) parents.push_back(kv);
    for (const auto& bv : bias) parents.push_back(bv);
    return make_node(std::move(out), std::move(parents), [gx, gh, packed, d](Node& n) {
        Node& xn = *n.parents[0];
        Node& hn = *n.parents[1];
        const int quad = 4 * d;
        if (xn.needs_grad || hn.needs_grad) packed->ensure_transposed();
        if (xn.needs_grad)
            bwd_data_as_conv(gx, n.grad.data(), packed->kx_t, xn.grad_buf().data());
        if (hn.needs_grad)
            bwd_data_as_conv(gh, n.grad.data(), packed->kh_t, hn.grad_buf().data());
        // Kernel gradients: once through the wide buffer, then split.
        auto scatter = [&](const kern::ConvGeom& g, const Node& src, std::size_t first) {
            bool any = false;
            for (int gate = 0; gate < 4; ++gate)
                if (n.parents[first + static_cast<std::size_t>(gate)]->needs_grad) any = true;
            if (!any) return;
            nd::Array wide = nd::Array::uninitialized({g.k, g.k, g.in_c, quad});
            kern::conv_bwd_kernel(g, src.value.data(), n.grad.data(), wide.data(),
                                  /*accumulate=*/false);
            for (int gate = 0; gate < 4; ++gate) {
                Node& kn = *n.parents[first + static_cast<std::size_t>(gate)];
                if (!kn.needs_grad) continue;
                nd::Array& kg = kn.grad_buf();
                for (int t = 0; t < g.k * g.k; ++t)
                    for (int ci = 0; ci < g.in_c; ++ci) {
                        const double* srcrow =
                            wide.data() + (static_cast<std::int64_t>(t) * g.in_c + ci) * quad +
                            static_cast<std::int64_t>(gate) * d;
                        double* dstrow =
                            kg.data() + (static_cast<std::int64_t>(t) * g.in_c + ci) * d;
                        for (int j = 0; j < d; ++j) dstrow[j] += srcrow[j];
                    }
            }
        };
        scatter(gx, xn, 2);
        scatter(gh, hn, 6);
        const std::int64_t pixels = static_cast<std::int64_t>(gx.out_h) * gx.out_w;
        for (int gate = 0; gate < 4; ++gate) {
            Node& bn = *n.parents[10 + static_cast<std::size_t>(gate)];
            if (!bn.needs_grad) continue;
            nd::Array& bg = bn.grad_buf();
            for (std::int64_t p = 0; p < pixels; ++p) {
                const double* row = n.grad.data() + p * quad + static_cast<std::int64_t>(gate) * d;
                for (int j = 0; j < d; ++j) bg[j] += row[j];
            }
        }
    });
}

Var slice_channels(const Var& x, int lo, int width) {
    if (x->value.rank() != 3) throw ShapeError("slice_channels expects a rank-3 map");
    const int c = x->value.dim(2);
    if (lo < 0 || width < 1 || lo + width > c) throw ShapeError("slice_channels out of range");
    const int hgt = x->value.dim(0), wid = x->value.dim(1);
    nd::Array out = nd::Array::uninitialized({hgt, wid, width});
    const std::int64_t pixels = static_cast<std::int64_t>(hgt) * wid;
    for_each_span(pixels, [&](std::int64_t p) {
        std::copy_n(x->value.data() + p * c + lo, width, out.data() + p * width);
    });
    return make_node(std::move(out), {x}, [lo, width, c](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        nd::Array& g = n.parents[0]->grad_buf();
        const std::int64_t pixels2 = n.value.size() / width;
        for_each_span(pixels2, [&](std::int64_t p) {
            const double* src = n.grad.data() + p * width;
            double* dst = g.data() + p * c + lo;
            for (int j = 0; j < width; ++j) dst[j] += src[j];
        });
    });
}

Var cell_state(const Var& input_gate, const Var& candidate, const Var& forget_gate,
               const Var& c_prev) {
    check_same_shape(input_gate, candidate, "cell_state");
    check_same_shape(forget_gate, c_prev, "cell_state");
    check_same_shape(input_gate, forget_gate, "cell_state");
    nd::Array out = nd::Array::uninitialized(input_gate->value.shape());
    const std::int64_t m = out.size();
    for_each_span(m, [&](std::int64_t i) {
        out[i] = input_gate->value[i] * candidate->value[i] +
                 forget_gate->value[i] * c_prev->value[i];
    });
    return make_node(std::move(out), {input_gate, candidate, forget_gate, c_prev},
                     [](Node& n) {
                         Node& zn = *n.parents[0];
                         Node& gn = *n.parents[1];
                         Node& rn = *n.parents[2];
                         Node& cn = *n.parents[3];
                         const std::int64_t m2 = n.value.size();
                         auto accum = [&](Node& target, const Node& other) {
                             if (!target.needs_grad) return;
                             nd::Array& g = target.grad_buf();
                             for_each_span(m2, [&](std::int64_t i) {
                                 g[i] += n.grad[i] * other.value[i];
                             });
                         };
                         accum(zn, gn);
                         accum(gn, zn);
                         accum(rn, cn);
                         accum(cn, rn);
                     });
}

Var hidden_out(const Var& output_gate, const Var& c) {
    check_same_shape(output_gate, c, "hidden_out");
    nd::Array out = nd::Array::uninitialized(output_gate->value.shape());
    const std::int64_t m = out.size();
    for_each_span(m, [&](std::int64_t i) {
        out[i] = output_gate->value[i] * std::tanh(c->value[i]);
    });
    return make_node(std::move(out), {output_gate, c}, [](Node& n) {
        Node& on = *n.parents[0];
        Node& cn = *n.parents[1];
        const std::int64_t m2 = n.value.size();
        if (on.needs_grad) {
            nd::Array& g = on.grad_buf();
            for_each_span(m2, [&](std::int64_t i) {
                g[i] += n.grad[i] * std::tanh(cn.value[i]);
            });
        }
        if (cn.needs_grad) {
            nd::Array& g = cn.grad_buf();
            for_each_span(m2, [&](std::int64_t i) {
                const double t = std::tanh(cn.value[i]);
                g[i] += n.grad[i] * on.value[i] * (1.0 - t * t);
            });
        }
    });
}

void backward(const Var& loss) {
    if (loss->value.size() != 1)
        throw ShapeError("backward requires a scalar loss, got " + loss->value.shape_str());
    if (!loss->needs_grad) return;

    // Iterative post-order DFS; reversing it yields a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next].get();
            ++next;
            if (parent->needs_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->grad_buf()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop && node->has_grad()) node->backprop(*node);
    }
}

void zero_grad(std::span<const Var> params) {
    for (const auto& p : params) p->clear_grad();
}

}  // namespace mscred::ad
