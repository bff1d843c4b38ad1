#include "mscred/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mscred/io.hpp"
#include "mscred/rng.hpp"

namespace mscred::model {

std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_attention: return "no_attention";
        case Ablation::convlstm_last2: return "convlstm_last2";
        case Ablation::convlstm_last1: return "convlstm_last1";
    }
    return "full";
}

Ablation ablation_from_name(const std::string& name) {
    if (name == "full") return Ablation::full;
    if (name == "no_attention") return Ablation::no_attention;
    if (name == "convlstm_last2") return Ablation::convlstm_last2;
    if (name == "convlstm_last1") return Ablation::convlstm_last1;
    throw ConfigError("unknown ablation mode '" + name + "'");
}

std::array<int, 5> NetConfig::spatial() const {
    std::array<int, 5> sizes{};
    sizes[0] = n;
    for (int l = 0; l < 4; ++l) {
        const int stride = strides[static_cast<std::size_t>(l)];
        sizes[static_cast<std::size_t>(l + 1)] =
            (sizes[static_cast<std::size_t>(l)] + stride - 1) / stride;
    }
    return sizes;
}

bool NetConfig::convlstm_at(int layer) const {
    switch (ablation) {
        case Ablation::full:
        case Ablation::no_attention: return layer >= 1;
        case Ablation::convlstm_last2: return layer >= 3;
        case Ablation::convlstm_last1: return layer >= 4;
    }
    return true;
}

void NetConfig::validate() const {
    if (n < 2) throw ConfigError("model needs at least 2 series");
    if (scales.empty()) throw ConfigError("model needs at least one scale");
    for (int w : scales)
        if (w < 1) throw ConfigError("scales must be positive");
    for (int c : channels)
        if (c < 1) throw ConfigError("channel widths must be positive");
    if (h < 1) throw ConfigError("history length must be >= 1");
    if (gap < 1) throw ConfigError("segment gap must be >= 1");
    if (!(attention_rescale > 0.0)) throw ConfigError("attention rescale must be > 0");
}

std::uint64_t NetConfig::hash() const {
    std::string repr = "n=" + std::to_string(n) + ";scales=";
    for (int w : scales) repr += std::to_string(w) + ",";
    repr += ";ch=";
    for (int c : channels) repr += std::to_string(c) + ",";
    char buf[64];
    std::snprintf(buf, sizeof buf, ";h=%d;g=%d;chi=%.17g;", h, gap, attention_rescale);
    repr += buf;
    repr += ablation_name(ablation);
    repr += standardize ? ";std=1" : ";std=0";
    std::uint64_t hash = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char ch : repr) {
        hash ^= ch;
        hash *= 1099511628211ULL;
    }
    return hash;
}

std::vector<std::pair<std::string, ad::Var>> ModelParams::named() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    for (int l = 0; l < 4; ++l) {
        const std::string base = "enc" + std::to_string(l + 1);
        out.emplace_back(base + ".kernel", enc_kernel[static_cast<std::size_t>(l)]);
        out.emplace_back(base + ".bias", enc_bias[static_cast<std::size_t>(l)]);
    }
    for (int l = 0; l < 4; ++l) {
        if (!cells[static_cast<std::size_t>(l)]) continue;
        const ConvLstmParams& c = *cells[static_cast<std::size_t>(l)];
        const std::string base = "cell" + std::to_string(l + 1);
        out.emplace_back(base + ".wx_input", c.wx_input);
        out.emplace_back(base + ".wh_input", c.wh_input);
        out.emplace_back(base + ".peep_input", c.peep_input);
        out.emplace_back(base + ".b_input", c.b_input);
        out.emplace_back(base + ".wx_forget", c.wx_forget);
        out.emplace_back(base + ".wh_forget", c.wh_forget);
        out.emplace_back(base + ".peep_forget", c.peep_forget);
        out.emplace_back(base + ".b_forget", c.b_forget);
        out.emplace_back(base + ".wx_cand", c.wx_cand);
        out.emplace_back(base + ".wh_cand", c.wh_cand);
        out.emplace_back(base + ".b_cand", c.b_cand);
        out.emplace_back(base + ".wx_output", c.wx_output);
        out.emplace_back(base + ".wh_output", c.wh_output);
        out.emplace_back(base + ".peep_output", c.peep_output);
        out.emplace_back(base + ".b_output", c.b_output);
    }
    for (int l = 3; l >= 0; --l) {
        const std::string base = "dec" + std::to_string(l + 1);
        out.emplace_back(base + ".kernel", dec_kernel[static_cast<std::size_t>(l)]);
        out.emplace_back(base + ".bias", dec_bias[static_cast<std::size_t>(l)]);
    }
    return out;
}

std::vector<ad::Var> ModelParams::vars() const {
    std::vector<ad::Var> out;
    for (auto& [name, var] : named()) out.push_back(var);
    return out;
}

namespace {

nd::Array normal_init(Rng& rng, std::vector<int> shape, int fan_in) {
    nd::Array a(std::move(shape));
    const double stdev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const std::int64_t m = a.size();
    for (std::int64_t i = 0; i < m; ++i) a[i] = stdev * rng.normal();
    return a;
}

}  // namespace

ModelParams init_params(const NetConfig& net, const sig::Standardizer& norm,
                        std::uint64_t seed) {
    net.validate();
    ModelParams p;
    p.net = net;
    p.norm = norm;
    Rng rng(seed);
    const auto sizes = net.spatial();
    const int s = net.s();

    // Encoder: kernel draws in layer order; biases start at zero.
    int in_c = s;
    for (int l = 0; l < 4; ++l) {
        const int k = NetConfig::kernel_sizes[static_cast<std::size_t>(l)];
        const int out_c = net.channels[static_cast<std::size_t>(l)];
        p.enc_kernel[static_cast<std::size_t>(l)] =
            ad::parameter(normal_init(rng, {k, k, in_c, out_c}, k * k * in_c));
        p.enc_bias[static_cast<std::size_t>(l)] = ad::parameter(nd::Array({out_c}));
        in_c = out_c;
    }

    // ConvLSTM cells for the active layers; gate kernels in the named()
    // order, peepholes and biases zero.
    for (int l = 0; l < 4; ++l) {
        if (!net.convlstm_at(l + 1)) continue;
        const int k = NetConfig::kernel_sizes[static_cast<std::size_t>(l)];
        const int d = net.channels[static_cast<std::size_t>(l)];
        const int nl = sizes[static_cast<std::size_t>(l + 1)];
        const int fan = k * k * d;
        auto kernel = [&] { return ad::parameter(normal_init(rng, {k, k, d, d}, fan)); };
        auto peep = [&] { return ad::parameter(nd::Array({nl, nl, d})); };
        auto bias = [&] { return ad::parameter(nd::Array({d})); };
        ConvLstmParams c;
        c.wx_input = kernel();
        c.wh_input = kernel();
        c.peep_input = peep();
        c.b_input = bias();
        c.wx_forget = kernel();
        c.wh_forget = kernel();
        c.peep_forget = peep();
        c.b_forget = bias();
        c.wx_cand = kernel();
        c.wh_cand = kernel();
        c.b_cand = bias();
        c.wx_output = kernel();
        c.wh_output = kernel();
        c.peep_output = peep();
        c.b_output = bias();
        p.cells[static_cast<std::size_t>(l)] = std::move(c);
    }

    // Decoder, deepest layer first. Skip concatenation doubles the input
    // channels at every layer below the deepest that still carries a
    // recurrent cell; reduced variants lose the skip path along with the
    // cell.
    for (int l = 3; l >= 0; --l) {
        const int k = NetConfig::kernel_sizes[static_cast<std::size_t>(l)];
        const int d_l = net.channels[static_cast<std::size_t>(l)];
        const int in_ch = (l == 3 || !net.convlstm_at(l + 1)) ? d_l : 2 * d_l;
        const int out_ch = l == 0 ? s : net.channels[static_cast<std::size_t>(l - 1)];
        p.dec_kernel[static_cast<std::size_t>(l)] =
            ad::parameter(normal_init(rng, {k, k, in_ch, out_ch}, k * k * in_ch));
        p.dec_bias[static_cast<std::size_t>(l)] = ad::parameter(nd::Array({out_ch}));
    }
    return p;
}

CellState initial_state(const NetConfig& net) {
    CellState st;
    const auto sizes = net.spatial();
    for (int l = 0; l < 4; ++l) {
        const int nl = sizes[static_cast<std::size_t>(l + 1)];
        const int d = net.channels[static_cast<std::size_t>(l)];
        st.hidden[static_cast<std::size_t>(l)] = ad::constant(nd::Array({nl, nl, d}));
        st.cell[static_cast<std::size_t>(l)] = ad::constant(nd::Array({nl, nl, d}));
    }
    return st;
}

std::array<ad::Var, 4> encode(const ad::Var& x, const ModelParams& p) {
    if (x->value.rank() != 3 || x->value.dim(0) != p.net.n || x->value.dim(1) != p.net.n ||
        x->value.dim(2) != p.net.s())
        throw ConfigError("encoder input " + x->value.shape_str() +
                          " does not match the configured n=" + std::to_string(p.net.n) +
                          ", s=" + std::to_string(p.net.s()));
    std::array<ad::Var, 4> maps;
    ad::Var cur = x;
    for (int l = 0; l < 4; ++l) {
        cur = ad::selu(ad::add_channel_bias(
            ad::conv2d(cur, p.enc_kernel[static_cast<std::size_t>(l)],
                       NetConfig::strides[static_cast<std::size_t>(l)]),
            p.enc_bias[static_cast<std::size_t>(l)]));
        maps[static_cast<std::size_t>(l)] = cur;
    }
    return maps;
}

std::pair<ad::Var, ad::Var> convlstm_step(const ad::Var& x, const ad::Var& h_prev,
                                          const ad::Var& c_prev, const ConvLstmParams& cp,
                                          ad::GateKernelsPtr packed) {
    // One wide convolution pair covers all four gates; the peephole terms
    // are added per gate (the output gate peeks at the new cell state).
    const ad::Var pre = ad::conv2d_gates(
        x, h_prev, {cp.wx_input, cp.wx_forget, cp.wx_cand, cp.wx_output},
        {cp.wh_input, cp.wh_forget, cp.wh_cand, cp.wh_output},
        {cp.b_input, cp.b_forget, cp.b_cand, cp.b_output}, std::move(packed));
    const int d = x->value.dim(2);
    const ad::Var input_gate = ad::sigmoid(ad::add(
        ad::slice_channels(pre, 0, d), ad::elementwise_mul(cp.peep_input, c_prev)));
    const ad::Var forget_gate = ad::sigmoid(ad::add(
        ad::slice_channels(pre, d, d), ad::elementwise_mul(cp.peep_forget, c_prev)));
    const ad::Var candidate = ad::tanh_act(ad::slice_channels(pre, 2 * d, d));
    const ad::Var c_new = ad::cell_state(input_gate, candidate, forget_gate, c_prev);
    const ad::Var output_gate = ad::sigmoid(ad::add(
        ad::slice_channels(pre, 3 * d, d), ad::elementwise_mul(cp.peep_output, c_new)));
    return {ad::hidden_out(output_gate, c_new), c_new};
}

std::pair<ad::Var, std::vector<double>> attention(const std::vector<ad::Var>& history,
                                                  double rescale) {
    if (history.empty()) throw ShapeError("attention needs a non-empty history");
    const ad::Var& last = history.back();
    std::vector<ad::Var> scores;
    scores.reserve(history.size());
    for (const auto& hmap : history)
        scores.push_back(ad::scale(ad::dot(last, hmap), 1.0 / rescale));
    const ad::Var weights = ad::softmax(ad::stack_scalars(scores));
    std::vector<double> weight_values(static_cast<std::size_t>(weights->value.size()));
    for (std::size_t i = 0; i < weight_values.size(); ++i)
        weight_values[i] = weights->value[static_cast<std::int64_t>(i)];
    return {ad::weighted_sum(weights, history), std::move(weight_values)};
}

ad::Var decode(const std::array<ad::Var, 4>& features, const ModelParams& p) {
    const auto sizes = p.net.spatial();
    ad::Var cur;
    for (int l = 3; l >= 0; --l) {
        // Layers whose cell was ablated contribute no skip features.
        const bool skip = l < 3 && p.net.convlstm_at(l + 1);
        const ad::Var input =
            l == 3 ? features[3]
                   : (skip ? ad::concat_channels(features[static_cast<std::size_t>(l)], cur)
                           : cur);
        const int target = sizes[static_cast<std::size_t>(l)];
        cur = ad::selu(ad::add_channel_bias(
            ad::deconv2d(input, p.dec_kernel[static_cast<std::size_t>(l)],
                         NetConfig::strides[static_cast<std::size_t>(l)], target, target),
            p.dec_bias[static_cast<std::size_t>(l)]));
    }
    return cur;
}

ad::Var reconstruction_loss(const ad::Var& target, const ad::Var& reconstruction) {
    if (!target->value.same_shape(reconstruction->value))
        throw ShapeError("loss: target and reconstruction shapes differ");
    return ad::sum_squares(ad::sub(reconstruction, target));
}

CellCaches make_cell_caches(const ModelParams& params) {
    CellCaches caches;
    for (int l = 0; l < 4; ++l) {
        if (!params.cells[static_cast<std::size_t>(l)]) continue;
        const ConvLstmParams& c = *params.cells[static_cast<std::size_t>(l)];
        caches.packed[static_cast<std::size_t>(l)] = ad::pack_gate_kernels(
            {c.wx_input, c.wx_forget, c.wx_cand, c.wx_output},
            {c.wh_input, c.wh_forget, c.wh_cand, c.wh_output});
    }
    return caches;
}

ForwardResult forward(std::span<const nd::Array* const> sequence, const ModelParams& p,
                      const CellCaches* caches) {
    if (sequence.size() != static_cast<std::size_t>(p.net.h))
        throw ShapeError("forward expects a sequence of h=" + std::to_string(p.net.h) +
                         " tensors, got " + std::to_string(sequence.size()));
    CellState state = initial_state(p.net);
    std::array<std::vector<ad::Var>, 4> histories;
    std::array<ad::Var, 4> last_enc;

    for (std::size_t step = 0; step < sequence.size(); ++step) {
        const ad::Var x0 = ad::constant(*sequence[step]);
        last_enc = encode(x0, p);
        for (int l = 0; l < 4; ++l) {
            if (!p.net.convlstm_at(l + 1)) continue;
            auto [h_new, c_new] =
                convlstm_step(last_enc[static_cast<std::size_t>(l)],
                              state.hidden[static_cast<std::size_t>(l)],
                              state.cell[static_cast<std::size_t>(l)],
                              *p.cells[static_cast<std::size_t>(l)],
                              caches ? caches->packed[static_cast<std::size_t>(l)] : nullptr);
            state.hidden[static_cast<std::size_t>(l)] = h_new;
            state.cell[static_cast<std::size_t>(l)] = c_new;
            histories[static_cast<std::size_t>(l)].push_back(h_new);
        }
    }

    ForwardResult result;
    std::array<ad::Var, 4> features;
    for (int l = 0; l < 4; ++l) {
        if (!p.net.convlstm_at(l + 1)) {
            // No cell, no skip feature: the decoder passes straight through.
            continue;
        } else if (p.net.attention_on()) {
            auto [refined, weights] = attention(histories[static_cast<std::size_t>(l)],
                                                p.net.attention_rescale);
            features[static_cast<std::size_t>(l)] = refined;
            result.attention_weights[static_cast<std::size_t>(l)] = std::move(weights);
        } else {
            features[static_cast<std::size_t>(l)] =
                histories[static_cast<std::size_t>(l)].back();
        }
    }
    result.reconstruction = decode(features, p);
    return result;
}

nd::Array reconstruct(std::span<const nd::Array* const> sequence, const ModelParams& p) {
    return forward(sequence, p).reconstruction->value;
}

double mean_loss(const sig::SignatureStore& store, std::span<const std::int64_t> anchors,
                 const ModelParams& params) {
    if (anchors.empty()) return 0.0;
    const CellCaches caches = make_cell_caches(params);
    double total = 0.0;
    for (const std::int64_t anchor : anchors) {
        const auto seq = store.sequence(anchor);
        const ForwardResult fw = forward(seq, params, &caches);
        total += ad::scalar_value(
            reconstruction_loss(ad::constant(store.tensor_at(anchor)), fw.reconstruction));
    }
    return total / static_cast<double>(anchors.size());
}

FitResult fit(const sig::SignatureStore& store, std::span<const std::int64_t> train_anchors,
              std::span<const std::int64_t> valid_anchors, ModelParams& params,
              const TrainConfig& cfg) {
    if (train_anchors.empty()) throw DataError("training needs at least one anchor");
    if (cfg.batch < 1 || cfg.epochs < 1) throw ConfigError("bad training configuration");
    using clock = std::chrono::steady_clock;

    const std::vector<ad::Var> vars = params.vars();
    ad::Adam adam(vars, {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});
    Rng rng(cfg.seed);

    FitResult result;
    const auto t0 = clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    result.log.push_back({0, mean_loss(store, train_anchors, params),
                          mean_loss(store, valid_anchors, params), elapsed()});
    if (cfg.on_epoch) cfg.on_epoch(result.log.back());

    std::vector<std::int64_t> order(train_anchors.begin(), train_anchors.end());
    std::vector<nd::Array> best_values;
    double best_valid = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stale = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Fisher-Yates reshuffle each epoch.
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j =
                static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(i)));
            std::swap(order[i - 1], order[j]);
        }

        double epoch_loss = 0.0;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t batch_end =
                std::min(done + static_cast<std::size_t>(cfg.batch), order.size());
            const CellCaches caches = make_cell_caches(params);
            for (std::size_t i = done; i < batch_end; ++i) {
                const auto seq = store.sequence(order[i]);
                const ForwardResult fw = forward(seq, params, &caches);
                const ad::Var loss = reconstruction_loss(
                    ad::constant(store.tensor_at(order[i])), fw.reconstruction);
                epoch_loss += ad::scalar_value(loss);
                ad::backward(loss);
            }
            adam.step(vars);
            done = batch_end;
        }
        epoch_loss /= static_cast<double>(order.size());
        if (!std::isfinite(epoch_loss))
            throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                               " (non-finite loss); lower the learning rate");

        const double valid_loss = mean_loss(store, valid_anchors, params);
        result.log.push_back({epoch, epoch_loss, valid_loss, elapsed()});
        if (cfg.on_epoch) cfg.on_epoch(result.log.back());

        if (valid_anchors.empty() || valid_loss < best_valid) {
            best_valid = valid_anchors.empty() ? epoch_loss : valid_loss;
            best_epoch = epoch;
            stale = 0;
            best_values.clear();
            for (const auto& v : vars) best_values.push_back(v->value);
        } else if (++stale >= cfg.patience) {
            break;
        }
    }

    if (!best_values.empty())
        for (std::size_t i = 0; i < vars.size(); ++i) vars[i]->value = best_values[i];
    result.best_epoch = best_epoch;
    result.best_valid = best_valid;
    return result;
}

// --- Checkpoint serialization ---

namespace {

constexpr char kMagic[4] = {'M', 'S', 'C', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size()) throw DataError("truncated checkpoint");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put<std::uint32_t>(buf, kVersion);
    put<std::uint64_t>(buf, params.net.hash());
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.net.n));
    put<std::uint8_t>(buf, params.norm.enabled ? 1 : 0);
    for (double v : params.norm.mean) put<double>(buf, v);
    for (double v : params.norm.stdev) put<double>(buf, v);

    const auto named = params.named();
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, var] : named) {
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
        buf.append(name);
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(var->value.rank()));
        for (int d : var->value.shape()) put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
        buf.append(reinterpret_cast<const char*>(var->value.data()),
                   static_cast<std::size_t>(var->value.size()) * sizeof(double));
    }
    io::atomic_write(path, buf);
}

ModelParams load_checkpoint(const std::string& path, const NetConfig& expected) {
    const std::string buf = io::read_file(path);
    std::size_t off = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw DataError(path + ": not a model checkpoint");
    off = 4;
    const auto version = take<std::uint32_t>(buf, off);
    if (version != kVersion)
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
    const auto hash = take<std::uint64_t>(buf, off);
    if (hash != expected.hash())
        throw ConfigError(path + ": checkpoint was built for a different configuration "
                                 "(config hash mismatch)");
    const auto n = take<std::uint32_t>(buf, off);
    if (n != static_cast<std::uint32_t>(expected.n))
        throw ConfigError(path + ": checkpoint stores n=" + std::to_string(n) +
                          ", expected n=" + std::to_string(expected.n));

    sig::Standardizer norm;
    norm.enabled = take<std::uint8_t>(buf, off) != 0;
    norm.mean.resize(n);
    norm.stdev.resize(n);
    for (auto& v : norm.mean) v = take<double>(buf, off);
    for (auto& v : norm.stdev) v = take<double>(buf, off);

    ModelParams params = init_params(expected, norm, 0);
    auto named = params.named();
    const auto count = take<std::uint32_t>(buf, off);
    if (count != named.size())
        throw DataError(path + ": checkpoint has " + std::to_string(count) +
                        " arrays, expected " + std::to_string(named.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = take<std::uint32_t>(buf, off);
        if (off + name_len > buf.size()) throw DataError(path + ": truncated checkpoint");
        const std::string name(buf.data() + off, name_len);
        off += name_len;
        if (name != named[i].first)
            throw DataError(path + ": unexpected array '" + name + "', expected '" +
                            named[i].first + "'");
        const auto rank = take<std::uint32_t>(buf, off);
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<int>(take<std::uint32_t>(buf, off)));
        nd::Array& dst = named[i].second->value;
        if (shape != dst.shape())
            throw DataError(path + ": array '" + name + "' has unexpected shape");
        const std::size_t payload = static_cast<std::size_t>(dst.size()) * sizeof(double);
        if (off + payload > buf.size()) throw DataError(path + ": truncated checkpoint");
        std::memcpy(dst.data(), buf.data() + off, payload);
        off += payload;
    }
    return params;
}

void write_train_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::string buf = "epoch,train_loss,valid_loss,wall_seconds\n";
    char line[160];
    for (const auto& row : log) {
        std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%.3f\n", row.epoch, row.train_loss,
                      row.valid_loss, row.wall_seconds);
        buf += line;
    }
    io::atomic_write(path, buf);
}

}  // namespace mscred::model
