#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mscred/adam.hpp"
#include "mscred/autodiff.hpp"
#include "mscred/gradcheck.hpp"
#include "mscred/rng.hpp"

using namespace mscred;

namespace {

nd::Array random_array(std::vector<int> shape, Rng& rng) {
    nd::Array a(std::move(shape));
    for (std::int64_t i = 0; i < a.size(); ++i) a[i] = rng.normal();
    return a;
}

// Six nested loops, no shared helpers: the reference convolution with
// ceil(in/stride) output size and bottom/right-heavy padding.
nd::Array naive_conv(const nd::Array& x, const nd::Array& k, int stride) {
    const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
    const int kk = k.dim(0), Cout = k.dim(3);
    const int Ho = (H + stride - 1) / stride;
    const int Wo = (W + stride - 1) / stride;
    const int pad_h = std::max((Ho - 1) * stride + kk - H, 0);
    const int pad_w = std::max((Wo - 1) * stride + kk - W, 0);
    const int pt = pad_h / 2, pl = pad_w / 2;
    nd::Array y({Ho, Wo, Cout});
    for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox)
            for (int co = 0; co < Cout; ++co) {
                double acc = 0.0;
                for (int ky = 0; ky < kk; ++ky)
                    for (int kx = 0; kx < kk; ++kx)
                        for (int ci = 0; ci < Cin; ++ci) {
                            const int iy = oy * stride - pt + ky;
                            const int ix = ox * stride - pl + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += x.at(iy, ix, ci) * k.at(ky, kx, ci, co);
                        }
                y.at(oy, ox, co) = acc;
            }
    return y;
}

double dot_all(const nd::Array& a, const nd::Array& b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

nd::Array transpose_kernel(const nd::Array& k) {
    const int kk = k.dim(0), ci = k.dim(2), co = k.dim(3);
    nd::Array out({kk, kk, co, ci});
    for (int a = 0; a < kk; ++a)
        for (int b = 0; b < kk; ++b)
            for (int i = 0; i < ci; ++i)
                for (int j = 0; j < co; ++j) out.at(a, b, j, i) = k.at(a, b, i, j);
    return out;
}

// Finite-difference check of one op under a sum-of-squares head so the
// loss is scalar: loss = ||f(inputs)||^2.
double fd_check_op(const std::function<ad::Var(const std::vector<ad::Var>&)>& op,
                   std::vector<nd::Array> inputs, std::uint64_t seed = 0) {
    std::vector<std::pair<std::string, ad::Var>> params;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        params.emplace_back("in" + std::to_string(i), ad::parameter(inputs[i]));
    std::vector<ad::Var> vars;
    for (auto& [name, v] : params) vars.push_back(v);

    const auto loss_value = [&] {
        return ad::scalar_value(ad::sum_squares(op(vars)));
    };
    const auto compute = [&] {
        ad::zero_grad(vars);
        ad::backward(ad::sum_squares(op(vars)));
    };
    const auto report = ad::grad_check(loss_value, compute, params, 1e-5, 0, seed);
    return report.max_rel_err;
}

}  // namespace

TEST_CASE("identity 1x1 convolution") {
    Rng rng(1);
    const nd::Array x = random_array({5, 5, 1}, rng);
    nd::Array k({1, 1, 1, 1});
    k[0] = 1.0;
    const auto y = ad::conv2d(ad::constant(x), ad::constant(k), 1);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y->value[i] == x[i]);
}

TEST_CASE("all-ones 3x3 kernel counts overlaps") {
    const nd::Array x = nd::Array::full({5, 5, 1}, 1.0);
    const nd::Array k = nd::Array::full({3, 3, 1, 1}, 1.0);
    const auto y = ad::conv2d(ad::constant(x), ad::constant(k), 1);
    CHECK(y->value.at(2, 2, 0) == 9.0);
    CHECK(y->value.at(0, 0, 0) == 4.0);
    CHECK(y->value.at(0, 4, 0) == 4.0);
    CHECK(y->value.at(4, 4, 0) == 4.0);
    CHECK(y->value.at(0, 2, 0) == 6.0);
}

TEST_CASE("conv2d matches the six-loop reference") {
    Rng rng(2);
    for (const int stride : {1, 2}) {
        const nd::Array x = random_array({8, 8, 2}, rng);
        const nd::Array k = random_array({3, 3, 2, 4}, rng);
        const auto got = ad::conv2d(ad::constant(x), ad::constant(k), stride);
        const nd::Array expect = naive_conv(x, k, stride);
        REQUIRE(got->value.same_shape(expect));
        for (std::int64_t i = 0; i < expect.size(); ++i)
            CHECK(std::abs(got->value[i] - expect[i]) <=
                  1e-12 * std::max(1.0, std::abs(expect[i])));
    }
}

TEST_CASE("conv2d rejects channel mismatch") {
    Rng rng(3);
    const nd::Array x = random_array({4, 4, 3}, rng);
    const nd::Array k = random_array({3, 3, 2, 4}, rng);
    CHECK_THROWS_AS(ad::conv2d(ad::constant(x), ad::constant(k), 1), ShapeError);
}

TEST_CASE("deconv2d identity under 1x1 kernel") {
    Rng rng(4);
    const nd::Array x = random_array({6, 6, 1}, rng);
    nd::Array k({1, 1, 1, 1});
    k[0] = 1.0;
    const auto y = ad::deconv2d(ad::constant(x), ad::constant(k), 1, 6, 6);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y->value[i] == x[i]);
}

TEST_CASE("deconv2d is the adjoint of conv2d") {
    Rng rng(5);
    struct Case {
        int h, c_in, c_out, k, stride;
    };
    // Shapes drawn from the encoder/decoder schedule (n = 30 and toy n = 10).
    for (const Case& tc : {Case{30, 3, 32, 3, 1}, Case{30, 32, 64, 3, 2},
                           Case{15, 64, 128, 2, 2}, Case{8, 128, 256, 2, 2},
                           Case{10, 8, 16, 3, 2}, Case{5, 16, 32, 2, 2},
                           Case{3, 32, 64, 2, 2}}) {
        const nd::Array x = random_array({tc.h, tc.h, tc.c_in}, rng);
        const nd::Array k = random_array({tc.k, tc.k, tc.c_in, tc.c_out}, rng);
        const auto conv = ad::conv2d(ad::constant(x), ad::constant(k), tc.stride);
        const nd::Array y = random_array(conv->value.shape(), rng);
        // <conv(x), y> == <x, deconv(y)> with the shared kernel (axes swapped
        // to the deconv's in/out orientation).
        const auto back = ad::deconv2d(ad::constant(y), ad::constant(transpose_kernel(k)),
                                       tc.stride, tc.h, tc.h);
        const double lhs = dot_all(conv->value, y);
        const double rhs = dot_all(x, back->value);
        CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
    }
}

TEST_CASE("decoder mirror path 4 -> 8 -> 15 succeeds") {
    Rng rng(6);
    const nd::Array x = random_array({4, 4, 8}, rng);
    const nd::Array k1 = random_array({2, 2, 8, 4}, rng);
    const auto up1 = ad::deconv2d(ad::constant(x), ad::constant(k1), 2, 8, 8);
    CHECK(up1->value.dim(0) == 8);
    const nd::Array k2 = random_array({2, 2, 4, 2}, rng);
    const auto up2 = ad::deconv2d(up1, ad::constant(k2), 2, 15, 15);
    CHECK(up2->value.dim(0) == 15);
    CHECK(up2->value.dim(2) == 2);
}

TEST_CASE("unreachable deconv target reports achievable sizes") {
    Rng rng(7);
    const nd::Array x = random_array({4, 4, 2}, rng);
    const nd::Array k = random_array({2, 2, 2, 2}, rng);
    CHECK_THROWS_WITH_AS(ad::deconv2d(ad::constant(x), ad::constant(k), 2, 12, 12),
                         doctest::Contains("7..8"), ShapeError);
}

TEST_CASE("activation fixed points and the published SELU constant") {
    nd::Array z({3});
    z[0] = 0.0;
    z[1] = 1.0;
    z[2] = -1.0;
    const auto v = ad::constant(z);
    CHECK(ad::selu(v)->value[0] == 0.0);
    CHECK(ad::selu(v)->value[1] == doctest::Approx(1.0507009873554805).epsilon(1e-12));
    CHECK(ad::sigmoid(v)->value[0] == 0.5);
    CHECK(ad::tanh_act(v)->value[0] == 0.0);
}

TEST_CASE("activation gradients match finite differences") {
    Rng rng(8);
    const nd::Array x = random_array({4, 5}, rng);
    CHECK(fd_check_op([](const auto& in) { return ad::selu(in[0]); }, {x}) < 1e-6);
    CHECK(fd_check_op([](const auto& in) { return ad::sigmoid(in[0]); }, {x}) < 1e-6);
    CHECK(fd_check_op([](const auto& in) { return ad::tanh_act(in[0]); }, {x}) < 1e-6);
}

TEST_CASE("elementwise_mul identities and gradient") {
    Rng rng(9);
    const nd::Array a = random_array({3, 4}, rng);
    const auto av = ad::constant(a);
    const auto ones = ad::constant(nd::Array::full({3, 4}, 1.0));
    const auto zeros = ad::constant(nd::Array({3, 4}));
    const auto id = ad::elementwise_mul(av, ones);
    const auto zero = ad::elementwise_mul(av, zeros);
    for (std::int64_t i = 0; i < a.size(); ++i) {
        CHECK(id->value[i] == a[i]);
        CHECK(zero->value[i] == 0.0);
    }
    const nd::Array b = random_array({3, 4}, rng);
    CHECK(fd_check_op([](const auto& in) { return ad::elementwise_mul(in[0], in[1]); },
                      {a, b}) < 1e-6);
}

TEST_CASE("softmax of equal scores is uniform") {
    const auto w = ad::softmax(ad::constant(nd::Array::full({5}, 3.7)));
    for (int i = 0; i < 5; ++i) CHECK(w->value[i] == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("softmax closed form (0, ln 3)") {
    nd::Array scores({2});
    scores[0] = 0.0;
    scores[1] = std::log(3.0);
    const auto w = ad::softmax(ad::constant(scores));
    CHECK(w->value[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(w->value[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant and sums to one") {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        nd::Array v({7});
        for (int i = 0; i < 7; ++i) v[i] = 10.0 * rng.normal();
        const double c = 5.0 * rng.normal();
        nd::Array shifted = v;
        for (int i = 0; i < 7; ++i) shifted[i] += c;
        const auto w1 = ad::softmax(ad::constant(v));
        const auto w2 = ad::softmax(ad::constant(shifted));
        double sum = 0.0;
        for (int i = 0; i < 7; ++i) {
            CHECK(w1->value[i] == doctest::Approx(w2->value[i]).epsilon(1e-12));
            CHECK(w1->value[i] > 0.0);
            sum += w1->value[i];
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("backward of sum(x) is all ones; of <x,x> is 2x") {
    Rng rng(11);
    const nd::Array x = random_array({4, 3}, rng);
    {
        auto p = ad::parameter(x);
        auto loss = ad::dot(p, ad::constant(nd::Array::full({4, 3}, 1.0)));
        ad::backward(loss);
        for (std::int64_t i = 0; i < x.size(); ++i) CHECK(p->grad[i] == 1.0);
    }
    {
        auto p = ad::parameter(x);
        ad::backward(ad::sum_squares(p));
        for (std::int64_t i = 0; i < x.size(); ++i)
            CHECK(p->grad[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-14));
    }
}

TEST_CASE("backward rejects a non-scalar loss") {
    auto p = ad::parameter(nd::Array({3}));
    CHECK_THROWS_AS(ad::backward(ad::scale(p, 2.0)), ShapeError);
}

TEST_CASE("repeated evaluation is bitwise identical") {
    Rng rng(12);
    const nd::Array x = random_array({6, 6, 3}, rng);
    const nd::Array k = random_array({3, 3, 3, 8}, rng);
    const auto a = ad::conv2d(ad::constant(x), ad::constant(k), 2);
    const auto b = ad::conv2d(ad::constant(x), ad::constant(k), 2);
    for (std::int64_t i = 0; i < a->value.size(); ++i) CHECK(a->value[i] == b->value[i]);
}

TEST_CASE("conv and deconv gradients match finite differences") {
    Rng rng(13);
    const nd::Array x = random_array({5, 5, 2}, rng);
    const nd::Array k = random_array({3, 3, 2, 3}, rng);
    CHECK(fd_check_op([](const auto& in) { return ad::conv2d(in[0], in[1], 2); }, {x, k}) <
          1e-5);
    const nd::Array y = random_array({3, 3, 3}, rng);
    const nd::Array kd = random_array({3, 3, 3, 2}, rng);
    CHECK(fd_check_op([](const auto& in) { return ad::deconv2d(in[0], in[1], 2, 5, 5); },
                      {y, kd}) < 1e-5);
}

TEST_CASE("gate, cell and attention building blocks pass finite differences") {
    Rng rng(14);
    const nd::Array x = random_array({4, 4, 3}, rng);
    const nd::Array kx = random_array({2, 2, 3, 3}, rng);
    const nd::Array h = random_array({4, 4, 3}, rng);
    const nd::Array kh = random_array({2, 2, 3, 3}, rng);
    const nd::Array c = random_array({4, 4, 3}, rng);
    const nd::Array peep = random_array({4, 4, 3}, rng);
    const nd::Array bias = random_array({3}, rng);
    CHECK(fd_check_op(
              [](const auto& in) {
                  return ad::gate_preact(in[0], in[1], in[2], in[3], in[4], in[5], in[6]);
              },
              {x, kx, h, kh, c, peep, bias}) < 1e-5);
    CHECK(fd_check_op(
              [](const auto& in) {
                  return ad::cell_state(ad::sigmoid(in[0]), ad::tanh_act(in[1]),
                                        ad::sigmoid(in[2]), in[3]);
              },
              {x, h, c, peep}) < 1e-5);
    CHECK(fd_check_op([](const auto& in) { return ad::hidden_out(ad::sigmoid(in[0]), in[1]); },
                      {x, c}) < 1e-5);
    CHECK(fd_check_op(
              [](const auto& in) {
                  const std::vector<ad::Var> maps = {in[0], in[1], in[2]};
                  std::vector<ad::Var> scores;
                  for (const auto& m : maps)
                      scores.push_back(ad::scale(ad::dot(maps.back(), m), 1.0 / 5.0));
                  return ad::weighted_sum(ad::softmax(ad::stack_scalars(scores)), maps);
              },
              {x, h, c}) < 1e-4);
}

TEST_CASE("concat_channels splits gradients back") {
    Rng rng(15);
    const nd::Array a = random_array({3, 3, 2}, rng);
    const nd::Array b = random_array({3, 3, 4}, rng);
    CHECK(fd_check_op([](const auto& in) { return ad::concat_channels(in[0], in[1]); },
                      {a, b}) < 1e-6);
}

TEST_CASE("zero gradients leave Adam parameters unchanged") {
    nd::Array p0 = nd::Array::full({4}, 2.0);
    auto p = ad::parameter(p0);
    std::vector<ad::Var> params{p};
    ad::Adam adam(params, {});
    adam.step(params);  // no grad accumulated
    CHECK(adam.steps() == 1);
    for (int i = 0; i < 4; ++i) CHECK(p->value[i] == 2.0);
}

TEST_CASE("first Adam step moves by about the learning rate regardless of |g|") {
    for (const double g : {1e-4, 1.0, 1e4}) {
        nd::Array param({1});
        param[0] = 0.0;
        nd::Array grad({1});
        grad[0] = g;
        ad::AdamSlot slot;
        ad::adam_step(param, grad, slot, 1, {});
        CHECK(std::abs(param[0]) == doctest::Approx(1e-3).epsilon(1e-3));
        CHECK(param[0] < 0.0);
    }
}

TEST_CASE("Adam drives ||p||^2 down monotonically after warmup") {
    Rng rng(16);
    auto p = ad::parameter(random_array({10}, rng));
    std::vector<ad::Var> params{p};
    ad::Adam adam(params, {.lr = 1e-2});
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 1; step <= 200; ++step) {
        ad::zero_grad(params);
        const auto loss = ad::sum_squares(p);
        const double value = ad::scalar_value(loss);
        ad::backward(loss);
        adam.step(params);
        if (step > 20) CHECK(value < prev);
        prev = value;
    }
    CHECK(prev < 1e-2);
}
