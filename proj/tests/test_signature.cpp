#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mscred/rng.hpp"
#include "mscred/signature.hpp"
#include "mscred/timeseries.hpp"

using namespace mscred;

namespace {

// Brute-force reference: the bare triple loop over pairs, scales and
// window offsets, written without any of the library helpers.
nd::Array naive_signature(const nd::Array& values, std::int64_t t,
                          const std::vector<int>& scales) {
    const int n = values.dim(0);
    const std::int64_t T = values.dim(1);
    const int s = static_cast<int>(scales.size());
    nd::Array out({n, n, s});
    for (int c = 0; c < s; ++c) {
        const int w = scales[static_cast<std::size_t>(c)];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int d = 0; d <= w; ++d)
                    acc += values[static_cast<std::int64_t>(i) * T + (t - d)] *
                           values[static_cast<std::int64_t>(j) * T + (t - d)];
                out.at(i, j, c) = acc / w;
            }
    }
    return out;
}

nd::Array random_series(int n, std::int64_t T, std::uint64_t seed) {
    Rng rng(seed);
    nd::Array values({n, static_cast<int>(T)});
    for (std::int64_t i = 0; i < values.size(); ++i) values[i] = rng.normal();
    return values;
}

}  // namespace

TEST_CASE("pair correlation of all-ones windows") {
    std::vector<double> ones(11, 1.0);
    CHECK(sig::pair_correlation(ones, ones, 10.0) == doctest::Approx(1.1).epsilon(1e-15));
}

TEST_CASE("pair correlation annihilates on a zero window") {
    std::vector<double> ones(11, 1.0), zeros(11, 0.0);
    CHECK(sig::pair_correlation(ones, zeros, 10.0) == 0.0);
}

TEST_CASE("pair correlation matches a naive loop on random windows") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(11), b(11);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        double expect = 0.0;
        for (int i = 0; i < 11; ++i) expect += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
        expect /= 10.0;
        const double got = sig::pair_correlation(a, b, 10.0);
        CHECK(std::abs(got - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
    }
}

TEST_CASE("pair correlation rejects mismatched windows") {
    std::vector<double> a(11, 1.0), b(10, 1.0);
    CHECK_THROWS_AS(sig::pair_correlation(a, b, 10.0), ShapeError);
}

TEST_CASE("constant-ones series gives (w+1)/w per channel") {
    nd::Array values = nd::Array::full({4, 100}, 1.0);
    const auto tensor = sig::signature_tensor(values, 80, {10, 30, 60});
    for (int c = 0; c < 3; ++c) {
        const double w = std::vector<int>{10, 30, 60}[static_cast<std::size_t>(c)];
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(tensor.data.at(i, j, c) == doctest::Approx((w + 1) / w).epsilon(1e-14));
    }
}

TEST_CASE("scaling one series scales its row and column bilinearly") {
    nd::Array values = random_series(5, 200, 17);
    const auto base = sig::signature_tensor(values, 150, {10, 30});
    const double a = 2.5;
    nd::Array scaled = values;
    for (std::int64_t t = 0; t < 200; ++t) scaled.at(2, static_cast<int>(t)) *= a;
    const auto got = sig::signature_tensor(scaled, 150, {10, 30});
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) {
                double factor = 1.0;
                if (i == 2) factor *= a;
                if (j == 2) factor *= a;
                CHECK(got.data.at(i, j, c) ==
                      doctest::Approx(factor * base.data.at(i, j, c)).epsilon(1e-12));
            }
}

TEST_CASE("signature tensor matches the brute-force triple loop") {
    const nd::Array values = random_series(30, 200, 23);
    const auto got = sig::signature_tensor(values, 100, {10, 30, 60});
    const nd::Array expect = naive_signature(values, 100, {10, 30, 60});
    for (std::int64_t i = 0; i < expect.size(); ++i) {
        const double denom = std::max(1e-30, std::abs(expect[i]));
        CHECK(std::abs(got.data[i] - expect[i]) / denom <= 1e-12);
    }
}

TEST_CASE("signature tensor demands left context") {
    const nd::Array values = random_series(3, 100, 5);
    CHECK_THROWS_AS(sig::signature_tensor(values, 59, {10, 30, 60}), ContextError);
    try {
        sig::signature_tensor(values, 59, {10, 30, 60});
    } catch (const ContextError& e) {
        CHECK(e.first_valid_step == 60);
    }
}

TEST_CASE("tensors are exactly symmetric") {
    const nd::Array values = random_series(12, 300, 31);
    const auto tensor = sig::signature_tensor(values, 250, {10, 30, 60});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 12; ++i)
            for (int j = 0; j < 12; ++j)
                CHECK(tensor.data.at(i, j, c) == tensor.data.at(j, i, c));
}

TEST_CASE("perturbing one point changes only the touched rows and channels") {
    const nd::Array values = random_series(6, 300, 41);
    const auto base = sig::signature_tensor(values, 200, {10, 30, 60});
    nd::Array bumped = values;
    bumped.at(3, 195) += 5.0;  // inside w=10 window (distance 5) and all larger ones
    const auto got = sig::signature_tensor(bumped, 200, {10, 30, 60});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) {
                if (i == 3 || j == 3) continue;
                CHECK(got.data.at(i, j, c) == base.data.at(i, j, c));
            }
    // A point 45 steps back only lands in the w=60 window.
    nd::Array far = values;
    far.at(3, 155) += 5.0;
    const auto got_far = sig::signature_tensor(far, 200, {10, 30, 60});
    for (int i = 0; i < 6; ++i) {
        CHECK(got_far.data.at(3, i, 0) == base.data.at(3, i, 0));
        CHECK(got_far.data.at(3, i, 1) == base.data.at(3, i, 1));
    }
    CHECK(got_far.data.at(3, 3, 2) != base.data.at(3, 3, 2));
}

TEST_CASE("permuting series permutes rows and columns identically") {
    const nd::Array values = random_series(5, 150, 53);
    const std::vector<int> perm = {3, 0, 4, 1, 2};
    nd::Array permuted({5, 150});
    for (int i = 0; i < 5; ++i)
        for (int t = 0; t < 150; ++t)
            permuted.at(i, t) = values.at(perm[static_cast<std::size_t>(i)], t);
    const auto base = sig::signature_tensor(values, 120, {10, 30});
    const auto got = sig::signature_tensor(permuted, 120, {10, 30});
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                CHECK(got.data.at(i, j, c) ==
                      base.data.at(perm[static_cast<std::size_t>(i)],
                                   perm[static_cast<std::size_t>(j)], c));
}

TEST_CASE("h=1 sequence is a single tensor at t") {
    const nd::Array values = random_series(4, 200, 61);
    const auto seq = sig::signature_sequence(values, 150, {10, 30}, 1, 10);
    REQUIRE(seq.h() == 1);
    const auto single = sig::signature_tensor(values, 150, {10, 30});
    for (std::int64_t i = 0; i < single.data.size(); ++i)
        CHECK(seq.tensors[0].data[i] == single.data[i]);
}

TEST_CASE("h=5 g=10 anchors at t=100 are 60..100") {
    const nd::Array values = random_series(4, 200, 67);
    const auto seq = sig::signature_sequence(values, 100, {10, 30, 60}, 5, 10);
    REQUIRE(seq.h() == 5);
    for (int k = 0; k < 5; ++k)
        CHECK(seq.tensors[static_cast<std::size_t>(k)].anchor == 60 + 10 * k);
    // Every member equals an independently recomputed tensor.
    for (int k = 0; k < 5; ++k) {
        const nd::Array expect = naive_signature(values, 60 + 10 * k, {10, 30, 60});
        for (std::int64_t i = 0; i < expect.size(); ++i)
            CHECK(seq.tensors[static_cast<std::size_t>(k)].data[i] ==
                  doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("sequence without history raises a context error") {
    const nd::Array values = random_series(4, 200, 71);
    CHECK_THROWS_AS(sig::signature_sequence(values, 99, {10, 30, 60}, 5, 10), ContextError);
}

TEST_CASE("anchor schedule covers the paper test split") {
    const auto anchors = sig::anchor_schedule({10000, 20000}, {10, 30, 60}, 5, 10);
    REQUIRE(anchors.size() == 1000);
    CHECK(anchors.front() == 10000);
    CHECK(anchors.back() == 19990);
    for (std::size_t i = 1; i < anchors.size(); ++i) CHECK(anchors[i] - anchors[i - 1] == 10);
}

TEST_CASE("train schedule starts once context is available") {
    const auto anchors = sig::anchor_schedule({0, 8000}, {10, 30, 60}, 5, 10);
    CHECK(anchors.front() == 100);  // 60 window + 4 * 10 history
    CHECK(anchors.back() == 7990);
}

TEST_CASE("schedule length matches a counting loop on random specs") {
    Rng rng(83);
    for (int trial = 0; trial < 200; ++trial) {
        const std::int64_t lo = static_cast<std::int64_t>(rng.uniform_int(500));
        const std::int64_t hi = lo + 1 + static_cast<std::int64_t>(rng.uniform_int(900));
        const int gap = 1 + static_cast<int>(rng.uniform_int(20));
        const int h = 1 + static_cast<int>(rng.uniform_int(5));
        const std::vector<int> scales = {5, 1 + static_cast<int>(rng.uniform_int(60))};
        const auto anchors = sig::anchor_schedule({lo, hi}, scales, h, gap);
        // Independent count.
        std::size_t expect = 0;
        const std::int64_t first_ok = sig::first_valid_anchor(scales, h, gap);
        for (std::int64_t a = lo; a < hi; a += gap)
            if (a >= first_ok) ++expect;
        CHECK(anchors.size() == expect);
        if (!anchors.empty()) {
            CHECK(anchors.front() >= first_ok);
            CHECK((anchors.front() - lo) % gap == 0);
        }
    }
}

TEST_CASE("empty schedule is an empty result, not an error") {
    const auto anchors = sig::anchor_schedule({0, 50}, {10, 30, 60}, 5, 10);
    CHECK(anchors.empty());
}

TEST_CASE("standardizer normalizes on the fitted range") {
    ts::SynthConfig cfg;
    cfg.n = 6;
    cfg.T = 2000;
    cfg.seed = 5;
    const auto s = ts::generate_synthetic(cfg);
    const auto st = sig::Standardizer::fit(s.values, {0, 800});
    const nd::Array z = st.apply(s.values);
    for (int i = 0; i < 6; ++i) {
        double mean = 0.0, var = 0.0;
        for (int t = 0; t < 800; ++t) mean += z.at(i, t);
        mean /= 800;
        for (int t = 0; t < 800; ++t) var += (z.at(i, t) - mean) * (z.at(i, t) - mean);
        var /= 800;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("signature store assembles sequences and round-trips its cache") {
    const nd::Array values = random_series(6, 400, 91);
    const auto targets = sig::anchor_schedule({100, 400}, {10, 30, 60}, 5, 10);
    sig::SignatureStore store(values, targets, {10, 30, 60}, 5, 10);

    const auto seq = store.sequence(200);
    REQUIRE(seq.size() == 5);
    const nd::Array expect = naive_signature(values, 160, {10, 30, 60});
    for (std::int64_t i = 0; i < expect.size(); ++i)
        CHECK((*seq[0])[i] == doctest::Approx(expect[i]).epsilon(1e-12));

    const std::string path =
        (std::filesystem::temp_directory_path() / "mscred_store.bin").string();
    store.save(path);
    const auto loaded = sig::SignatureStore::load(path);
    CHECK(loaded.n() == 6);
    CHECK(loaded.h() == 5);
    CHECK(loaded.gap() == 10);
    CHECK(loaded.anchors() == store.anchors());
    for (std::int64_t a : store.anchors()) {
        const auto& t1 = store.tensor_at(a);
        const auto& t2 = loaded.tensor_at(a);
        for (std::int64_t i = 0; i < t1.size(); ++i) CHECK(t1[i] == t2[i]);
    }
}
