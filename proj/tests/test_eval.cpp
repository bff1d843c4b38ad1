#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mscred/eval.hpp"
#include "mscred/rng.hpp"

using namespace mscred;

namespace {

detect::Event span(std::int64_t start, std::int64_t end) {
    detect::Event ev;
    ev.start_anchor = start;
    ev.end_anchor = end;
    ev.channels = {0};
    return ev;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

TEST_CASE("published (precision, recall) pairs reproduce the published F1") {
    // Pre 1.00 / Rec 0.80 -> F1 0.888... -> 0.89 at two decimals.
    {
        const auto m = eval::metrics_from_counts(4, 0, 1);
        CHECK(m.precision == doctest::Approx(1.0));
        CHECK(m.recall == doctest::Approx(0.8));
        CHECK(round2(m.f1) == doctest::Approx(0.89));
    }
    // Pre 0.85 / Rec 0.80 -> F1 ~ 0.824 -> 0.82.
    {
        const auto m = eval::metrics_from_counts(17, 3, 4);  // 17/20, 17/21 ~ 0.85/0.8095
        const double p = 0.85, r = 0.80;
        const double f1 = 2 * p * r / (p + r);
        CHECK(round2(f1) == doctest::Approx(0.82));
        CHECK(m.precision == doctest::Approx(0.85));
    }
}

TEST_CASE("empty predictions against labels give P=R=F1=0") {
    std::vector<ts::AnomalyLabel> labels = {{100, 30, {1}}, {500, 60, {2}}};
    const auto m = eval::event_metrics({}, labels, {.extend_steps = 10});
    CHECK(m.precision == 0.0);
    CHECK(m.recall == 0.0);
    CHECK(m.f1 == 0.0);
    CHECK(m.fn == 2);
}

TEST_CASE("overlap matching with one-gap extension") {
    std::vector<ts::AnomalyLabel> labels = {{1000, 30, {1}}, {2000, 60, {2}}};
    // First event overlaps only through the 10-step extension.
    std::vector<detect::Event> events = {span(1030, 1060), span(2010, 2030), span(5000, 5050)};
    const auto m = eval::event_metrics(events, labels, {.extend_steps = 10});
    CHECK(m.tp == 2);
    CHECK(m.fp == 1);
    CHECK(m.fn == 0);
    CHECK(m.precision == doctest::Approx(2.0 / 3.0));
    CHECK(m.recall == doctest::Approx(1.0));
}

TEST_CASE("each label matches at most one prediction") {
    std::vector<ts::AnomalyLabel> labels = {{1000, 60, {1}}};
    std::vector<detect::Event> events = {span(990, 1010), span(1020, 1040)};
    const auto m = eval::event_metrics(events, labels, {.extend_steps = 10});
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.fn == 0);
}

TEST_CASE("event metrics are invariant to event order") {
    Rng rng(5);
    std::vector<ts::AnomalyLabel> labels;
    for (int i = 0; i < 6; ++i) labels.push_back({1000 + 400 * i, 50, {i}});
    std::vector<detect::Event> events;
    for (int i = 0; i < 8; ++i) {
        const std::int64_t s = 900 + 330 * i;
        events.push_back(span(s, s + 40));
    }
    const auto base = eval::event_metrics(events, labels, {.extend_steps = 10});
    for (int trial = 0; trial < 10; ++trial) {
        for (std::size_t i = events.size(); i > 1; --i)
            std::swap(events[i - 1], events[rng.uniform_int(i)]);
        const auto shuffled = eval::event_metrics(events, labels, {.extend_steps = 10});
        CHECK(shuffled.tp == base.tp);
        CHECK(shuffled.fp == base.fp);
        CHECK(shuffled.fn == base.fn);
    }
}

TEST_CASE("metrics stay in [0,1] and satisfy the F1 identity") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const int tp = static_cast<int>(rng.uniform_int(10));
        const int fp = static_cast<int>(rng.uniform_int(10));
        const int fn = static_cast<int>(rng.uniform_int(10));
        const auto m = eval::metrics_from_counts(tp, fp, fn);
        CHECK(m.precision >= 0.0);
        CHECK(m.precision <= 1.0);
        CHECK(m.recall >= 0.0);
        CHECK(m.recall <= 1.0);
        CHECK(m.f1 >= 0.0);
        CHECK(m.f1 <= 1.0);
        if (m.precision + m.recall > 0.0)
            CHECK(m.f1 == doctest::Approx(2 * m.precision * m.recall /
                                          (m.precision + m.recall)));
        else
            CHECK(m.f1 == 0.0);
    }
}

TEST_CASE("recall@k boundary cases") {
    CHECK(eval::recall_at_k({{1, 4, 7, 2}}, {{1, 4, 7}}, 3) == doctest::Approx(1.0));
    CHECK(eval::recall_at_k({{9, 8, 6}}, {{1, 4, 7}}, 3) == doctest::Approx(0.0));
    // Non-decreasing in k.
    const std::vector<std::vector<int>> rankings = {{3, 1, 4, 1, 5, 9, 2, 6}};
    const std::vector<std::vector<int>> causes = {{9, 2, 4}};
    double prev = 0.0;
    for (int k = 1; k <= 8; ++k) {
        const double r = eval::recall_at_k(rankings, causes, k);
        CHECK(r >= prev);
        prev = r;
    }
}

// Monte-Carlo oracle: ranking 30 series uniformly at random and taking the
// top 3 hits 3 of 3 causes with expectation 3/30 = 0.1.
TEST_CASE("random rankings give recall@3 near 0.1 over 10000 trials") {
    Rng rng(11);
    const int n = 30;
    std::vector<std::vector<int>> rankings, causes;
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (std::size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
        rankings.push_back(perm);
        std::vector<int> cs;
        std::vector<int> pool(n);
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        for (int k = 0; k < 3; ++k) {
            const auto j = k + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - k)));
            std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
            cs.push_back(pool[static_cast<std::size_t>(k)]);
        }
        causes.push_back(cs);
    }
    const double r3 = eval::recall_at_k(rankings, causes, 3);
    CHECK(r3 == doctest::Approx(0.1).epsilon(0.15));
}

TEST_CASE("sweep csv columns follow the format contract") {
    std::vector<eval::SweepRow> rows;
    eval::SweepRow a;
    a.lambda = 0.3;
    a.metrics = eval::metrics_from_counts(4, 0, 1);
    a.wall_seconds = 12.5;
    rows.push_back(a);
    eval::SweepRow b;
    b.lambda = 0.45;
    b.failed = true;
    rows.push_back(b);
    const std::string path = "/tmp/mscred_sweep_test.csv";
    eval::write_sweep_csv(rows, path);

    std::ifstream in(path);
    std::string header, line1, line2;
    std::getline(in, header);
    std::getline(in, line1);
    std::getline(in, line2);
    CHECK(header == "lambda,precision,recall,f1,wall_seconds");
    CHECK(line1.substr(0, 7) == "0.3000,");
    CHECK(line2.find("nan") != std::string::npos);
    // Row count equals the lambda count.
    std::string extra;
    CHECK_FALSE(static_cast<bool>(std::getline(in, extra)));
}
