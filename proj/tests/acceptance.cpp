// Acceptance harness: one pass/fail line per criterion.
//
// The default (CI) mode runs every cheap criterion at its stated tolerance
// and uses the reduced toy variant where the criterion itself defines one.
// --full additionally runs the paper-scale end-to-end criteria (5, 6, 7 at
// their full thresholds, seed-averaged over 3 seeds); expect hours of CPU.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mscred/io.hpp"
#include "mscred/pipeline.hpp"
#include "mscred/rng.hpp"

namespace fs = std::filesystem;
using namespace mscred;

namespace {

struct Outcome {
    bool pass = false;
    bool gating = true;
    std::string detail;
};

int failures = 0;

void report(int number, const char* name, const Outcome& outcome, double seconds) {
    std::printf("[%s] criterion %2d (%s): %s  [%.1fs]\n",
                outcome.pass ? "PASS" : (outcome.gating ? "FAIL" : "info"), number, name,
                outcome.detail.c_str(), seconds);
    std::fflush(stdout);
    if (!outcome.pass && outcome.gating) ++failures;
}

std::uint64_t fnv1a_file(const std::string& path) {
    const std::string bytes = io::read_file(path);
    std::uint64_t hash = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

RunConfig in_dir(RunConfig cfg, const fs::path& dir) {
    cfg.data_csv = (dir / "series.csv").string();
    cfg.labels_json = (dir / "labels.json").string();
    cfg.cache_path = (dir / "signatures.bin").string();
    cfg.checkpoint = (dir / "checkpoint.mscred").string();
    cfg.train_log = (dir / "train_log.csv").string();
    cfg.reports_dir = (dir / "reports").string();
    cfg.verbosity = 0;
    return cfg;
}

// --- criterion 1: signature tensors vs a brute-force triple loop ---

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

Outcome criterion_signature_oracle() {
    Rng rng(11);
    const std::vector<int> scales = {10, 30, 60};
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 5 + static_cast<int>(rng.uniform_int(26));
        const std::int64_t T = 150 + static_cast<std::int64_t>(rng.uniform_int(100));
        nd::Array values({n, static_cast<int>(T)});
        for (std::int64_t i = 0; i < values.size(); ++i) values[i] = rng.normal();
        const std::int64_t t =
            60 + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(T - 60)));
        const auto got = sig::signature_tensor(values, t, scales);
        const nd::Array expect = naive_signature(values, t, scales);
        for (std::int64_t i = 0; i < expect.size(); ++i) {
            const double rel = std::abs(got.data[i] - expect[i]) /
                               std::max(std::abs(expect[i]), 1e-30);
            worst = std::max(worst, rel);
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "100 random tensors, max relative error %.2e (tol 1e-12)",
                  worst);
    return {worst < 1e-12, true, buf};
}

// --- criterion 2: full-model gradient check on the toy configuration ---

Outcome criterion_grad_check() {
    RunConfig cfg = preset_toy();
    pipeline::GradCheckSettings settings;
    settings.coords_per_param = 8;
    const auto report = pipeline::run_grad_check(cfg, settings);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "%lld coordinates, max rel. error %.2e at %s (tol 1e-3)",
                  static_cast<long long>(report.coords_checked), report.max_rel_err,
                  report.worst_param.c_str());
    return {report.passed(1e-3), true, buf};
}

// --- criterion 3: encoder/decoder shape schedule for n = 30 ---

Outcome criterion_shapes() {
    model::NetConfig net;
    net.n = 30;
    auto params = model::init_params(net, sig::Standardizer::identity(30), 1);
    Rng rng(3);
    nd::Array input({30, 30, 3});
    for (std::int64_t i = 0; i < input.size(); ++i) input[i] = rng.normal();
    const auto maps = model::encode(ad::constant(input), params);
    const std::vector<std::vector<int>> expect = {
        {30, 30, 32}, {15, 15, 64}, {8, 8, 128}, {4, 4, 256}};
    for (int l = 0; l < 4; ++l)
        if (maps[static_cast<std::size_t>(l)]->value.shape() != expect[static_cast<std::size_t>(l)])
            return {false, true,
                    "encoder layer " + std::to_string(l + 1) + " produced " +
                        maps[static_cast<std::size_t>(l)]->value.shape_str()};
    const auto out = model::decode(maps, params);
    if (out->value.shape() != std::vector<int>{30, 30, 3})
        return {false, true, "decoder returned " + out->value.shape_str()};
    return {true, true, "30x30x32 / 15x15x64 / 8x8x128 / 4x4x256, decoder 30x30x3"};
}

// --- criterion 4: toy training convergence over 3 seeds ---

Outcome criterion_convergence(const fs::path& work) {
    double worst_ratio = 0.0;
    double ratio_sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        RunConfig cfg = in_dir(preset_toy(), work / ("conv_seed" + std::to_string(seed)));
        cfg.seed = seed;
        cfg.train.epochs = 30;
        cfg.train.patience = 30;
        pipeline::run_generate(cfg);
        const auto fit = pipeline::run_train(cfg);
        const double initial = fit.log.front().train_loss;
        double best = initial;
        for (const auto& row : fit.log) best = std::min(best, row.train_loss);
        const double ratio = best / initial;
        worst_ratio = std::max(worst_ratio, ratio);
        ratio_sum += ratio;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "mean best/initial loss %.3f over 3 seeds (need <= 0.20 seed-averaged; "
                  "worst seed %.3f)",
                  ratio_sum / 3.0, worst_ratio);
    return {ratio_sum / 3.0 <= 0.20, true, buf};
}

// --- criteria 5-7 share end-to-end runs ---

struct RunSummary {
    eval::Metrics metrics;
    double recall3 = 0.0;
    bool severity_long_ok = true;   // every duration-90 hit in S also in M and L
    bool severity_short_ok = false; // some duration-30 hit in S but not in L
    int events = 0;
};

RunSummary end_to_end(const RunConfig& cfg) {
    const auto result = pipeline::run_end_to_end(cfg);
    RunSummary s;
    s.metrics = result.eval.metrics;
    s.recall3 = result.eval.recall_at_k;
    s.events = static_cast<int>(result.detect.detection.events.size());

    // Severity pattern vs the injected ground truth.
    const auto matches = eval::match_events(result.detect.detection.events, result.labels,
                                            {.extend_steps = cfg.net.gap});
    for (const auto& m : matches.matches) {
        const auto& ev = result.detect.detection.events[static_cast<std::size_t>(m.event_index)];
        const auto& label = result.labels[static_cast<std::size_t>(m.label_index)];
        const bool in_s = ev.channels.count(0) > 0;
        const bool in_m = ev.channels.count(1) > 0;
        const bool in_l = ev.channels.count(2) > 0;
        if (label.duration == 90 && in_s && !(in_m && in_l)) s.severity_long_ok = false;
        if (label.duration == 30 && in_s && !in_l) s.severity_short_ok = true;
    }
    return s;
}

double random_recall3_expectation(int n, int causes) {
    // Monte-Carlo oracle for the random-ranking baseline.
    Rng rng(99);
    double total = 0.0;
    const int trials = 10000;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<int> perm(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (std::size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
        int hits = 0;
        for (int k = 0; k < 3; ++k)
            if (perm[static_cast<std::size_t>(k)] < causes) ++hits;
        total += static_cast<double>(hits) / causes;
    }
    return total / trials;
}

struct EndToEndOutcomes {
    Outcome c5, c6, c7;
};

EndToEndOutcomes run_ci_variant(const fs::path& work) {
    RunConfig cfg = in_dir(preset_toy(), work / "e2e_toy");
    cfg.seed = 1;
    const RunSummary s = end_to_end(cfg);

    EndToEndOutcomes out;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "toy CI variant: P=%.2f R=%.2f F1=%.2f, %d events (need F1 >= 0.5)",
                  s.metrics.precision, s.metrics.recall, s.metrics.f1, s.events);
    out.c5 = {s.metrics.f1 >= 0.5, true, buf};

    const double random3 = random_recall3_expectation(cfg.synth.n, cfg.causes_per_event);
    std::snprintf(buf, sizeof buf,
                  "toy stand-in: recall@3=%.2f vs random %.2f (full thresholds 0.6 and "
                  "3x0.1 gate under --full)",
                  s.recall3, random3);
    out.c6 = {s.recall3 > random3, false, buf};

    std::snprintf(buf, sizeof buf,
                  "toy stand-in: dur-90 S=>M,L %s; dur-30 S-not-L %s (gates under --full)",
                  s.severity_long_ok ? "holds" : "violated",
                  s.severity_short_ok ? "seen" : "not seen");
    out.c7 = {s.severity_long_ok, false, buf};
    return out;
}

EndToEndOutcomes run_full_variant(const fs::path& work) {
    double f1 = 0.0, precision = 0.0, recall3 = 0.0;
    bool severity_long = true, severity_short = false;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        RunConfig cfg =
            in_dir(preset_paper_synthetic(), work / ("e2e_paper_seed" + std::to_string(seed)));
        cfg.seed = seed;
        const RunSummary s = end_to_end(cfg);
        f1 += s.metrics.f1 / 3.0;
        precision += s.metrics.precision / 3.0;
        recall3 += s.recall3 / 3.0;
        severity_long = severity_long && s.severity_long_ok;
        severity_short = severity_short || s.severity_short_ok;
        std::printf("    seed %llu: P=%.2f R=%.2f F1=%.2f recall@3=%.2f\n",
                    static_cast<unsigned long long>(seed), s.metrics.precision,
                    s.metrics.recall, s.metrics.f1, s.recall3);
        std::fflush(stdout);
    }
    EndToEndOutcomes out;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "paper preset, 3 seeds: mean F1=%.3f (>=0.70), mean P=%.3f (>=0.80)", f1,
                  precision);
    out.c5 = {f1 >= 0.70 && precision >= 0.80, true, buf};

    const double random3 = random_recall3_expectation(30, 3);
    std::snprintf(buf, sizeof buf,
                  "mean recall@3=%.3f (need >= 0.6 and >= 3x random %.3f)", recall3, random3);
    out.c6 = {recall3 >= 0.6 && recall3 >= 3.0 * random3, true, buf};

    std::snprintf(buf, sizeof buf, "dur-90 S=>M,L %s; dur-30 S-not-L %s",
                  severity_long ? "holds" : "violated", severity_short ? "seen" : "not seen");
    out.c7 = {severity_long && severity_short, true, buf};
    return out;
}

// --- criterion 8: ablation ordering on the toy preset ---

Outcome criterion_ablation(const fs::path& work) {
    const model::Ablation order[4] = {model::Ablation::full, model::Ablation::no_attention,
                                      model::Ablation::convlstm_last2,
                                      model::Ablation::convlstm_last1};
    double f1[4] = {};
    std::string detail;
    for (int v = 0; v < 4; ++v) {
        RunConfig cfg = in_dir(preset_toy(),
                               work / ("ablation_" + model::ablation_name(order[v])));
        cfg.seed = 1;
        cfg.net.ablation = order[v];
        const RunSummary s = end_to_end(cfg);
        f1[v] = s.metrics.f1;
        detail += model::ablation_name(order[v]) + "=" +
                  std::to_string(s.metrics.f1).substr(0, 5) + " ";
    }
    const double slack = 0.05;
    const bool ordered = f1[0] >= f1[1] - slack && f1[1] >= f1[2] - slack &&
                         f1[2] >= f1[3] - slack;
    return {ordered, true, detail + "(each step allowed 0.05 slack)"};
}

// --- criterion 9: published metric identities ---

Outcome criterion_metric_identities() {
    auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };

    // (1.00, 0.80) through the event-matching path: 4 of 5 labels found.
    std::vector<ts::AnomalyLabel> labels;
    for (int i = 0; i < 5; ++i) labels.push_back({1000 + 500 * i, 60, {0}});
    std::vector<detect::Event> events;
    for (int i = 0; i < 4; ++i) {
        detect::Event ev;
        ev.start_anchor = 1000 + 500 * i;
        ev.end_anchor = ev.start_anchor + 60;
        events.push_back(ev);
    }
    const auto m1 = eval::event_metrics(events, labels, {.extend_steps = 10});
    const bool first = m1.precision == 1.0 && std::abs(m1.recall - 0.8) < 1e-12 &&
                       round2(m1.f1) == 0.89;

    // (0.85, 0.80) from integer counts: tp=68, fp=12, fn=17.
    const auto m2 = eval::metrics_from_counts(68, 12, 17);
    const bool second = std::abs(m2.precision - 0.85) < 1e-12 &&
                        std::abs(m2.recall - 0.80) < 1e-12 && round2(m2.f1) == 0.82;
    char buf[128];
    std::snprintf(buf, sizeof buf, "(1.00,0.80)->%.2f (want 0.89); (0.85,0.80)->%.2f (want 0.82)",
                  round2(m1.f1), round2(m2.f1));
    return {first && second, true, buf};
}

// --- criterion 10: determinism of the full toy pipeline ---

Outcome criterion_determinism(const fs::path& work) {
    std::uint64_t ckpt[2], det[2];
    for (int run = 0; run < 2; ++run) {
        RunConfig cfg = in_dir(preset_toy(), work / ("determinism_run" + std::to_string(run)));
        cfg.seed = 7;
        pipeline::run_generate(cfg);
        pipeline::run_train(cfg);
        pipeline::run_detect(cfg);
        ckpt[run] = fnv1a_file(cfg.checkpoint);
        det[run] = fnv1a_file(cfg.reports_dir + "/detection.jsonl");
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "checkpoint %016llx/%016llx, detection %016llx/%016llx",
                  static_cast<unsigned long long>(ckpt[0]),
                  static_cast<unsigned long long>(ckpt[1]),
                  static_cast<unsigned long long>(det[0]),
                  static_cast<unsigned long long>(det[1]));
    return {ckpt[0] == ckpt[1] && det[0] == det[1], true, buf};
}

}  // namespace

int main(int argc, char** argv) {
    bool full = false;
    int only = 0;
    fs::path work = fs::temp_directory_path() / "mscred_acceptance";
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--full") == 0) full = true;
        else if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
        else if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) work = argv[++i];
        else {
            std::fprintf(stderr, "usage: %s [--full] [--criterion N] [--workdir DIR]\n", argv[0]);
            return 1;
        }
    }
    fs::create_directories(work);
    std::printf("acceptance mode: %s (workdir %s)\n", full ? "full" : "CI", work.c_str());

    using clock = std::chrono::steady_clock;
    auto timed = [&](int number, const char* name, const std::function<Outcome()>& fn) {
        if (only != 0 && number != only) return;
        const auto t0 = clock::now();
        Outcome outcome;
        try {
            outcome = fn();
        } catch (const std::exception& ex) {
            outcome = {false, true, std::string("exception: ") + ex.what()};
        }
        report(number, name, outcome, std::chrono::duration<double>(clock::now() - t0).count());
    };

    timed(1, "signature oracle", criterion_signature_oracle);
    timed(2, "gradient check", criterion_grad_check);
    timed(3, "shape schedule", criterion_shapes);
    timed(4, "training convergence", [&] { return criterion_convergence(work); });

    if (only == 0 || (only >= 5 && only <= 7)) {
        EndToEndOutcomes e2e;
        const auto t0 = clock::now();
        try {
            e2e = full ? run_full_variant(work) : run_ci_variant(work);
        } catch (const std::exception& ex) {
            const std::string msg = std::string("exception: ") + ex.what();
            e2e.c5 = {false, true, msg};
            e2e.c6 = {false, full, msg};
            e2e.c7 = {false, full, msg};
        }
        const double dt = std::chrono::duration<double>(clock::now() - t0).count();
        if (only == 0 || only == 5) report(5, "end-to-end detection", e2e.c5, dt);
        if (only == 0 || only == 6) report(6, "root cause recall@3", e2e.c6, 0.0);
        if (only == 0 || only == 7) report(7, "severity channels", e2e.c7, 0.0);
    }

    timed(8, "ablation ordering", [&] { return criterion_ablation(work); });
    timed(9, "metric identities", criterion_metric_identities);
    timed(10, "determinism", [&] { return criterion_determinism(work); });

    if (failures == 0) {
        std::printf("acceptance: all gating criteria passed (%s mode)\n", full ? "full" : "CI");
        return 0;
    }
    std::printf("acceptance: %d gating criteria FAILED\n", failures);
    return 1;
}
