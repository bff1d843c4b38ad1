#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mscred/config.hpp"
#include "mscred/detect.hpp"
#include "mscred/eval.hpp"
#include "mscred/gradcheck.hpp"
#include "mscred/model.hpp"
#include "mscred/signature.hpp"

namespace mscred::pipeline {

/// Applies cfg.threads / MSCRED_THREADS to the compute kernels.
void apply_threads(const RunConfig& cfg);

/// generate: synthetic series with anomalies injected into the test
/// split, written as CSV (with header) plus a labels JSON file.
void run_generate(const RunConfig& cfg);

struct Prepared {
    ts::MultivariateSeries series;
    std::vector<ts::AnomalyLabel> labels;
    sig::Standardizer norm;
    sig::SignatureStore store;
    std::vector<std::int64_t> train_anchors, valid_anchors, test_anchors;
};

/// Loads the generated data and builds (or loads from cache) the
/// signature store covering all three splits.
Prepared prepare(const RunConfig& cfg, bool use_cache = true);

/// build-signatures: writes the signature cache file.
void run_build_signatures(const RunConfig& cfg);

/// train: fits the model, writes checkpoint and training log; returns the
/// fit summary.
model::FitResult run_train(const RunConfig& cfg);

struct DetectOutput {
    detect::ResidualReport report;  // test split
    detect::DetectionResult detection;
    std::vector<double> theta;
};

/// detect: reconstructs valid+test anchors, calibrates theta/tau on the
/// validation split, flags events; writes residuals.jsonl,
/// detection.jsonl and scores.csv under reports_dir.
DetectOutput run_detect(const RunConfig& cfg);

/// diagnose: per-event root causes and severities from detection.jsonl,
/// written to diagnosis.jsonl (and echoed at verbosity >= 1).
void run_diagnose(const RunConfig& cfg);

struct EvalOutput {
    eval::Metrics metrics;
    double recall_at_k = 0.0;
    int matched_events = 0;
};

/// eval: event metrics plus root-cause recall@k against the labels file;
/// writes metrics.csv and root_cause.csv.
EvalOutput run_eval(const RunConfig& cfg);

/// noise-sweep: regenerate/train/detect/eval per lambda in a per-lambda
/// work directory below reports_dir; writes sweep.csv. Failures are
/// recorded per row, the sweep continues.
std::vector<eval::SweepRow> run_noise_sweep(const RunConfig& cfg,
                                            const std::vector<double>& lambdas);

struct GradCheckSettings {
    int coords_per_param = 6;
    double step = 1e-5;
    double tolerance = 1e-3;
    std::uint64_t seed = 7;
};

/// grad-check: finite-difference validation of the full model gradient on
/// a reduced configuration (h=2 history over toy-sized data).
ad::GradCheckReport run_grad_check(const RunConfig& cfg, const GradCheckSettings& settings);

/// One full generate->train->detect->eval pass in the configured workdir.
struct EndToEndResult {
    model::FitResult fit;
    EvalOutput eval;
    DetectOutput detect;
    std::vector<ts::AnomalyLabel> labels;
};

EndToEndResult run_end_to_end(const RunConfig& cfg);

}  // namespace mscred::pipeline
