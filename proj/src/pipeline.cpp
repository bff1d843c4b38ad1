#include "mscred/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mscred/io.hpp"

#include <json.hpp>

namespace fs = std::filesystem;

namespace mscred::pipeline {

namespace {

void log(const RunConfig& cfg, int level, const std::string& msg) {
    if (cfg.verbosity >= level) std::fprintf(stderr, "[mscred] %s\n", msg.c_str());
}

std::string report_path(const RunConfig& cfg, const char* name) {
    return (fs::path(cfg.reports_dir) / name).string();
}

}  // namespace

void apply_threads(const RunConfig& cfg) {
    int threads = cfg.threads;
    if (threads <= 0) {
        if (const char* env = std::getenv("MSCRED_THREADS")) threads = std::atoi(env);
    }
    if (threads > 0) kern::set_threads(threads);
}

void run_generate(const RunConfig& cfg) {
    cfg.validate();
    ts::SynthConfig synth = cfg.synth;
    synth.seed = cfg.synth_seed();
    ts::MultivariateSeries series = generate_synthetic(synth);

    ts::InjectSpec inject;
    inject.count = cfg.anomaly_count;
    inject.durations = cfg.anomaly_durations;
    inject.causes_per_event = cfg.causes_per_event;
    inject.region = cfg.splits.test;
    inject.min_gap = cfg.anomaly_min_gap;
    inject.amplitude_sigmas = cfg.amplitude_sigmas;
    inject.seed = cfg.inject_seed();
    inject.baseline = cfg.splits.train;
    auto [injected, labels] = inject_anomalies(series, inject);

    ts::write_csv(injected, cfg.data_csv, {.has_header = true});
    ts::save_labels_json(labels, cfg.labels_json);
    log(cfg, 1, "generated " + std::to_string(injected.n()) + "x" +
                    std::to_string(injected.length()) + " series with " +
                    std::to_string(labels.size()) + " anomalies -> " + cfg.data_csv);
}

Prepared prepare(const RunConfig& cfg, bool use_cache) {
    Prepared prep;
    prep.series = ts::load_csv(cfg.data_csv, {.has_header = true});
    prep.series.validate();
    if (fs::exists(cfg.labels_json)) prep.labels = ts::load_labels_json(cfg.labels_json);

    const auto views = ts::split(prep.series, cfg.splits);
    (void)views;

    prep.norm = cfg.net.standardize
                    ? sig::Standardizer::fit(prep.series.values, cfg.splits.train)
                    : sig::Standardizer::identity(prep.series.n());

    prep.train_anchors = sig::anchor_schedule(cfg.splits.train, cfg.net.scales, cfg.net.h,
                                              cfg.net.gap);
    prep.valid_anchors = sig::anchor_schedule(cfg.splits.valid, cfg.net.scales, cfg.net.h,
                                              cfg.net.gap);
    prep.test_anchors = sig::anchor_schedule(cfg.splits.test, cfg.net.scales, cfg.net.h,
                                             cfg.net.gap);
    if (prep.train_anchors.empty()) throw DataError("train split yields no anchors");

    if (use_cache && fs::exists(cfg.cache_path)) {
        prep.store = sig::SignatureStore::load(cfg.cache_path);
        if (prep.store.n() != prep.series.n() || prep.store.h() != cfg.net.h ||
            prep.store.gap() != cfg.net.gap ||
            prep.store.channels() != cfg.net.s())
            throw DataError(cfg.cache_path + ": cache does not match the configuration; "
                                             "rebuild with build-signatures");
        log(cfg, 1, "loaded signature cache " + cfg.cache_path);
    } else {
        std::vector<std::int64_t> targets;
        for (const auto* list : {&prep.train_anchors, &prep.valid_anchors, &prep.test_anchors})
            targets.insert(targets.end(), list->begin(), list->end());
        const nd::Array standardized = prep.norm.apply(prep.series.values);
        prep.store = sig::SignatureStore(standardized, targets, cfg.net.scales, cfg.net.h,
                                         cfg.net.gap);
        log(cfg, 1, "built " + std::to_string(prep.store.anchors().size()) +
                        " signature tensors");
    }
    return prep;
}

void run_build_signatures(const RunConfig& cfg) {
    cfg.validate();
    Prepared prep = prepare(cfg, /*use_cache=*/false);
    prep.store.save(cfg.cache_path);
    log(cfg, 1, "wrote signature cache -> " + cfg.cache_path);
}

model::FitResult run_train(const RunConfig& cfg) {
    cfg.validate();
    apply_threads(cfg);
    Prepared prep = prepare(cfg);

    model::NetConfig net = cfg.net;
    net.n = prep.series.n();
    model::TrainConfig tc = cfg.train;
    tc.seed = cfg.train_seed();
    if (cfg.verbosity >= 1)
        tc.on_epoch = [&cfg](const model::EpochLog& row) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "epoch %3d  train %.4f  valid %.4f  (%.0fs)",
                          row.epoch, row.train_loss, row.valid_loss, row.wall_seconds);
            log(cfg, 1, buf);
        };

    model::ModelParams params = model::init_params(net, prep.norm, tc.seed);
    log(cfg, 1, "training " + std::to_string(prep.train_anchors.size()) + " anchors, " +
                    std::to_string(prep.valid_anchors.size()) + " validation anchors");
    model::FitResult fit = model::fit(prep.store, prep.train_anchors, prep.valid_anchors,
                                      params, tc);
    model::save_checkpoint(params, cfg.checkpoint);
    model::write_train_log(fit.log, cfg.train_log);
    log(cfg, 1, "best validation loss " + std::to_string(fit.best_valid) + " at epoch " +
                    std::to_string(fit.best_epoch) + " -> " + cfg.checkpoint);
    return fit;
}

namespace {

std::vector<nd::Array> reconstruct_residuals(const Prepared& prep,
                                             const model::ModelParams& params,
                                             const std::vector<std::int64_t>& anchors,
                                             std::string* attention_csv = nullptr) {
    const model::CellCaches caches = model::make_cell_caches(params);
    std::vector<nd::Array> residuals;
    residuals.reserve(anchors.size());
    for (const std::int64_t anchor : anchors) {
        const auto seq = prep.store.sequence(anchor);
        const model::ForwardResult fw = model::forward(seq, params, &caches);
        residuals.push_back(
            detect::residual_stack(prep.store.tensor_at(anchor), fw.reconstruction->value));
        if (attention_csv) {
            char line[96];
            for (int l = 0; l < 4; ++l) {
                const auto& weights = fw.attention_weights[static_cast<std::size_t>(l)];
                for (std::size_t step = 0; step < weights.size(); ++step) {
                    std::snprintf(line, sizeof line, "%lld,%d,%zu,%.9f\n",
                                  static_cast<long long>(anchor), l + 1, step + 1,
                                  weights[step]);
                    *attention_csv += line;
                }
            }
        }
    }
    return residuals;
}

detect::DetectionResult detect_with_beta(const detect::ResidualReport& valid_report,
                                         const detect::ResidualReport& test_report,
                                         double beta, int gap_merge) {
    const std::vector<double> tau = detect::calibrate_tau(valid_report.records, beta);
    return detect::detect(test_report, tau, beta, gap_merge);
}

}  // namespace

DetectOutput run_detect(const RunConfig& cfg) {
    cfg.validate();
    apply_threads(cfg);
    if (!fs::exists(cfg.checkpoint))
        throw DataError("no checkpoint at " + cfg.checkpoint + "; train first");
    Prepared prep = prepare(cfg);

    model::NetConfig net = cfg.net;
    net.n = prep.series.n();
    const model::ModelParams params = model::load_checkpoint(cfg.checkpoint, net);

    log(cfg, 1, "reconstructing " + std::to_string(prep.valid_anchors.size()) + "+" +
                    std::to_string(prep.test_anchors.size()) + " anchors");
    std::string attention_csv = "anchor,layer,step,weight\n";
    std::vector<nd::Array> valid_res = reconstruct_residuals(prep, params, prep.valid_anchors);
    std::vector<nd::Array> test_res =
        reconstruct_residuals(prep, params, prep.test_anchors, &attention_csv);

    const std::vector<double> theta = detect::calibrate_theta(valid_res, cfg.theta_quantile);
    detect::ResidualReport valid_report =
        detect::build_report(prep.series.n(), theta, prep.valid_anchors, std::move(valid_res));
    detect::ResidualReport test_report =
        detect::build_report(prep.series.n(), theta, prep.test_anchors, std::move(test_res));

    DetectOutput out;
    out.theta = theta;
    if (cfg.beta_grid) {
        if (prep.labels.empty())
            throw DataError("beta_grid needs a labeled calibration split (labels file)");
        double best_f1 = -1.0, best_beta = 1.0;
        for (int i = 0; i <= 20; ++i) {
            const double beta = 1.0 + 0.05 * i;
            const auto candidate =
                detect_with_beta(valid_report, test_report, beta, cfg.gap_merge);
            const auto metrics = eval::event_metrics(candidate.events, prep.labels,
                                                     {.extend_steps = cfg.net.gap});
            if (metrics.f1 > best_f1) {
                best_f1 = metrics.f1;
                best_beta = beta;
            }
        }
        log(cfg, 1, "beta grid search picked beta=" + std::to_string(best_beta));
        out.detection = detect_with_beta(valid_report, test_report, best_beta, cfg.gap_merge);
    } else {
        out.detection = detect_with_beta(valid_report, test_report, cfg.beta, cfg.gap_merge);
    }
    out.report = std::move(test_report);

    detect::save_report_jsonl(out.report, report_path(cfg, "residuals.jsonl"));
    detect::save_detection_jsonl(out.detection, report_path(cfg, "detection.jsonl"));
    eval::write_score_trace_csv(out.report, out.detection.tau, report_path(cfg, "scores.csv"));
    io::atomic_write(report_path(cfg, "attention.csv"), attention_csv);
    log(cfg, 1, "detected " + std::to_string(out.detection.events.size()) + " events -> " +
                    report_path(cfg, "detection.jsonl"));
    return out;
}

void run_diagnose(const RunConfig& cfg) {
    const std::string detection_path = report_path(cfg, "detection.jsonl");
    if (!fs::exists(detection_path))
        throw DataError("no detection at " + detection_path + "; run detect first");
    const detect::DetectionResult detection = detect::load_detection_jsonl(detection_path);

    std::vector<ts::AnomalyLabel> labels;
    if (fs::exists(cfg.labels_json)) labels = ts::load_labels_json(cfg.labels_json);
    const eval::MatchResult matches =
        eval::match_events(detection.events, labels, {.extend_steps = cfg.net.gap});

    std::string buf;
    for (std::size_t i = 0; i < detection.events.size(); ++i) {
        const detect::Event& ev = detection.events[i];
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.recall_k),
                                                    ev.cause_ranking.size());
        std::vector<int> top(ev.cause_ranking.begin(),
                             ev.cause_ranking.begin() + static_cast<std::ptrdiff_t>(k));
        std::vector<int> top_scores(ev.cause_scores.begin(),
                                    ev.cause_scores.begin() + static_cast<std::ptrdiff_t>(k));
        nlohmann::json row = {{"event", i},
                              {"start", ev.start_anchor},
                              {"end", ev.end_anchor},
                              {"severity", detect::severity_name(ev.severity)},
                              {"consistent", ev.consistent},
                              {"peak_anchor", ev.peak_anchor},
                              {"top_causes", top},
                              {"top_cause_scores", top_scores}};
        for (const auto& m : matches.matches)
            if (m.event_index == static_cast<int>(i)) {
                row["matched_label"] = {{"start", labels[static_cast<std::size_t>(m.label_index)].start},
                                        {"duration", labels[static_cast<std::size_t>(m.label_index)].duration},
                                        {"root_causes", labels[static_cast<std::size_t>(m.label_index)].root_causes}};
            }
        buf += row.dump() + "\n";
        log(cfg, 1, "event " + std::to_string(i) + " [" + std::to_string(ev.start_anchor) +
                        ", " + std::to_string(ev.end_anchor) + "] severity " +
                        detect::severity_name(ev.severity));
    }
    io::atomic_write(report_path(cfg, "diagnosis.jsonl"), buf);
}

EvalOutput run_eval(const RunConfig& cfg) {
    const std::string detection_path = report_path(cfg, "detection.jsonl");
    if (!fs::exists(detection_path))
        throw DataError("no detection at " + detection_path + "; run detect first");
    const detect::DetectionResult detection = detect::load_detection_jsonl(detection_path);
    const std::vector<ts::AnomalyLabel> labels = ts::load_labels_json(cfg.labels_json);

    const eval::MatchResult matches =
        eval::match_events(detection.events, labels, {.extend_steps = cfg.net.gap});

    std::vector<std::vector<int>> rankings;
    std::vector<std::vector<int>> causes;
    for (const auto& m : matches.matches) {
        rankings.push_back(detection.events[static_cast<std::size_t>(m.event_index)].cause_ranking);
        causes.push_back(labels[static_cast<std::size_t>(m.label_index)].root_causes);
    }

    EvalOutput out;
    out.metrics = matches.metrics;
    out.matched_events = static_cast<int>(matches.matches.size());
    out.recall_at_k = eval::recall_at_k(rankings, causes, cfg.recall_k);

    eval::write_metrics_csv(out.metrics, report_path(cfg, "metrics.csv"));
    char buf[128];
    std::snprintf(buf, sizeof buf, "k,recall_at_k,events\n%d,%.6f,%d\n", cfg.recall_k,
                  out.recall_at_k, out.matched_events);
    io::atomic_write(report_path(cfg, "root_cause.csv"), buf);
    std::snprintf(buf, sizeof buf, "precision %.3f recall %.3f f1 %.3f recall@%d %.3f",
                  out.metrics.precision, out.metrics.recall, out.metrics.f1, cfg.recall_k,
                  out.recall_at_k);
    log(cfg, 1, buf);
    return out;
}

EndToEndResult run_end_to_end(const RunConfig& cfg) {
    run_generate(cfg);
    EndToEndResult result;
    result.fit = run_train(cfg);
    result.detect = run_detect(cfg);
    result.eval = run_eval(cfg);
    result.labels = ts::load_labels_json(cfg.labels_json);
    return result;
}

std::vector<eval::SweepRow> run_noise_sweep(const RunConfig& cfg,
                                            const std::vector<double>& lambdas) {
    if (lambdas.empty()) throw ConfigError("noise sweep needs at least one lambda");
    std::vector<eval::SweepRow> rows;
    for (const double lambda : lambdas) {
        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        eval::SweepRow row;
        row.lambda = lambda;
        char tag[32];
        std::snprintf(tag, sizeof tag, "lambda_%.3f", lambda);
        const fs::path workdir = fs::path(cfg.reports_dir) / "sweep" / tag;

        RunConfig sub = cfg;
        sub.synth.lambda = lambda;  // same seed for every lambda
        sub.data_csv = (workdir / "series.csv").string();
        sub.labels_json = (workdir / "labels.json").string();
        sub.cache_path = (workdir / "signatures.bin").string();
        sub.checkpoint = (workdir / "checkpoint.mscred").string();
        sub.train_log = (workdir / "train_log.csv").string();
        sub.reports_dir = (workdir / "reports").string();
        try {
            const EndToEndResult result = run_end_to_end(sub);
            row.metrics = result.eval.metrics;
        } catch (const std::exception& ex) {
            row.failed = true;
            row.error = ex.what();
            log(cfg, 0, std::string("sweep point failed: ") + ex.what());
        }
        row.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        rows.push_back(std::move(row));
    }
    eval::write_sweep_csv(rows, report_path(cfg, "sweep.csv"));
    return rows;
}

ad::GradCheckReport run_grad_check(const RunConfig& cfg, const GradCheckSettings& settings) {
    apply_threads(cfg);
    // Reduced setup: toy-sized synthetic data, short history.
    model::NetConfig net = cfg.net;
    net.n = std::min(cfg.net.n, 10);
    net.h = 2;

    ts::SynthConfig synth;
    synth.n = net.n;
    synth.T = 400;
    synth.lambda = 0.3;
    synth.seed = settings.seed;
    const ts::MultivariateSeries series = generate_synthetic(synth);
    const sig::Standardizer norm = sig::Standardizer::fit(series.values, {0, synth.T});
    const nd::Array standardized = norm.apply(series.values);

    const std::int64_t anchor = sig::first_valid_anchor(net.scales, net.h, net.gap) + net.gap;
    sig::SignatureStore store(standardized, {anchor}, net.scales, net.h, net.gap);

    model::ModelParams params = model::init_params(net, norm, settings.seed);
    const auto named = params.named();

    const auto loss_value = [&] {
        const auto seq = store.sequence(anchor);
        const auto fw = model::forward(seq, params);
        return ad::scalar_value(model::reconstruction_loss(
            ad::constant(store.tensor_at(anchor)), fw.reconstruction));
    };
    const auto compute_grads = [&] {
        ad::zero_grad(params.vars());
        const auto seq = store.sequence(anchor);
        const auto fw = model::forward(seq, params);
        ad::backward(model::reconstruction_loss(ad::constant(store.tensor_at(anchor)),
                                                fw.reconstruction));
    };
    return ad::grad_check(loss_value, compute_grads, named, settings.step,
                          settings.coords_per_param, settings.seed);
}

}  // namespace mscred::pipeline
