#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mscred/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct CommonOpts {
    std::string preset = "paper-synthetic";
    std::string config_path;
    std::vector<std::string> overrides;  // key=value
    std::string workdir;
    int threads = 0;
    int verbosity = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--preset", opts.preset, "Base preset: paper-synthetic or toy")
        ->default_val("paper-synthetic");
    cmd->add_option("-c,--config", opts.config_path, "Config file (key=value lines)");
    cmd->add_option("--set", opts.overrides, "Override a config key, e.g. --set lambda=0.4");
    cmd->add_option("--workdir", opts.workdir, "Prefix relative artifact paths with this directory");
    cmd->add_option("--threads", opts.threads, "Worker threads (also MSCRED_THREADS)");
    cmd->add_option("-v,--verbosity", opts.verbosity, "0 quiet, 1 progress");
}

mscred::RunConfig resolve_config(const CommonOpts& opts) {
    mscred::RunConfig cfg = mscred::preset_by_name(opts.preset);
    if (!opts.config_path.empty()) cfg = mscred::load_config(opts.config_path, cfg);
    for (const std::string& kv : opts.overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw mscred::ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!opts.workdir.empty()) {
        auto prefix = [&](std::string& path) {
            if (!path.empty() && path.front() != '/') path = opts.workdir + "/" + path;
        };
        prefix(cfg.data_csv);
        prefix(cfg.labels_json);
        prefix(cfg.cache_path);
        prefix(cfg.checkpoint);
        prefix(cfg.train_log);
        prefix(cfg.reports_dir);
    }
    if (opts.threads > 0) cfg.threads = opts.threads;
    if (opts.verbosity >= 0) cfg.verbosity = opts.verbosity;
    cfg.validate();
    mscred::pipeline::apply_threads(cfg);
    return cfg;
}

std::vector<double> parse_lambdas(const std::string& text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string::npos) end = text.size();
        out.push_back(std::stod(text.substr(start, end - start)));
        start = end + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MSCRED: multi-scale convolutional recurrent encoder-decoder for "
                 "multivariate time series anomaly detection and diagnosis"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string lambdas_text = "0.2,0.25,0.3,0.35,0.4,0.45";
    mscred::pipeline::GradCheckSettings gc;
    bool dump_config = false;

    auto* generate = app.add_subcommand("generate", "Write synthetic series CSV + labels");
    add_common(generate, opts);
    generate->add_flag("--dump-config", dump_config, "Also write the resolved config");

    auto* build = app.add_subcommand("build-signatures", "Precompute the signature cache");
    add_common(build, opts);

    auto* train = app.add_subcommand("train", "Fit the model; writes checkpoint + log");
    add_common(train, opts);

    auto* detect = app.add_subcommand("detect", "Score anchors and flag events");
    add_common(detect, opts);

    auto* diagnose = app.add_subcommand("diagnose", "Root causes and severity per event");
    add_common(diagnose, opts);

    auto* evaluate = app.add_subcommand("eval", "Precision/recall/F1 and recall@k");
    add_common(evaluate, opts);

    auto* sweep = app.add_subcommand("noise-sweep", "Full pipeline per noise factor");
    add_common(sweep, opts);
    sweep->add_option("--lambdas", lambdas_text, "Comma-separated noise factors");

    auto* gradcheck = app.add_subcommand("grad-check", "Finite-difference gradient check");
    add_common(gradcheck, opts);
    gradcheck->add_option("--coords", gc.coords_per_param, "Coordinates sampled per parameter");
    gradcheck->add_option("--step", gc.step, "Finite-difference step");
    gradcheck->add_option("--tolerance", gc.tolerance, "Max relative error accepted");

    CLI11_PARSE(app, argc, argv);

    try {
        const mscred::RunConfig cfg = resolve_config(opts);
        if (generate->parsed()) {
            mscred::pipeline::run_generate(cfg);
            if (dump_config)
                mscred::save_config(cfg, cfg.reports_dir + "/run_config.cfg");
        } else if (build->parsed()) {
            mscred::pipeline::run_build_signatures(cfg);
        } else if (train->parsed()) {
            mscred::pipeline::run_train(cfg);
        } else if (detect->parsed()) {
            mscred::pipeline::run_detect(cfg);
        } else if (diagnose->parsed()) {
            mscred::pipeline::run_diagnose(cfg);
        } else if (evaluate->parsed()) {
            const auto out = mscred::pipeline::run_eval(cfg);
            std::printf("precision=%.4f recall=%.4f f1=%.4f recall@%d=%.4f\n",
                        out.metrics.precision, out.metrics.recall, out.metrics.f1,
                        cfg.recall_k, out.recall_at_k);
        } else if (sweep->parsed()) {
            const auto rows =
                mscred::pipeline::run_noise_sweep(cfg, parse_lambdas(lambdas_text));
            for (const auto& row : rows)
                std::printf("lambda=%.3f f1=%s\n", row.lambda,
                            row.failed ? "failed" : std::to_string(row.metrics.f1).c_str());
        } else if (gradcheck->parsed()) {
            const auto report = mscred::pipeline::run_grad_check(cfg, gc);
            std::printf("checked %lld coordinates, max rel. error %.3e (worst: %s[%lld])\n",
                        static_cast<long long>(report.coords_checked), report.max_rel_err,
                        report.worst_param.c_str(),
                        static_cast<long long>(report.worst_index));
            if (!report.passed(gc.tolerance)) {
                std::fprintf(stderr, "gradient check FAILED (tolerance %.1e)\n", gc.tolerance);
                return kExitNumeric;
            }
            std::printf("gradient check passed (tolerance %.1e)\n", gc.tolerance);
        }
    } catch (const mscred::NumericError& ex) {
        std::fprintf(stderr, "numeric failure: %s\n", ex.what());
        return kExitNumeric;
    } catch (const mscred::DataError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitData;
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitUsage;
    }
    return kExitOk;
}
