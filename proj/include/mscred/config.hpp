#pragma once

#include <string>
#include <vector>

#include "mscred/model.hpp"
#include "mscred/timeseries.hpp"

namespace mscred {

/// Everything one experiment needs: artifact paths, generator, splits,
/// model and training settings, detection thresholds, evaluation options.
/// Round-trips losslessly through the key=value config file format.
struct RunConfig {
    // Artifact paths, resolved relative to the working directory.
    std::string data_csv = "data/series.csv";
    std::string labels_json = "data/labels.json";
    std::string cache_path = "cache/signatures.bin";
    std::string checkpoint = "model/checkpoint.mscred";
    std::string train_log = "model/train_log.csv";
    std::string reports_dir = "reports";

    ts::SynthConfig synth;
    ts::SplitSpec splits{{0, 8000}, {8000, 10000}, {10000, 20000}};

    // Anomaly injection (into the test split unless a region is set).
    int anomaly_count = 5;
    std::vector<int> anomaly_durations = {30, 60, 90};
    int causes_per_event = 3;
    std::int64_t anomaly_min_gap = 300;
    double amplitude_sigmas = 1.5;

    model::NetConfig net;
    model::TrainConfig train;

    // Detection.
    double theta_quantile = 0.995;
    double beta = 1.0;
    bool beta_grid = false;  // search beta in [1,2] maximizing F1 on labels
    int gap_merge = 1;

    // Evaluation.
    int recall_k = 3;

    std::uint64_t seed = 0;
    int threads = 0;  // 0: library default / MSCRED_THREADS
    int verbosity = 1;

    /// Derived per-stage seeds so generation, injection and training use
    /// independent streams of the one global seed.
    std::uint64_t synth_seed() const;
    std::uint64_t inject_seed() const;
    std::uint64_t train_seed() const;

    void apply(const std::string& key, const std::string& value);
    std::string to_text() const;
    void validate() const;
};

RunConfig preset_paper_synthetic();
RunConfig preset_toy();
RunConfig preset_by_name(const std::string& name);

RunConfig load_config(const std::string& path, RunConfig base = preset_paper_synthetic());
void save_config(const RunConfig& cfg, const std::string& path);

}  // namespace mscred
