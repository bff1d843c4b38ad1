#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mscred/array.hpp"
#include "mscred/rng.hpp"

namespace mscred::ts {

/// n named time series of equal length T. values is an n x T matrix,
/// one row per series; the step index 0..T-1 is the implicit timestamp.
struct MultivariateSeries {
    std::vector<std::string> names;
    nd::Array values;  // [n, T]

    int n() const { return values.rank() == 2 ? values.dim(0) : 0; }
    std::int64_t length() const { return values.rank() == 2 ? values.dim(1) : 0; }

    /// Checks the type invariants: rank-2 finite values, n >= 2, T >= 1,
    /// names matching n. Throws ShapeError/DataError on violation.
    void validate() const;
};

/// Ground truth for one injected anomaly.
struct AnomalyLabel {
    std::int64_t start = 0;
    int duration = 0;
    std::vector<int> root_causes;
};

/// Half-open step range [lo, hi).
struct StepRange {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
    std::int64_t length() const { return hi - lo; }
    bool contains(std::int64_t t) const { return t >= lo && t < hi; }
};

struct SplitSpec {
    StepRange train, valid, test;
};

/// Non-copying view of one split of a series.
struct SeriesView {
    const MultivariateSeries* series = nullptr;
    StepRange range;
};

struct CsvSchema {
    bool has_header = false;
    char delimiter = ',';
};

/// Configuration of the sinusoidal generator. Each series is
/// sin((t - t0)/omega) or cos((t - t0)/omega) plus lambda-scaled unit
/// Gaussian noise; t0 and omega are drawn per series from the ranges below.
struct SynthConfig {
    int n = 30;
    std::int64_t T = 20000;
    double t0_min = 50.0, t0_max = 100.0;
    double omega_min = 40.0, omega_max = 50.0;
    double lambda = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Shock-pulse injection plan. Durations are assigned to events
/// round-robin from `durations` so every listed scale is exercised.
/// Pulse amplitude is amplitude_sigmas times the cause series' standard
/// deviation over `baseline` (defaults to everything before the region).
struct InjectSpec {
    int count = 5;
    std::vector<int> durations = {30, 60, 90};
    int causes_per_event = 3;
    StepRange region;
    std::int64_t min_gap = 120;
    double amplitude_sigmas = 1.5;
    std::uint64_t seed = 0;
    StepRange baseline{0, 0};  // {0,0}: use [0, region.lo)
};

MultivariateSeries load_csv(const std::string& path, const CsvSchema& schema = {});
void write_csv(const MultivariateSeries& series, const std::string& path,
               const CsvSchema& schema = {});

/// Eq.-driven sinusoidal generator. Deterministic in cfg.seed.
/// Draw order: for each series i: shape selector (uniform_int(2)),
/// t0 (uniform), omega (uniform); then for each series i, each step t:
/// one normal() noise draw.
MultivariateSeries generate_synthetic(const SynthConfig& cfg);

std::pair<MultivariateSeries, std::vector<AnomalyLabel>>
inject_anomalies(const MultivariateSeries& series, const InjectSpec& spec);

/// Convenience overload matching the (count, durations, causes, region, seed)
/// call shape used by the CLI.
std::pair<MultivariateSeries, std::vector<AnomalyLabel>>
inject_anomalies(const MultivariateSeries& series, int count,
                 const std::vector<int>& durations, int causes_per_event,
                 StepRange region, std::uint64_t seed);

/// Validates the spec and returns {train, valid, test} views.
std::array<SeriesView, 3> split(const MultivariateSeries& series, const SplitSpec& spec);

void save_labels_json(const std::vector<AnomalyLabel>& labels, const std::string& path);
std::vector<AnomalyLabel> load_labels_json(const std::string& path);

}  // namespace mscred::ts
