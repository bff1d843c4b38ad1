#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mscred/array.hpp"

namespace mscred::detect {

/// Residual signature matrices and the scores derived from them, one
/// record per anchor. Channel c's score is the number of entries of
/// |input - reconstruction| in channel c exceeding theta[c]; series_counts
/// holds the per-series broken-cell counts (row plus column of each series,
/// diagonal cells counted once).
struct ResidualRecord {
    std::int64_t anchor = 0;
    std::vector<int> scores;                      // [s]
    std::vector<std::vector<int>> series_counts;  // [s][n]
};

struct ResidualReport {
    int n = 0;
    std::vector<double> theta;  // [s]
    std::vector<ResidualRecord> records;
    /// Residual matrices per anchor ([n,n,s]); kept in memory for
    /// root-cause attribution, not serialized per anchor.
    std::vector<nd::Array> residuals;

    int channels() const { return static_cast<int>(theta.size()); }
};

enum class Severity { short_duration, medium_duration, long_duration };

std::string severity_name(Severity s);

struct Event {
    std::int64_t start_anchor = 0;
    std::int64_t end_anchor = 0;  // inclusive
    std::set<int> channels;       // channel indices that flagged the span
    Severity severity = Severity::short_duration;
    bool consistent = true;
    std::int64_t peak_anchor = 0;
    std::vector<int> cause_ranking;  // all series, best first
    std::vector<int> cause_scores;   // aligned with cause_ranking
    /// Residual matrix stack at the peak anchor, carried so diagnosis can
    /// run without re-running the model.
    nd::Array peak_residual;  // [n,n,s]
};

struct DetectionResult {
    std::vector<double> tau;  // [s]
    double beta = 1.0;
    int gap_merge = 1;
    std::vector<Event> events;
};

/// |input - reconstruction|, both [n,n,s].
nd::Array residual_stack(const nd::Array& input, const nd::Array& reconstruction);

/// Count of entries strictly above theta in one n x n residual channel.
int broken_score(const nd::Array& residual_channel, double theta);

/// Extracts channel c of a [n,n,s] stack as an [n,n] matrix.
nd::Array channel_of(const nd::Array& stack, int c);

/// Per-series broken-cell counts over one channel: a broken cell (i, j)
/// counts once for series i and, when i != j, once for series j.
std::vector<int> series_broken_counts(const nd::Array& residual_channel, double theta);

/// theta_c = q-th quantile (linear interpolation) of all validation
/// residual entries in channel c.
std::vector<double> calibrate_theta(const std::vector<nd::Array>& valid_residuals, double q);

/// tau_c = beta * max over validation anchors of score_c.
std::vector<double> calibrate_tau(const std::vector<ResidualRecord>& valid_records,
                                  double beta);

/// Builds records (scores + per-series counts) for residual stacks.
ResidualReport build_report(int n, const std::vector<double>& theta,
                            const std::vector<std::int64_t>& anchors,
                            std::vector<nd::Array> residuals);

/// Anchor spans where the score exceeds tau; runs separated by at most
/// gap_merge non-flagged anchors merge into one span.
struct ChannelEvent {
    std::int64_t start_anchor = 0;
    std::int64_t end_anchor = 0;
};

std::vector<ChannelEvent> detect_events(const std::vector<std::int64_t>& anchors,
                                        const std::vector<int>& scores, double tau,
                                        int gap_merge);

/// Ranks all series by broken-cell count in their row/column of the
/// residual channel; descending, ties by series index.
std::vector<std::pair<int, int>> root_cause_ranking(const nd::Array& residual_channel,
                                                    double theta);

/// Severity from the set of detecting channels: all three -> long,
/// S and M -> medium, S only -> short. Other combinations are labeled by
/// the largest detecting channel and flagged inconsistent.
std::pair<Severity, bool> severity_of(const std::set<int>& channels, int n_channels);

/// Full detection: per-channel events, cross-channel merge by span
/// overlap, severity labels, and root-cause rankings at each event's
/// channel-0 peak anchor.
DetectionResult detect(const ResidualReport& report, const std::vector<double>& tau,
                       double beta, int gap_merge);

// JSON-lines serialization. Residual reports store one record per anchor
// (anchor, scores, series_counts, theta on the first line); detection
// files store one record per event.
void save_report_jsonl(const ResidualReport& report, const std::string& path);
void save_detection_jsonl(const DetectionResult& result, const std::string& path);
DetectionResult load_detection_jsonl(const std::string& path);

}  // namespace mscred::detect
