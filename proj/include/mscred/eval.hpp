#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mscred/detect.hpp"
#include "mscred/timeseries.hpp"

namespace mscred::eval {

struct Metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int tp = 0, fp = 0, fn = 0;
};

Metrics metrics_from_counts(int tp, int fp, int fn);

/// A predicted span matches a label whose step span, extended by
/// extend_steps on each side, overlaps it; each label matches at most one
/// prediction (greedy in start order). Empty predictions give P = 0.
struct MatchingRule {
    std::int64_t extend_steps = 10;  // one anchor gap
};

struct EventMatch {
    int event_index = -1;
    int label_index = -1;
};

struct MatchResult {
    Metrics metrics;
    std::vector<EventMatch> matches;
};

MatchResult match_events(const std::vector<detect::Event>& events,
                         const std::vector<ts::AnomalyLabel>& labels,
                         const MatchingRule& rule);

Metrics event_metrics(const std::vector<detect::Event>& events,
                      const std::vector<ts::AnomalyLabel>& labels,
                      const MatchingRule& rule);

/// Mean over events of |top-k of the ranking  intersect  true causes| /
/// |true causes|. Rankings and causes are paired per event.
double recall_at_k(const std::vector<std::vector<int>>& rankings,
                   const std::vector<std::vector<int>>& true_causes, int k);

void write_metrics_csv(const Metrics& m, const std::string& path);

struct SweepRow {
    double lambda = 0.0;
    Metrics metrics;
    double wall_seconds = 0.0;
    bool failed = false;
    std::string error;
};

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

/// Plot data: anchor, score and threshold per channel, one CSV row per
/// (anchor, channel).
void write_score_trace_csv(const detect::ResidualReport& report,
                           const std::vector<double>& tau, const std::string& path);

}  // namespace mscred::eval
