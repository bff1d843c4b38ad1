#include "mscred/eval.hpp"

#include <algorithm>
#include <cstdio>

#include "mscred/io.hpp"

namespace mscred::eval {

Metrics metrics_from_counts(int tp, int fp, int fn) {
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

MatchResult match_events(const std::vector<detect::Event>& events,
                         const std::vector<ts::AnomalyLabel>& labels,
                         const MatchingRule& rule) {
    std::vector<std::size_t> order(events.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return events[a].start_anchor < events[b].start_anchor;
    });

    std::vector<bool> label_used(labels.size(), false);
    MatchResult result;
    int tp = 0, fp = 0;
    for (std::size_t idx : order) {
        const detect::Event& ev = events[idx];
        int matched = -1;
        for (std::size_t li = 0; li < labels.size(); ++li) {
            if (label_used[li]) continue;
            const std::int64_t lo = labels[li].start - rule.extend_steps;
            const std::int64_t hi = labels[li].start + labels[li].duration + rule.extend_steps;
            if (ev.start_anchor <= hi && lo <= ev.end_anchor) {
                matched = static_cast<int>(li);
                break;
            }
        }
        if (matched >= 0) {
            label_used[static_cast<std::size_t>(matched)] = true;
            ++tp;
            result.matches.push_back({static_cast<int>(idx), matched});
        } else {
            ++fp;
        }
    }
    const int fn = static_cast<int>(labels.size()) - tp;
    result.metrics = metrics_from_counts(tp, fp, fn);
    return result;
}

Metrics event_metrics(const std::vector<detect::Event>& events,
                      const std::vector<ts::AnomalyLabel>& labels,
                      const MatchingRule& rule) {
    return match_events(events, labels, rule).metrics;
}

double recall_at_k(const std::vector<std::vector<int>>& rankings,
                   const std::vector<std::vector<int>>& true_causes, int k) {
    if (k < 1) throw ConfigError("recall@k needs k >= 1");
    if (rankings.size() != true_causes.size())
        throw ShapeError("recall@k: rankings and cause sets must pair up");
    if (rankings.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t e = 0; e < rankings.size(); ++e) {
        const auto& ranking = rankings[e];
        const auto& causes = true_causes[e];
        if (causes.empty()) throw DataError("recall@k: event without true causes");
        int hits = 0;
        const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(k), ranking.size());
        for (std::size_t i = 0; i < top; ++i)
            if (std::find(causes.begin(), causes.end(), ranking[i]) != causes.end()) ++hits;
        total += static_cast<double>(hits) / static_cast<double>(causes.size());
    }
    return total / static_cast<double>(rankings.size());
}

void write_metrics_csv(const Metrics& m, const std::string& path) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "precision,recall,f1,tp,fp,fn\n%.6f,%.6f,%.6f,%d,%d,%d\n", m.precision,
                  m.recall, m.f1, m.tp, m.fp, m.fn);
    io::atomic_write(path, buf);
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::string buf = "lambda,precision,recall,f1,wall_seconds\n";
    char line[256];
    for (const auto& row : rows) {
        if (row.failed) {
            std::snprintf(line, sizeof line, "%.4f,nan,nan,nan,%.1f\n", row.lambda,
                          row.wall_seconds);
        } else {
            std::snprintf(line, sizeof line, "%.4f,%.6f,%.6f,%.6f,%.1f\n", row.lambda,
                          row.metrics.precision, row.metrics.recall, row.metrics.f1,
                          row.wall_seconds);
        }
        buf += line;
    }
    io::atomic_write(path, buf);
}

void write_score_trace_csv(const detect::ResidualReport& report,
                           const std::vector<double>& tau, const std::string& path) {
    std::string buf = "anchor,channel,score,tau\n";
    char line[128];
    for (const auto& rec : report.records)
        for (std::size_t c = 0; c < rec.scores.size(); ++c) {
            std::snprintf(line, sizeof line, "%lld,%zu,%d,%.6f\n",
                          static_cast<long long>(rec.anchor), c, rec.scores[c],
                          c < tau.size() ? tau[c] : 0.0);
            buf += line;
        }
    io::atomic_write(path, buf);
}

}  // namespace mscred::eval
