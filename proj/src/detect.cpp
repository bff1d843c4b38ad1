#include "mscred/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mscred/errors.hpp"
#include "mscred/io.hpp"

#include <json.hpp>

namespace mscred::detect {

std::string severity_name(Severity s) {
    switch (s) {
        case Severity::short_duration: return "short";
        case Severity::medium_duration: return "medium";
        case Severity::long_duration: return "long";
    }
    return "short";
}

nd::Array residual_stack(const nd::Array& input, const nd::Array& reconstruction) {
    if (!input.same_shape(reconstruction))
        throw ShapeError("residual: input and reconstruction shapes differ");
    nd::Array out(input.shape());
    const std::int64_t m = out.size();
    for (std::int64_t i = 0; i < m; ++i) out[i] = std::abs(input[i] - reconstruction[i]);
    return out;
}

nd::Array channel_of(const nd::Array& stack, int c) {
    if (stack.rank() != 3) throw ShapeError("expected an [n,n,s] stack");
    const int n = stack.dim(0);
    const int s = stack.dim(2);
    nd::Array out({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = stack.at(i, j, c);
    (void)s;
    return out;
}

int broken_score(const nd::Array& residual_channel, double theta) {
    if (theta < 0.0) throw ConfigError("theta must be >= 0");
    int count = 0;
    const std::int64_t m = residual_channel.size();
    for (std::int64_t i = 0; i < m; ++i)
        if (residual_channel[i] > theta) ++count;
    return count;
}

std::vector<int> series_broken_counts(const nd::Array& residual_channel, double theta) {
    if (residual_channel.rank() != 2 || residual_channel.dim(0) != residual_channel.dim(1))
        throw ShapeError("expected a square residual matrix");
    const int n = residual_channel.dim(0);
    std::vector<int> counts(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (!(residual_channel.at(i, j) > theta)) continue;
            ++counts[static_cast<std::size_t>(i)];
            if (i != j) ++counts[static_cast<std::size_t>(j)];
        }
    return counts;
}

std::vector<double> calibrate_theta(const std::vector<nd::Array>& valid_residuals, double q) {
    if (valid_residuals.empty()) throw DataError("theta calibration needs validation residuals");
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("quantile must lie in (0, 1)");
    const int s = valid_residuals.front().dim(2);
    const int n = valid_residuals.front().dim(0);
    std::vector<double> theta(static_cast<std::size_t>(s), 0.0);
    std::vector<double> pool;
    pool.reserve(valid_residuals.size() * static_cast<std::size_t>(n) * n);
    for (int c = 0; c < s; ++c) {
        pool.clear();
        for (const auto& stack : valid_residuals)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) pool.push_back(stack.at(i, j, c));
        std::sort(pool.begin(), pool.end());
        // Linear interpolation on the sorted sample (numpy default rule).
        const double pos = q * static_cast<double>(pool.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        theta[static_cast<std::size_t>(c)] =
            lo + 1 < pool.size() ? pool[lo] * (1.0 - frac) + pool[lo + 1] * frac : pool[lo];
    }
    return theta;
}

std::vector<double> calibrate_tau(const std::vector<ResidualRecord>& valid_records,
                                  double beta) {
    if (valid_records.empty()) throw DataError("tau calibration needs validation scores");
    if (!(beta >= 1.0 && beta <= 2.0)) throw ConfigError("beta must lie in [1, 2]");
    const std::size_t s = valid_records.front().scores.size();
    std::vector<double> tau(s, 0.0);
    for (std::size_t c = 0; c < s; ++c) {
        int mx = 0;
        for (const auto& rec : valid_records) mx = std::max(mx, rec.scores[c]);
        tau[c] = beta * static_cast<double>(mx);
    }
    return tau;
}

ResidualReport build_report(int n, const std::vector<double>& theta,
                            const std::vector<std::int64_t>& anchors,
                            std::vector<nd::Array> residuals) {
    if (anchors.size() != residuals.size())
        throw ShapeError("anchor and residual counts differ");
    ResidualReport report;
    report.n = n;
    report.theta = theta;
    const int s = static_cast<int>(theta.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        ResidualRecord rec;
        rec.anchor = anchors[i];
        for (int c = 0; c < s; ++c) {
            const nd::Array ch = channel_of(residuals[i], c);
            rec.scores.push_back(broken_score(ch, theta[static_cast<std::size_t>(c)]));
            rec.series_counts.push_back(
                series_broken_counts(ch, theta[static_cast<std::size_t>(c)]));
        }
        report.records.push_back(std::move(rec));
    }
    report.residuals = std::move(residuals);
    return report;
}

std::vector<ChannelEvent> detect_events(const std::vector<std::int64_t>& anchors,
                                        const std::vector<int>& scores, double tau,
                                        int gap_merge) {
    if (anchors.size() != scores.size())
        throw ShapeError("anchor and score counts differ");
    std::vector<ChannelEvent> events;
    std::int64_t start = -1, last = -1;
    int gap = 0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const bool flagged = static_cast<double>(scores[i]) > tau;
        if (flagged) {
            if (start < 0) start = anchors[i];
            last = anchors[i];
            gap = 0;
        } else if (start >= 0 && ++gap > gap_merge) {
            events.push_back({start, last});
            start = last = -1;
            gap = 0;
        }
    }
    if (start >= 0) events.push_back({start, last});
    return events;
}

std::vector<std::pair<int, int>> root_cause_ranking(const nd::Array& residual_channel,
                                                    double theta) {
    const std::vector<int> counts = series_broken_counts(residual_channel, theta);
    std::vector<std::pair<int, int>> ranked;
    ranked.reserve(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
        ranked.emplace_back(static_cast<int>(i), counts[i]);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    return ranked;
}

std::pair<Severity, bool> severity_of(const std::set<int>& channels, int n_channels) {
    if (channels.empty()) throw DataError("severity needs at least one detecting channel");
    const bool has_s = channels.count(0) > 0;
    const bool has_m = n_channels > 1 && channels.count(1) > 0;
    const bool has_l = n_channels > 2 && channels.count(2) > 0;
    if (has_s && has_m && has_l) return {Severity::long_duration, true};
    if (has_s && has_m && !has_l) return {Severity::medium_duration, true};
    if (has_s && !has_m && !has_l) return {Severity::short_duration, true};
    // Inconsistent pattern: label by the largest detecting channel.
    if (has_l) return {Severity::long_duration, false};
    if (has_m) return {Severity::medium_duration, false};
    return {Severity::short_duration, false};
}

DetectionResult detect(const ResidualReport& report, const std::vector<double>& tau,
                       double beta, int gap_merge) {
    const int s = report.channels();
    if (static_cast<int>(tau.size()) != s) throw ShapeError("tau length mismatch");
    DetectionResult result;
    result.tau = tau;
    result.beta = beta;
    result.gap_merge = gap_merge;

    std::vector<std::int64_t> anchors;
    anchors.reserve(report.records.size());
    for (const auto& rec : report.records) anchors.push_back(rec.anchor);

    // Per-channel spans, then cross-channel merge by overlap.
    struct Tagged {
        ChannelEvent span;
        int channel;
    };
    std::vector<Tagged> tagged;
    for (int c = 0; c < s; ++c) {
        std::vector<int> scores;
        scores.reserve(report.records.size());
        for (const auto& rec : report.records)
            scores.push_back(rec.scores[static_cast<std::size_t>(c)]);
        for (const ChannelEvent& ev :
             detect_events(anchors, scores, tau[static_cast<std::size_t>(c)], gap_merge))
            tagged.push_back({ev, c});
    }
    std::sort(tagged.begin(), tagged.end(), [](const Tagged& a, const Tagged& b) {
        return a.span.start_anchor != b.span.start_anchor
                   ? a.span.start_anchor < b.span.start_anchor
                   : a.channel < b.channel;
    });

    for (const Tagged& t : tagged) {
        Event* merged = nullptr;
        for (auto& ev : result.events)
            if (t.span.start_anchor <= ev.end_anchor && ev.start_anchor <= t.span.end_anchor) {
                merged = &ev;
                break;
            }
        if (merged) {
            merged->start_anchor = std::min(merged->start_anchor, t.span.start_anchor);
            merged->end_anchor = std::max(merged->end_anchor, t.span.end_anchor);
            merged->channels.insert(t.channel);
        } else {
            Event ev;
            ev.start_anchor = t.span.start_anchor;
            ev.end_anchor = t.span.end_anchor;
            ev.channels.insert(t.channel);
            result.events.push_back(std::move(ev));
        }
    }
    std::sort(result.events.begin(), result.events.end(),
              [](const Event& a, const Event& b) { return a.start_anchor < b.start_anchor; });

    // Severity, peak attribution and root causes. The peak is the anchor
    // with the highest channel-0 (smallest scale) score inside the span.
    for (Event& ev : result.events) {
        auto [severity, consistent] = severity_of(ev.channels, s);
        ev.severity = severity;
        ev.consistent = consistent;
        int best_score = -1;
        std::size_t best_idx = 0;
        for (std::size_t i = 0; i < report.records.size(); ++i) {
            const auto& rec = report.records[i];
            if (rec.anchor < ev.start_anchor || rec.anchor > ev.end_anchor) continue;
            if (rec.scores[0] > best_score) {
                best_score = rec.scores[0];
                best_idx = i;
            }
        }
        ev.peak_anchor = report.records[best_idx].anchor;
        ev.peak_residual = report.residuals[best_idx];
        const auto ranking = root_cause_ranking(channel_of(ev.peak_residual, 0), report.theta[0]);
        for (const auto& [series, score] : ranking) {
            ev.cause_ranking.push_back(series);
            ev.cause_scores.push_back(score);
        }
    }
    return result;
}

void save_report_jsonl(const ResidualReport& report, const std::string& path) {
    std::string buf;
    nlohmann::json meta = {{"type", "meta"},
                           {"n", report.n},
                           {"channels", report.channels()},
                           {"theta", report.theta}};
    buf += meta.dump() + "\n";
    for (const auto& rec : report.records) {
        nlohmann::json row = {{"type", "anchor"},
                              {"anchor", rec.anchor},
                              {"scores", rec.scores},
                              {"series_counts", rec.series_counts}};
        buf += row.dump() + "\n";
    }
    io::atomic_write(path, buf);
}

void save_detection_jsonl(const DetectionResult& result, const std::string& path) {
    std::string buf;
    nlohmann::json meta = {{"type", "meta"},
                           {"tau", result.tau},
                           {"beta", result.beta},
                           {"gap_merge", result.gap_merge}};
    buf += meta.dump() + "\n";
    for (const auto& ev : result.events) {
        std::vector<double> residual(ev.peak_residual.data(),
                                     ev.peak_residual.data() + ev.peak_residual.size());
        nlohmann::json row = {{"type", "event"},
                              {"start", ev.start_anchor},
                              {"end", ev.end_anchor},
                              {"channels", std::vector<int>(ev.channels.begin(), ev.channels.end())},
                              {"severity", severity_name(ev.severity)},
                              {"consistent", ev.consistent},
                              {"peak_anchor", ev.peak_anchor},
                              {"cause_ranking", ev.cause_ranking},
                              {"cause_scores", ev.cause_scores},
                              {"peak_residual_shape", ev.peak_residual.shape()},
                              {"peak_residual", residual}};
        buf += row.dump() + "\n";
    }
    io::atomic_write(path, buf);
}

DetectionResult load_detection_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    DetectionResult result;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw DataError(path + ": " + e.what());
        }
        const std::string type = row.at("type").get<std::string>();
        if (type == "meta") {
            result.tau = row.at("tau").get<std::vector<double>>();
            result.beta = row.at("beta").get<double>();
            result.gap_merge = row.at("gap_merge").get<int>();
        } else if (type == "event") {
            Event ev;
            ev.start_anchor = row.at("start").get<std::int64_t>();
            ev.end_anchor = row.at("end").get<std::int64_t>();
            for (int c : row.at("channels").get<std::vector<int>>()) ev.channels.insert(c);
            const std::string sev = row.at("severity").get<std::string>();
            ev.severity = sev == "long"     ? Severity::long_duration
                          : sev == "medium" ? Severity::medium_duration
                                            : Severity::short_duration;
            ev.consistent = row.at("consistent").get<bool>();
            ev.peak_anchor = row.at("peak_anchor").get<std::int64_t>();
            ev.cause_ranking = row.at("cause_ranking").get<std::vector<int>>();
            ev.cause_scores = row.at("cause_scores").get<std::vector<int>>();
            const auto shape = row.at("peak_residual_shape").get<std::vector<int>>();
            const auto values = row.at("peak_residual").get<std::vector<double>>();
            ev.peak_residual = nd::Array(shape, values);
            result.events.push_back(std::move(ev));
        }
    }
    return result;
}

}  // namespace mscred::detect
