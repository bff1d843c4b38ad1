#include "mscred/timeseries.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mscred/io.hpp"

#include <json.hpp>

namespace mscred::ts {

void MultivariateSeries::validate() const {
    if (values.rank() != 2) throw ShapeError("series values must be an n x T matrix");
    if (n() < 2) throw DataError("need at least 2 series");
    if (length() < 1) throw DataError("series length must be >= 1");
    if (names.size() != static_cast<std::size_t>(n()))
        throw DataError("name count does not match series count");
    if (!values.all_finite()) throw DataError("series contain non-finite values");
}

void SynthConfig::validate() const {
    if (n < 2) throw ConfigError("synthetic config: n must be >= 2");
    if (T < 1) throw ConfigError("synthetic config: T must be >= 1");
    if (!(t0_min < t0_max)) throw ConfigError("synthetic config: degenerate t0 range");
    if (!(omega_min < omega_max) || omega_min <= 0.0)
        throw ConfigError("synthetic config: degenerate omega range");
    if (lambda < 0.0) throw ConfigError("synthetic config: lambda must be >= 0");
}

MultivariateSeries load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);

    MultivariateSeries out;
    std::vector<double> cells;
    std::string line;
    std::int64_t line_no = 0;
    int n_cols = -1;
    std::int64_t n_rows = 0;

    auto parse_row = [&](const std::string& text, std::vector<double>& row) {
        row.clear();
        std::size_t start = 0;
        while (true) {
            std::size_t end = text.find(schema.delimiter, start);
            std::string_view field(text.data() + start,
                                   (end == std::string::npos ? text.size() : end) - start);
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
            if (ec != std::errc() || ptr != field.data() + field.size())
                throw DataError(path + ":" + std::to_string(line_no) +
                                ": cannot parse '" + std::string(field) + "' as a number");
            row.push_back(v);
            if (end == std::string::npos) break;
            start = end + 1;
        }
    };

    std::vector<double> row;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && schema.has_header) {
            std::size_t start = 0;
            while (true) {
                std::size_t end = line.find(schema.delimiter, start);
                out.names.push_back(line.substr(start, (end == std::string::npos
                                                            ? line.size()
                                                            : end) - start));
                if (end == std::string::npos) break;
                start = end + 1;
            }
            continue;
        }
        parse_row(line, row);
        if (n_cols < 0) n_cols = static_cast<int>(row.size());
        if (static_cast<int>(row.size()) != n_cols)
            throw ShapeError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(n_cols) + " columns, got " +
                             std::to_string(row.size()));
        cells.insert(cells.end(), row.begin(), row.end());
        ++n_rows;
    }
    if (n_rows == 0 || n_cols <= 0) throw DataError(path + ": no data rows");
    if (schema.has_header && out.names.size() != static_cast<std::size_t>(n_cols))
        throw ShapeError(path + ": header has " + std::to_string(out.names.size()) +
                         " fields for " + std::to_string(n_cols) + " columns");

    // Columns are series: transpose the row-major cell buffer into [n, T].
    out.values = nd::Array({n_cols, static_cast<int>(n_rows)});
    for (std::int64_t r = 0; r < n_rows; ++r)
        for (int c = 0; c < n_cols; ++c)
            out.values.at(c, static_cast<int>(r)) = cells[static_cast<std::size_t>(r) * n_cols + c];
    if (out.names.empty())
        for (int c = 0; c < n_cols; ++c) out.names.push_back("s" + std::to_string(c));
    return out;
}

void write_csv(const MultivariateSeries& series, const std::string& path,
               const CsvSchema& schema) {
    const int n = series.n();
    const std::int64_t T = series.length();
    std::string buf;
    buf.reserve(static_cast<std::size_t>(T) * n * 20);
    char num[40];
    if (schema.has_header) {
        for (int c = 0; c < n; ++c) {
            if (c) buf += schema.delimiter;
            buf += series.names[static_cast<std::size_t>(c)];
        }
        buf += '\n';
    }
    for (std::int64_t t = 0; t < T; ++t) {
        for (int c = 0; c < n; ++c) {
            if (c) buf += schema.delimiter;
            // %.17g guarantees the double survives the round trip bit-exactly.
            std::snprintf(num, sizeof num, "%.17g", series.values.at(c, static_cast<int>(t)));
            buf += num;
        }
        buf += '\n';
    }
    io::atomic_write(path, buf);
}

MultivariateSeries generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    std::vector<int> use_cos(static_cast<std::size_t>(cfg.n));
    std::vector<double> t0(static_cast<std::size_t>(cfg.n)), omega(static_cast<std::size_t>(cfg.n));
    for (int i = 0; i < cfg.n; ++i) {
        use_cos[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(2));
        t0[static_cast<std::size_t>(i)] = rng.uniform(cfg.t0_min, cfg.t0_max);
        omega[static_cast<std::size_t>(i)] = rng.uniform(cfg.omega_min, cfg.omega_max);
    }

    MultivariateSeries out;
    out.values = nd::Array({cfg.n, static_cast<int>(cfg.T)});
    for (int i = 0; i < cfg.n; ++i) {
        out.names.push_back("s" + std::to_string(i));
        double* row = out.values.data() + static_cast<std::int64_t>(i) * cfg.T;
        const double ti = t0[static_cast<std::size_t>(i)];
        const double wi = omega[static_cast<std::size_t>(i)];
        const bool cosine = use_cos[static_cast<std::size_t>(i)] != 0;
        for (std::int64_t t = 0; t < cfg.T; ++t) {
            const double phase = (static_cast<double>(t) - ti) / wi;
            const double base = cosine ? std::cos(phase) : std::sin(phase);
            row[t] = base + cfg.lambda * rng.normal();
        }
    }
    return out;
}

namespace {

double range_std(const double* row, StepRange r) {
    const double len = static_cast<double>(r.length());
    double mean = 0.0;
    for (std::int64_t t = r.lo; t < r.hi; ++t) mean += row[t];
    mean /= len;
    double var = 0.0;
    for (std::int64_t t = r.lo; t < r.hi; ++t) {
        const double d = row[t] - mean;
        var += d * d;
    }
    return std::sqrt(var / len);
}

}  // namespace

std::pair<MultivariateSeries, std::vector<AnomalyLabel>>
inject_anomalies(const MultivariateSeries& series, const InjectSpec& spec) {
    series.validate();
    const std::int64_t T = series.length();
    const int n = series.n();
    if (spec.region.lo < 0 || spec.region.hi > T || spec.region.lo >= spec.region.hi)
        throw DataError("injection region does not fit the series");
    if (spec.count > 0 && spec.durations.empty())
        throw ConfigError("injection needs at least one duration");
    if (spec.causes_per_event < 1 || spec.causes_per_event > n)
        throw ConfigError("causes_per_event out of range");

    MultivariateSeries out = series;
    std::vector<AnomalyLabel> labels;
    if (spec.count == 0) return {std::move(out), std::move(labels)};

    StepRange baseline = spec.baseline;
    if (baseline.lo == baseline.hi) baseline = {0, spec.region.lo};
    if (baseline.length() < 2) throw DataError("baseline range too short for amplitude estimate");

    Rng rng(spec.seed);

    // Constructive placement: durations go to time-ordered slots round-robin
    // and the leftover space is split into random gaps, so any feasible
    // request succeeds.
    std::vector<int> durations(static_cast<std::size_t>(spec.count));
    std::int64_t occupied = 0;
    for (int e = 0; e < spec.count; ++e) {
        durations[static_cast<std::size_t>(e)] =
            spec.durations[static_cast<std::size_t>(e) % spec.durations.size()];
        occupied += durations[static_cast<std::size_t>(e)];
    }
    const std::int64_t slack =
        spec.region.length() - occupied - static_cast<std::int64_t>(spec.count - 1) * spec.min_gap;
    if (slack < 0)
        throw DataError("region of " + std::to_string(spec.region.length()) +
                        " steps cannot hold " + std::to_string(spec.count) +
                        " events with min_gap " + std::to_string(spec.min_gap));
    std::vector<std::int64_t> offsets(static_cast<std::size_t>(spec.count));
    for (auto& o : offsets)
        o = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(slack + 1)));
    std::sort(offsets.begin(), offsets.end());

    std::int64_t cursor = spec.region.lo;
    for (int e = 0; e < spec.count; ++e) {
        const int duration = durations[static_cast<std::size_t>(e)];
        const std::int64_t start = cursor + offsets[static_cast<std::size_t>(e)] -
                                   (e > 0 ? offsets[static_cast<std::size_t>(e - 1)] : 0);
        cursor = start + duration + spec.min_gap;

        AnomalyLabel label;
        label.start = start;
        label.duration = duration;

        // causes_per_event distinct series by partial shuffle.
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        for (int k = 0; k < spec.causes_per_event; ++k) {
            const auto j =
                k + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - k)));
            std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
            label.root_causes.push_back(pool[static_cast<std::size_t>(k)]);
        }
        std::sort(label.root_causes.begin(), label.root_causes.end());

        for (int cause : label.root_causes) {
            double* row = out.values.data() + static_cast<std::int64_t>(cause) * T;
            const double sigma = range_std(
                series.values.data() + static_cast<std::int64_t>(cause) * T, baseline);
            const double amp = spec.amplitude_sigmas * sigma;
            const double sign = rng.uniform_int(2) == 0 ? 1.0 : -1.0;
            for (std::int64_t t = start; t < start + duration; ++t) {
                const double u = static_cast<double>(t - start) / duration;
                row[t] += sign * amp * std::sin(M_PI * u);
            }
        }
        labels.push_back(std::move(label));
    }
    return {std::move(out), std::move(labels)};
}

std::pair<MultivariateSeries, std::vector<AnomalyLabel>>
inject_anomalies(const MultivariateSeries& series, int count,
                 const std::vector<int>& durations, int causes_per_event,
                 StepRange region, std::uint64_t seed) {
    InjectSpec spec;
    spec.count = count;
    spec.durations = durations;
    spec.causes_per_event = causes_per_event;
    spec.region = region;
    spec.seed = seed;
    return inject_anomalies(series, spec);
}

std::array<SeriesView, 3> split(const MultivariateSeries& series, const SplitSpec& spec) {
    const std::int64_t T = series.length();
    const StepRange ranges[3] = {spec.train, spec.valid, spec.test};
    for (const auto& r : ranges) {
        if (r.lo < 0 || r.hi > T) throw DataError("split range outside [0, T)");
        if (r.lo >= r.hi) throw DataError("split ranges must be non-empty");
    }
    if (spec.train.hi > spec.valid.lo || spec.valid.hi > spec.test.lo)
        throw DataError("split ranges must be disjoint and ordered train < valid < test");
    return {SeriesView{&series, spec.train}, SeriesView{&series, spec.valid},
            SeriesView{&series, spec.test}};
}

void save_labels_json(const std::vector<AnomalyLabel>& labels, const std::string& path) {
    nlohmann::json root;
    root["labels"] = nlohmann::json::array();
    for (const auto& label : labels) {
        root["labels"].push_back({{"start", label.start},
                                  {"duration", label.duration},
                                  {"root_causes", label.root_causes}});
    }
    io::atomic_write(path, root.dump(2) + "\n");
}

std::vector<AnomalyLabel> load_labels_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const std::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    std::vector<AnomalyLabel> labels;
    for (const auto& item : root.at("labels")) {
        AnomalyLabel label;
        label.start = item.at("start").get<std::int64_t>();
        label.duration = item.at("duration").get<int>();
        label.root_causes = item.at("root_causes").get<std::vector<int>>();
        labels.push_back(std::move(label));
    }
    return labels;
}

}  // namespace mscred::ts
