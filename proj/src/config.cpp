#include "mscred/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mscred/io.hpp"

namespace mscred {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoi(item));
    return out;
}

std::string join_ints(const std::vector<int>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(xs[i]);
    }
    return out;
}

}  // namespace

std::uint64_t RunConfig::synth_seed() const { return mix_seed(seed, 0); }
std::uint64_t RunConfig::inject_seed() const { return mix_seed(seed, 1); }
std::uint64_t RunConfig::train_seed() const { return mix_seed(seed, 2); }

void RunConfig::apply(const std::string& key, const std::string& value) {
    auto as_i64 = [&] { return static_cast<std::int64_t>(std::stoll(value)); };
    auto as_int = [&] { return std::stoi(value); };
    auto as_f64 = [&] { return std::stod(value); };
    auto as_bool = [&] {
        if (value == "1" || value == "true" || value == "yes") return true;
        if (value == "0" || value == "false" || value == "no") return false;
        throw ConfigError("boolean key '" + key + "' got '" + value + "'");
    };

    if (key == "data_csv") data_csv = value;
    else if (key == "labels_json") labels_json = value;
    else if (key == "cache_path") cache_path = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "train_log") train_log = value;
    else if (key == "reports_dir") reports_dir = value;
    else if (key == "n") { synth.n = as_int(); net.n = synth.n; }
    else if (key == "T") synth.T = as_i64();
    else if (key == "t0_min") synth.t0_min = as_f64();
    else if (key == "t0_max") synth.t0_max = as_f64();
    else if (key == "omega_min") synth.omega_min = as_f64();
    else if (key == "omega_max") synth.omega_max = as_f64();
    else if (key == "lambda") synth.lambda = as_f64();
    else if (key == "seed") seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "train_lo") splits.train.lo = as_i64();
    else if (key == "train_hi") splits.train.hi = as_i64();
    else if (key == "valid_lo") splits.valid.lo = as_i64();
    else if (key == "valid_hi") splits.valid.hi = as_i64();
    else if (key == "test_lo") splits.test.lo = as_i64();
    else if (key == "test_hi") splits.test.hi = as_i64();
    else if (key == "anomaly_count") anomaly_count = as_int();
    else if (key == "anomaly_durations") anomaly_durations = parse_int_list(value);
    else if (key == "causes_per_event") causes_per_event = as_int();
    else if (key == "anomaly_min_gap") anomaly_min_gap = as_i64();
    else if (key == "amplitude_sigmas") amplitude_sigmas = as_f64();
    else if (key == "scales") net.scales = parse_int_list(value);
    else if (key == "channels") {
        const auto ch = parse_int_list(value);
        if (ch.size() != 4) throw ConfigError("channels needs exactly 4 entries");
        for (int i = 0; i < 4; ++i) net.channels[static_cast<std::size_t>(i)] = ch[static_cast<std::size_t>(i)];
    }
    else if (key == "h") net.h = as_int();
    else if (key == "gap") net.gap = as_int();
    else if (key == "chi") net.attention_rescale = as_f64();
    else if (key == "ablation") net.ablation = model::ablation_from_name(value);
    else if (key == "standardize") net.standardize = as_bool();
    else if (key == "epochs") train.epochs = as_int();
    else if (key == "batch") train.batch = as_int();
    else if (key == "lr") train.lr = as_f64();
    else if (key == "patience") train.patience = as_int();
    else if (key == "theta_quantile") theta_quantile = as_f64();
    else if (key == "beta") beta = as_f64();
    else if (key == "beta_grid") beta_grid = as_bool();
    else if (key == "gap_merge") gap_merge = as_int();
    else if (key == "recall_k") recall_k = as_int();
    else if (key == "threads") threads = as_int();
    else if (key == "verbosity") verbosity = as_int();
    else throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    char num[64];
    auto put_f = [&](const char* key, double v) {
        std::snprintf(num, sizeof num, "%.17g", v);
        out << key << "=" << num << "\n";
    };
    out << "data_csv=" << data_csv << "\n";
    out << "labels_json=" << labels_json << "\n";
    out << "cache_path=" << cache_path << "\n";
    out << "checkpoint=" << checkpoint << "\n";
    out << "train_log=" << train_log << "\n";
    out << "reports_dir=" << reports_dir << "\n";
    out << "n=" << synth.n << "\n";
    out << "T=" << synth.T << "\n";
    put_f("t0_min", synth.t0_min);
    put_f("t0_max", synth.t0_max);
    put_f("omega_min", synth.omega_min);
    put_f("omega_max", synth.omega_max);
    put_f("lambda", synth.lambda);
    out << "seed=" << seed << "\n";
    out << "train_lo=" << splits.train.lo << "\n";
    out << "train_hi=" << splits.train.hi << "\n";
    out << "valid_lo=" << splits.valid.lo << "\n";
    out << "valid_hi=" << splits.valid.hi << "\n";
    out << "test_lo=" << splits.test.lo << "\n";
    out << "test_hi=" << splits.test.hi << "\n";
    out << "anomaly_count=" << anomaly_count << "\n";
    out << "anomaly_durations=" << join_ints(anomaly_durations) << "\n";
    out << "causes_per_event=" << causes_per_event << "\n";
    out << "anomaly_min_gap=" << anomaly_min_gap << "\n";
    put_f("amplitude_sigmas", amplitude_sigmas);
    out << "scales=" << join_ints(net.scales) << "\n";
    out << "channels=" << join_ints({net.channels[0], net.channels[1], net.channels[2],
                                     net.channels[3]}) << "\n";
    out << "h=" << net.h << "\n";
    out << "gap=" << net.gap << "\n";
    put_f("chi", net.attention_rescale);
    out << "ablation=" << model::ablation_name(net.ablation) << "\n";
    out << "standardize=" << (net.standardize ? 1 : 0) << "\n";
    out << "epochs=" << train.epochs << "\n";
    out << "batch=" << train.batch << "\n";
    put_f("lr", train.lr);
    out << "patience=" << train.patience << "\n";
    put_f("theta_quantile", theta_quantile);
    put_f("beta", beta);
    out << "beta_grid=" << (beta_grid ? 1 : 0) << "\n";
    out << "gap_merge=" << gap_merge << "\n";
    out << "recall_k=" << recall_k << "\n";
    out << "threads=" << threads << "\n";
    out << "verbosity=" << verbosity << "\n";
    return out.str();
}

void RunConfig::validate() const {
    synth.validate();
    net.validate();
    if (!(theta_quantile > 0.0 && theta_quantile < 1.0))
        throw ConfigError("theta_quantile must lie in (0, 1)");
    if (!(beta >= 1.0 && beta <= 2.0)) throw ConfigError("beta must lie in [1, 2]");
    if (gap_merge < 0) throw ConfigError("gap_merge must be >= 0");
    if (recall_k < 1) throw ConfigError("recall_k must be >= 1");
}

RunConfig preset_paper_synthetic() {
    RunConfig cfg;  // defaults are the paper-scale values
    return cfg;
}

RunConfig preset_toy() {
    RunConfig cfg;
    cfg.synth.n = 10;
    cfg.synth.T = 2000;
    // Faster cycles than the full preset so the short splits still cover
    // several relative-phase beats between series.
    cfg.synth.omega_min = 8.0;
    cfg.synth.omega_max = 10.0;
    cfg.net.n = 10;
    cfg.net.channels = {8, 16, 32, 64};
    cfg.splits = {{0, 1050}, {1050, 1350}, {1350, 2000}};
    cfg.anomaly_min_gap = 80;
    cfg.train.epochs = 60;
    cfg.train.patience = 10;
    cfg.gap_merge = 2;
    return cfg;
}

RunConfig preset_by_name(const std::string& name) {
    if (name == "paper-synthetic") return preset_paper_synthetic();
    if (name == "toy") return preset_toy();
    throw ConfigError("unknown preset '" + name + "' (expected paper-synthetic or toy)");
}

RunConfig load_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // Trim.
        const auto b = line.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t");
        line = line.substr(b, e - b + 1);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
        try {
            base.apply(line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& ex) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return base;
}

void save_config(const RunConfig& cfg, const std::string& path) {
    io::atomic_write(path, cfg.to_text());
}

}  // namespace mscred
