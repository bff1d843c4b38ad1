#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mscred/config.hpp"

using namespace mscred;

namespace {
std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("presets resolve by name") {
    CHECK(preset_by_name("toy").synth.n == 10);
    CHECK(preset_by_name("paper-synthetic").synth.n == 30);
    CHECK_THROWS_AS(preset_by_name("nope"), ConfigError);
}

TEST_CASE("config round-trips losslessly through its file format") {
    RunConfig cfg = preset_toy();
    cfg.synth.lambda = 0.12345678901234567;
    cfg.train.lr = 3.3e-4;
    cfg.seed = 987654321;
    cfg.net.ablation = model::Ablation::convlstm_last2;
    const std::string path = temp_path("mscred_cfg_roundtrip.cfg");
    save_config(cfg, path);
    const RunConfig loaded = load_config(path, RunConfig{});
    CHECK(loaded.to_text() == cfg.to_text());
    CHECK(loaded.synth.lambda == cfg.synth.lambda);
    CHECK(loaded.train.lr == cfg.train.lr);
    CHECK(loaded.net.ablation == cfg.net.ablation);
}

TEST_CASE("unknown keys and malformed lines are rejected with location") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.apply("frobnicate", "1"), ConfigError);
    const std::string path = temp_path("mscred_cfg_bad.cfg");
    {
        std::ofstream out(path);
        out << "n=10\nnot a key value line\n";
    }
    CHECK_THROWS_WITH_AS(load_config(path), doctest::Contains(":2"), ConfigError);
}

TEST_CASE("comments and blank lines are ignored") {
    const std::string path = temp_path("mscred_cfg_comments.cfg");
    {
        std::ofstream out(path);
        out << "# a comment\n\n  n=12   # trailing comment\n";
    }
    const RunConfig cfg = load_config(path);
    CHECK(cfg.synth.n == 12);
    CHECK(cfg.net.n == 12);
}

TEST_CASE("derived seeds differ per stage but are stable") {
    RunConfig cfg;
    cfg.seed = 5;
    CHECK(cfg.synth_seed() != cfg.inject_seed());
    CHECK(cfg.inject_seed() != cfg.train_seed());
    RunConfig again;
    again.seed = 5;
    CHECK(cfg.synth_seed() == again.synth_seed());
}

TEST_CASE("validation catches out-of-range detection settings") {
    RunConfig cfg = preset_toy();
    cfg.beta = 2.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.beta = 1.0;
    cfg.theta_quantile = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
