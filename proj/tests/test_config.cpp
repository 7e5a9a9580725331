#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdul/config.hpp"
#include "cdul/error.hpp"

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace cdul;

namespace {

ExperimentConfig load_with(std::vector<std::string> overrides) {
    return ExperimentConfig::load({}, overrides);
}

fs::path write_config(const std::string& text) {
    fs::path path = fs::temp_directory_path() / "cdul_test_config.json";
    std::ofstream out(path, std::ios::binary);
    out << text;
    return path;
}

} // namespace

TEST_CASE("defaults round trip through json") {
    ExperimentConfig config;
    ExperimentConfig back = ExperimentConfig::from_json_string(config.to_json_string());
    CHECK(back.to_json_string() == config.to_json_string());
    CHECK(back.pseudo.zeta == doctest::Approx(0.5));
    CHECK(back.train.batch_size == 8);
    CHECK(back.train.learning_rate == doctest::Approx(1e-5));
    CHECK(back.train.sigma == doctest::Approx(1.0));
    CHECK(back.pseudo.prompt_template == "a photo of a [class]");
}

TEST_CASE("partial config files merge over defaults") {
    fs::path path = write_config(R"({
      "dataset": {"kind": "synthetic", "root": "/tmp/ds", "synthetic": {"n_samples": 32}},
      "train": {"epochs": 3}
    })");
    ExperimentConfig config = ExperimentConfig::load(path, {});
    CHECK(config.dataset.root == "/tmp/ds");
    CHECK(config.dataset.synthetic.n_samples == 32);
    CHECK(config.dataset.synthetic.n_classes == 5); // default survives
    CHECK(config.train.epochs == 3);
    CHECK(config.train.batch_size == 8);
}

TEST_CASE("dotted overrides") {
    std::vector<std::string> overrides{
        "train.pl_update_frequency=10",
        "pseudo.snippet_sizes=[4,8]",
        "backend.synthetic.noise=0.25",
        "dataset.root=/data/voc",
        "train.psi_normalized=true",
    };
    ExperimentConfig config = ExperimentConfig::load({}, overrides);
    CHECK(config.train.pl_update_frequency == 10);
    CHECK(config.pseudo.snippet_sizes == std::vector<int>{4, 8});
    CHECK(config.backend.synthetic.noise == doctest::Approx(0.25));
    CHECK(config.dataset.root == "/data/voc");
    CHECK(config.train.psi_normalized);
}

TEST_CASE("unknown keys are config errors") {
    std::vector<std::string> bad_override{"train.learning_rat=0.1"};
    CHECK_THROWS_AS(ExperimentConfig::load({}, bad_override), Error);

    fs::path path = write_config(R"({"trian": {"epochs": 3}})");
    try {
        ExperimentConfig::load(path, {});
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(e.exit_code() == 2);
        CHECK(std::string(e.what()).find("trian") != std::string::npos);
    }
}

TEST_CASE("invalid values are rejected") {
    CHECK_THROWS_AS(load_with({"pseudo.zeta=1.5"}), Error);
    CHECK_THROWS_AS(load_with({"pseudo.init_source=mean"}), Error);
    CHECK_THROWS_AS(load_with({"dataset.kind=imagenet"}), Error);
    CHECK_THROWS_AS(load_with({"dataset.split=test"}), Error);
    CHECK_THROWS_AS(load_with({"pseudo.snippet_sizes=[0]"}), Error);
    CHECK_THROWS_AS(load_with({"not-an-assignment"}), Error);
    fs::path path = write_config("{ this is not json");
    CHECK_THROWS_AS(ExperimentConfig::load(path, {}), Error);
    CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json", {}), Error);
}

TEST_CASE("bare strings in overrides need no quoting") {
    ExperimentConfig config = load_with({"train.optimizer=sgd"});
    CHECK(config.train.optimizer == "sgd");
}

TEST_CASE("saved config reloads identically") {
    ExperimentConfig config = load_with({"seed=9", "train.epochs=2"});
    fs::path path = fs::temp_directory_path() / "cdul_saved_config.json";
    config.save(path);
    ExperimentConfig back = ExperimentConfig::load(path, {});
    CHECK(back.to_json_string() == config.to_json_string());
    CHECK(back.seed == 9);
}
