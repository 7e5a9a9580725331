#include "cdul/commands.hpp"
#include "cdul/error.hpp"
#include "cdul/version.hpp"

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

int main(int argc, char** argv) {
    CLI::App app{"CLIP-driven unsupervised multi-label classification pipeline"};
    app.set_version_flag("--version", cdul::kVersionString);
    app.require_subcommand(1);

    std::string config_file;
    std::vector<std::string> overrides;
    auto add_config_options = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "experiment config JSON file");
        sub->add_option("overrides", overrides,
                        "dotted config overrides, e.g. train.pl_update_frequency=10");
    };

    CLI::App* cmd_build = app.add_subcommand(
        "build-cache", "generate global and aggregate similarity-vector caches");
    add_config_options(cmd_build);
    CLI::App* cmd_eval =
        app.add_subcommand("eval-pseudo", "evaluate cached pseudo labels against ground truth");
    add_config_options(cmd_eval);
    CLI::App* cmd_train = app.add_subcommand("train", "gradient-alignment training run");
    add_config_options(cmd_train);

    CLI::App* cmd_report = app.add_subcommand("report", "combine finished runs into one report");
    std::string report_out = "report";
    std::vector<std::string> report_runs;
    cmd_report->add_option("--out", report_out, "output directory");
    cmd_report->add_option("runs", report_runs, "run directories to combine")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_report->parsed()) {
            std::vector<std::filesystem::path> runs(report_runs.begin(), report_runs.end());
            cdul::cmd::report(runs, report_out);
            return 0;
        }
        cdul::ExperimentConfig config = cdul::ExperimentConfig::load(config_file, overrides);
        if (cmd_build->parsed()) cdul::cmd::build_cache(config);
        else if (cmd_eval->parsed()) cdul::cmd::eval_pseudo(config);
        else if (cmd_train->parsed()) cdul::cmd::run_train(config);
        return 0;
    } catch (const cdul::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
}
