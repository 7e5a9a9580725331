#pragma once

#include "cdul/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cdul {

struct SyntheticDatasetConfig {
    int n_samples = 64;
    int n_classes = 5;
    int image_size = 32;
};

struct DatasetConfig {
    std::string kind = "synthetic"; // synthetic | voc
    std::string root;               // VOC root, or where synthetic images go
    std::string split = "train";
    bool include_difficult = true;
    SyntheticDatasetConfig synthetic;
};

struct SyntheticBackendConfig {
    int dim = 16;
    double noise = 0.1;
    std::uint64_t seed = 0;
    double temperature = 0.25;
};

struct BackendConfig {
    std::string name = "synthetic"; // synthetic | remote
    std::string endpoint = "http://127.0.0.1:8731";
    std::string weights;            // forwarded to the service launch hint
    double temperature_override = 0.0; // 0 keeps the backend's learned value
    SyntheticBackendConfig synthetic;
};

struct PseudoConfig {
    std::vector<int> snippet_sizes = {8, 16};
    double zeta = 0.5;
    std::string init_source = "final"; // final | global; final uses the first snippet size
    std::string prompt_template = "a photo of a [class]";
};

// One experiment, fully declarative. Every command writes the resolved
// form next to its outputs so runs are self-describing.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";
    std::string cache_dir = "caches";
    DatasetConfig dataset;
    BackendConfig backend;
    PseudoConfig pseudo;
    TrainConfig train;

    std::string to_json_string() const;
    static ExperimentConfig from_json_string(const std::string& text);

    // Optional file plus dotted overrides such as
    //   train.pl_update_frequency=10 pseudo.snippet_sizes=[8,16]
    // Unknown keys are config errors.
    static ExperimentConfig load(const std::filesystem::path& config_file,
                                 std::span<const std::string> overrides);

    void save(const std::filesystem::path& path) const;
};

} // namespace cdul
