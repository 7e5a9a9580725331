#pragma once

#include "cdul/cache.hpp"
#include "cdul/config.hpp"
#include "cdul/encoder.hpp"
#include "cdul/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <vector>

namespace cdul::cmd {

// Shared plumbing -----------------------------------------------------------

DatasetManifest load_dataset(const ExperimentConfig& config, Split split);
std::unique_ptr<EncoderBackend> make_encoder(const ExperimentConfig& config, int n_classes);
std::filesystem::path cache_path(const ExperimentConfig& config, Split split, CacheKind kind,
                                 int snippet_size);

struct CheckpointData {
    std::string config_json;
    int epoch = 0;
    LatentPseudoLabels latents;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json, int epoch,
                     const nn::Backbone& model, const LatentPseudoLabels& latents);
// Restores weights into `model` (which must match the checkpointed backbone).
CheckpointData load_checkpoint(const std::filesystem::path& path, nn::Backbone& model);

// Commands ------------------------------------------------------------------

// Generates the global cache plus one aggregate cache per configured
// snippet size, resuming interrupted runs, and writes a timing report.
void build_cache(const ExperimentConfig& config, bool quiet = false);

// mAP of the cached global vectors and of each snippet size's final
// pseudo labels against ground truth; CSV + JSON under output_dir.
void eval_pseudo(const ExperimentConfig& config, bool quiet = false);

// Full training run into output_dir: resolved config, metrics.csv,
// checkpoints, run summary, and mAP-vs-epoch SVG curves.
void run_train(const ExperimentConfig& config, bool quiet = false);

// Combines finished run directories into one summary table and overlay
// curves under out_dir.
void report(const std::vector<std::filesystem::path>& run_dirs,
            const std::filesystem::path& out_dir, bool quiet = false);

} // namespace cdul::cmd
