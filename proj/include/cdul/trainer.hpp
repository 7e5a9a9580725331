#pragma once

#include "cdul/dataset.hpp"
#include "cdul/matrix.hpp"
#include "cdul/nn.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cdul {

// Confidence modulator peaking at 0.5: uncertain pseudo labels move most.
// The unnormalized kernel is the default; the normalized density just
// rescales the step by 1/(sigma*sqrt(2*pi)) and is kept for ablation.
struct GaussianWeight {
    double sigma = 1.0;
    bool normalized = false;

    double operator()(double y) const;
    void validate() const;
};

// Mean over all elements of the per-class Bernoulli KL
//   y_u*log(y_u/y_p) + (1-y_u)*log((1-y_u)/(1-y_p)).
// Both matrices must lie strictly inside (0,1); clamping happens upstream.
double kl_loss(const Matrix& y_p, const Matrix& y_u);

// Analytic d kl_loss / d y_u with y_p held fixed:
//   (1/M) * (log(y_u/y_p) - log((1-y_u)/(1-y_p))), M = element count.
Matrix pseudo_label_gradient(const Matrix& y_p, const Matrix& y_u);

// Softmax KL over classes for the flag-gated ablation loss. y_u rows are
// normalized to sum 1 before comparison.
double categorical_kl_loss(const Matrix& y_p_softmax, const Matrix& y_u);
Matrix categorical_pseudo_label_gradient(const Matrix& y_p_softmax, const Matrix& y_u);

enum class LatentMapping { clamp, sigmoid };
LatentMapping latent_mapping_from_name(std::string_view name);

// Trainable latent parameters of the pseudo labels plus the latent->label
// mapping. Labels stay strictly inside (0,1) whatever the update history.
struct LatentPseudoLabels {
    static constexpr double kClampEpsilon = 1e-4;

    Matrix latent;
    LatentMapping mapping = LatentMapping::clamp;

    static LatentPseudoLabels init_from_scores(const Matrix& scores,
                                               LatentMapping mapping = LatentMapping::clamp);

    Matrix labels() const;

    // One refinement step: latent -= psi(y_u) .* grad, with y_p held constant.
    void update(const Matrix& y_p, const GaussianWeight& psi);
};

struct TrainConfig {
    int epochs = 20;
    int pl_update_frequency = 1; // F: epochs between pseudo-label updates
    int batch_size = 8;
    double learning_rate = 1e-5;
    std::uint64_t seed = 0;
    std::string backbone = "small";
    std::string backbone_weights; // optional checkpoint to start from
    std::string optimizer = "adam";
    double sigma = 1.0;
    bool psi_normalized = false;
    std::string latent_mapping = "clamp";   // or "sigmoid"
    std::string loss = "bernoulli_kl";      // or "categorical_kl"

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0; // 1-based
    double train_map = 0.0;
    double pl_map = 0.0;
    double val_map = 0.0;
    double mean_loss = 0.0;
};

struct TrainHooks {
    std::function<void(const EpochMetrics&)> on_epoch;
    std::function<void(int epoch, const nn::Backbone&, const LatentPseudoLabels&)> on_checkpoint;
    std::function<void(const std::string& diagnostic_json)> on_divergence;
};

struct TrainResult {
    std::vector<EpochMetrics> log;
    LatentPseudoLabels latents;
    std::unique_ptr<nn::Backbone> model;
    int pseudo_label_updates = 0;
};

// Alternating optimization: network parameters against fixed y_u each
// epoch; after every F-th epoch's parameter updates, one full-dataset
// pseudo-label update with the network frozen. Ground truth is consumed
// only for the metric columns, never by the updates.
TrainResult train(const DatasetManifest& train_manifest, const DatasetManifest* val_manifest,
                  const Matrix& initial_pseudo, const TrainConfig& config,
                  const TrainHooks& hooks = {});

} // namespace cdul
