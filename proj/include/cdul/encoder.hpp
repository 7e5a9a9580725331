#pragma once

#include "cdul/dataset.hpp"
#include "cdul/image.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cdul {

inline constexpr std::string_view kDefaultPromptTemplate = "a photo of a [class]";

// Replaces the single [class] placeholder; config error when the template
// does not contain it exactly once.
std::string render_prompt(std::string_view prompt_template, std::string_view class_name);

struct EmbeddingVector {
    std::vector<float> values;
    float norm = 0.0f; // cached L2 norm

    static EmbeddingVector from_values(std::vector<float> values);
};

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

struct BackendDescriptor {
    std::string name;
    std::string visual_arch;
    int embedding_dim = 0;
    double temperature = 0.0; // tau > 0
    std::string preprocess;   // pinned preprocessing description

    // Embedded in every cache file so stale caches are refused.
    std::string identity() const;
};

struct TextEmbeddingTable {
    ClassVocabulary vocabulary;
    std::vector<EmbeddingVector> embeddings; // one row per class
    std::string prompt_template;
};

class EncoderBackend {
public:
    virtual ~EncoderBackend() = default;
    virtual const BackendDescriptor& descriptor() const = 0;
    virtual std::vector<EmbeddingVector> embed_images(std::span<const Image> images) const = 0;
    virtual TextEmbeddingTable embed_texts(const ClassVocabulary& vocab,
                                           std::string_view prompt_template) const = 0;
};

struct SyntheticBackendParams {
    int n_classes = 5;
    int dim = 16;
    double noise = 0.0;
    std::uint64_t seed = 0;
    double temperature = 0.25;
};

// Deterministic test backend. Text rows are signed-permutation basis
// directions (exactly orthonormal in float32); an image embeds to the
// palette-weighted mixture of its class directions plus seeded Gaussian
// noise keyed on the image content, so identical pixels always produce
// identical vectors regardless of batching.
class SyntheticBackend : public EncoderBackend {
public:
    explicit SyntheticBackend(const SyntheticBackendParams& params);

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    std::vector<EmbeddingVector> embed_images(std::span<const Image> images) const override;
    TextEmbeddingTable embed_texts(const ClassVocabulary& vocab,
                                   std::string_view prompt_template) const override;

    // Direction assigned to one class (unit basis vector up to sign).
    const std::vector<float>& class_direction(int class_index) const;

private:
    EmbeddingVector embed_one(const Image& image) const;

    SyntheticBackendParams params_;
    BackendDescriptor descriptor_;
    std::vector<std::vector<float>> directions_; // n_classes rows of length dim
    std::vector<float> background_direction_;
};

struct RemoteBackendParams {
    std::string endpoint = "http://127.0.0.1:8731";
    std::string weights_hint; // used in the launch instructions on failure
    int batch_size = 32;
    double timeout_seconds = 120.0;
    std::optional<double> temperature_override;
};

// Client for an external encoder service (the pretrained vision-language
// model runs out of process; see tools/clip_server.py and the README for
// the protocol). Descriptor fields come from GET /v1/info.
class RemoteBackend : public EncoderBackend {
public:
    explicit RemoteBackend(const RemoteBackendParams& params);
    ~RemoteBackend() override;

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    std::vector<EmbeddingVector> embed_images(std::span<const Image> images) const override;
    TextEmbeddingTable embed_texts(const ClassVocabulary& vocab,
                                   std::string_view prompt_template) const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    RemoteBackendParams params_;
    BackendDescriptor descriptor_;
};

} // namespace cdul
