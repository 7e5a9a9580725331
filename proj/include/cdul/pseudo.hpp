#pragma once

#include "cdul/encoder.hpp"
#include "cdul/image.hpp"

#include <span>
#include <vector>

namespace cdul {

enum class SimilarityKind { global, local, aggregate, final_mix };

// Per-class soft score vector. global/local are softmax outputs (entries in
// (0,1), sum 1); aggregate/final_mix are plain scores in (0,1) and are
// deliberately left unnormalized.
struct SimilarityVector {
    std::vector<double> scores;
    SimilarityKind kind = SimilarityKind::global;
};

struct SnippetRect {
    int row0, col0, row1, col1; // half-open pixel bounds
    int height() const { return row1 - row0; }
    int width() const { return col1 - col0; }
};

struct SnippetGrid {
    int snippet_size = 0;
    std::vector<SnippetRect> snippets; // row-major
    int count() const { return static_cast<int>(snippets.size()); }
};

struct AggregatorParams {
    double zeta = 0.5; // threshold in [0,1]
};

// Temperature-scaled softmax with max-subtraction; computed in double.
SimilarityVector softmax_similarity(std::span<const double> raw_cosines, double temperature,
                                    SimilarityKind kind = SimilarityKind::global);

// Non-overlapping k x k tiles in row-major order; right/bottom remainders
// become partial tiles so every pixel is covered exactly once. A k that
// exceeds both dimensions yields one tile spanning the whole image.
SnippetGrid tile_grid(int height, int width, int k);
SnippetGrid tile_image(const Image& image, int k);

std::vector<double> cosine_scores(const EmbeddingVector& image_embedding,
                                  const TextEmbeddingTable& table);

SimilarityVector global_alignment(const Image& image, const EncoderBackend& backend,
                                  const TextEmbeddingTable& table, double temperature);

std::vector<SimilarityVector> local_alignment(const Image& image, int k,
                                              const EncoderBackend& backend,
                                              const TextEmbeddingTable& table, double temperature);

// Min-max rule per class: alpha = max over snippets, beta = min; the result
// is alpha when alpha >= zeta (ties take alpha), otherwise beta.
SimilarityVector aggregate_local(std::span<const SimilarityVector> locals,
                                 const AggregatorParams& params);

// Elementwise mean of the global and aggregate vectors; the training
// stage's initial pseudo labels.
SimilarityVector final_pseudo_labels(const SimilarityVector& global_scores,
                                     const SimilarityVector& aggregate_scores);

// Bundles what the per-image pipeline needs. tau defaults to the backend's
// learned temperature; callers may override it via config.
struct PipelineContext {
    const EncoderBackend* backend = nullptr;
    TextEmbeddingTable table;
    double temperature = 0.0;
    AggregatorParams aggregator;

    static PipelineContext make(const EncoderBackend& backend, const ClassVocabulary& vocab,
                                std::string_view prompt_template, double zeta,
                                double temperature_override = 0.0);
};

SimilarityVector compute_global(const PipelineContext& ctx, const Image& image);
SimilarityVector compute_aggregate(const PipelineContext& ctx, const Image& image, int k);

} // namespace cdul
