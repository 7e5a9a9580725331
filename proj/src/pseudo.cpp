#include "cdul/pseudo.hpp"

#include "cdul/error.hpp"

#include <algorithm>
#include <cmath>

namespace cdul {

SimilarityVector softmax_similarity(std::span<const double> raw_cosines, double temperature,
                                    SimilarityKind kind) {
    if (raw_cosines.empty()) fail(ErrorKind::data, "softmax over empty score vector");
    if (temperature <= 0) fail(ErrorKind::config, "temperature must be > 0");
    for (double v : raw_cosines)
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite similarity input");

    double max_v = *std::max_element(raw_cosines.begin(), raw_cosines.end());
    SimilarityVector out;
    out.kind = kind;
    out.scores.resize(raw_cosines.size());
    double sum = 0.0;
    for (size_t i = 0; i < raw_cosines.size(); ++i) {
        double e = std::exp((raw_cosines[i] - max_v) / temperature);
        out.scores[i] = e;
        sum += e;
    }
    for (double& s : out.scores) s /= sum;
    return out;
}

SnippetGrid tile_grid(int height, int width, int k) {
    if (k < 1) fail(ErrorKind::config, "snippet size must be >= 1");
    if (height < 1 || width < 1) fail(ErrorKind::data, "cannot tile an empty image");
    SnippetGrid grid;
    grid.snippet_size = k;
    for (int r = 0; r < height; r += k) {
        for (int c = 0; c < width; c += k) {
            grid.snippets.push_back({r, c, std::min(r + k, height), std::min(c + k, width)});
        }
    }
    return grid;
}

SnippetGrid tile_image(const Image& image, int k) { return tile_grid(image.height, image.width, k); }

std::vector<double> cosine_scores(const EmbeddingVector& image_embedding,
                                  const TextEmbeddingTable& table) {
    std::vector<double> scores;
    scores.reserve(table.embeddings.size());
    for (const EmbeddingVector& w : table.embeddings)
        scores.push_back(cosine_similarity(image_embedding, w));
    return scores;
}

SimilarityVector global_alignment(const Image& image, const EncoderBackend& backend,
                                  const TextEmbeddingTable& table, double temperature) {
    std::vector<EmbeddingVector> f = backend.embed_images({&image, 1});
    return softmax_similarity(cosine_scores(f.front(), table), temperature, SimilarityKind::global);
}

std::vector<SimilarityVector> local_alignment(const Image& image, int k,
                                              const EncoderBackend& backend,
                                              const TextEmbeddingTable& table, double temperature) {
    SnippetGrid grid = tile_image(image, k);
    std::vector<Image> snippets;
    snippets.reserve(grid.snippets.size());
    for (const SnippetRect& r : grid.snippets)
        snippets.push_back(image.crop(r.row0, r.col0, r.row1, r.col1));

    std::vector<EmbeddingVector> embeddings = backend.embed_images(snippets);
    std::vector<SimilarityVector> locals;
    locals.reserve(embeddings.size());
    for (const EmbeddingVector& g : embeddings)
        locals.push_back(
            softmax_similarity(cosine_scores(g, table), temperature, SimilarityKind::local));
    return locals;
}

SimilarityVector aggregate_local(std::span<const SimilarityVector> locals,
                                 const AggregatorParams& params) {
    if (locals.empty()) fail(ErrorKind::data, "aggregate_local requires at least one local vector");
    if (params.zeta < 0.0 || params.zeta > 1.0)
        fail(ErrorKind::config, "zeta must lie in [0,1]");
    const size_t n_classes = locals.front().scores.size();
    for (const SimilarityVector& v : locals)
        if (v.scores.size() != n_classes)
            fail(ErrorKind::data, "local similarity vectors differ in length");

    SimilarityVector out;
    out.kind = SimilarityKind::aggregate;
    out.scores.resize(n_classes);
    for (size_t i = 0; i < n_classes; ++i) {
        double alpha = locals.front().scores[i];
        double beta = alpha;
        for (const SimilarityVector& v : locals) {
            alpha = std::max(alpha, v.scores[i]);
            beta = std::min(beta, v.scores[i]);
        }
        out.scores[i] = alpha >= params.zeta ? alpha : beta;
    }
    return out;
}

SimilarityVector final_pseudo_labels(const SimilarityVector& global_scores,
                                     const SimilarityVector& aggregate_scores) {
    if (global_scores.scores.size() != aggregate_scores.scores.size())
        fail(ErrorKind::data, "global/aggregate length mismatch in final_pseudo_labels");
    SimilarityVector out;
    out.kind = SimilarityKind::final_mix;
    out.scores.resize(global_scores.scores.size());
    for (size_t i = 0; i < out.scores.size(); ++i)
        out.scores[i] = 0.5 * (global_scores.scores[i] + aggregate_scores.scores[i]);
    return out;
}

PipelineContext PipelineContext::make(const EncoderBackend& backend, const ClassVocabulary& vocab,
                                      std::string_view prompt_template, double zeta,
                                      double temperature_override) {
    PipelineContext ctx;
    ctx.backend = &backend;
    ctx.table = backend.embed_texts(vocab, prompt_template);
    ctx.temperature =
        temperature_override > 0 ? temperature_override : backend.descriptor().temperature;
    ctx.aggregator.zeta = zeta;
    return ctx;
}

SimilarityVector compute_global(const PipelineContext& ctx, const Image& image) {
    return global_alignment(image, *ctx.backend, ctx.table, ctx.temperature);
}

SimilarityVector compute_aggregate(const PipelineContext& ctx, const Image& image, int k) {
    std::vector<SimilarityVector> locals =
        local_alignment(image, k, *ctx.backend, ctx.table, ctx.temperature);
    return aggregate_local(locals, ctx.aggregator);
}

} // namespace cdul
