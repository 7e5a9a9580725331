#include "cdul/encoder.hpp"

#include "cdul/base64.hpp"
#include "cdul/error.hpp"
#include "cdul/parallel.hpp"
#include "cdul/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <mutex>
#include <random>

#include <httplib.h>
#include <json.hpp>

namespace cdul {

std::string render_prompt(std::string_view prompt_template, std::string_view class_name) {
    static constexpr std::string_view placeholder = "[class]";
    size_t first = prompt_template.find(placeholder);
    if (first == std::string_view::npos)
        fail(ErrorKind::config,
             "prompt template '" + std::string(prompt_template) + "' lacks the [class] placeholder");
    if (prompt_template.find(placeholder, first + 1) != std::string_view::npos)
        fail(ErrorKind::config, "prompt template must contain [class] exactly once");
    std::string out(prompt_template.substr(0, first));
    out += class_name;
    out += prompt_template.substr(first + placeholder.size());
    return out;
}

EmbeddingVector EmbeddingVector::from_values(std::vector<float> values) {
    double sq = 0.0;
    for (float v : values) {
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite embedding entry");
        sq += static_cast<double>(v) * v;
    }
    EmbeddingVector e;
    e.values = std::move(values);
    e.norm = static_cast<float>(std::sqrt(sq));
    return e;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.values.size() != b.values.size())
        fail(ErrorKind::internal, "embedding dimension mismatch in cosine");
    if (a.norm == 0.0f || b.norm == 0.0f)
        fail(ErrorKind::numeric, "cosine with zero-norm embedding");
    double dot = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i)
        dot += static_cast<double>(a.values[i]) * b.values[i];
    return dot / (static_cast<double>(a.norm) * b.norm);
}

std::string BackendDescriptor::identity() const {
    return name + "|" + visual_arch + "|d" + std::to_string(embedding_dim) + "|" + preprocess;
}

SyntheticBackend::SyntheticBackend(const SyntheticBackendParams& params) : params_(params) {
    if (params.n_classes < 1) fail(ErrorKind::config, "synthetic backend needs n_classes >= 1");
    if (params.dim < params.n_classes)
        fail(ErrorKind::config, "synthetic backend needs dim >= n_classes (got dim=" +
                                    std::to_string(params.dim) + ", n_classes=" +
                                    std::to_string(params.n_classes) + ")");
    if (params.noise < 0) fail(ErrorKind::config, "synthetic backend noise must be >= 0");
    if (params.temperature <= 0) fail(ErrorKind::config, "temperature must be > 0");

    // signed permutation of basis vectors: exactly orthonormal in float32
    std::mt19937_64 gen(params.seed);
    std::vector<int> axes(static_cast<size_t>(params.dim));
    for (int i = 0; i < params.dim; ++i) axes[static_cast<size_t>(i)] = i;
    for (int i = params.dim - 1; i > 0; --i) {
        int j = static_cast<int>(rng::below(gen, static_cast<std::uint64_t>(i + 1)));
        std::swap(axes[static_cast<size_t>(i)], axes[static_cast<size_t>(j)]);
    }
    directions_.assign(static_cast<size_t>(params.n_classes),
                       std::vector<float>(static_cast<size_t>(params.dim), 0.0f));
    for (int c = 0; c < params.n_classes; ++c) {
        float sign = (gen() & 1) != 0 ? -1.0f : 1.0f;
        directions_[static_cast<size_t>(c)][static_cast<size_t>(axes[static_cast<size_t>(c)])] = sign;
    }
    background_direction_.assign(static_cast<size_t>(params.dim), 0.0f);
    const float scale = 1.0f / std::sqrt(static_cast<float>(params.n_classes));
    for (int c = 0; c < params.n_classes; ++c)
        for (int d = 0; d < params.dim; ++d)
            background_direction_[static_cast<size_t>(d)] +=
                scale * directions_[static_cast<size_t>(c)][static_cast<size_t>(d)];

    char preproc[96];
    std::snprintf(preproc, sizeof(preproc), "patch[classes=%d,noise=%g,seed=%llu]",
                  params.n_classes, params.noise, static_cast<unsigned long long>(params.seed));
    descriptor_ = {"synthetic", "patch-basis", params.dim, params.temperature, preproc};
}

const std::vector<float>& SyntheticBackend::class_direction(int class_index) const {
    return directions_[static_cast<size_t>(class_index)];
}

EmbeddingVector SyntheticBackend::embed_one(const Image& image) const {
    if (image.empty()) fail(ErrorKind::data, "cannot embed a zero-size image");

    // per-class pixel fractions; tolerance covers 8-bit quantization
    constexpr float tol = 0.003f;
    std::vector<double> weight(static_cast<size_t>(params_.n_classes), 0.0);
    const size_t n_pixels = static_cast<size_t>(image.height) * image.width;
    for (size_t p = 0; p < n_pixels; ++p) {
        const float* px = image.data.data() + p * 3;
        for (int c = 0; c < params_.n_classes; ++c) {
            auto rgb = synthetic_class_color(c, params_.n_classes);
            if (std::fabs(px[0] - rgb[0]) < tol && std::fabs(px[1] - rgb[1]) < tol &&
                std::fabs(px[2] - rgb[2]) < tol) {
                weight[static_cast<size_t>(c)] += 1.0;
                break;
            }
        }
    }
    double matched = 0.0;
    for (double& w : weight) {
        w /= static_cast<double>(n_pixels);
        matched += w;
    }

    std::vector<double> acc(static_cast<size_t>(params_.dim), 0.0);
    for (int c = 0; c < params_.n_classes; ++c)
        for (int d = 0; d < params_.dim; ++d)
            acc[static_cast<size_t>(d)] +=
                weight[static_cast<size_t>(c)] * directions_[static_cast<size_t>(c)][static_cast<size_t>(d)];
    double background = 1.0 - matched;
    for (int d = 0; d < params_.dim; ++d)
        acc[static_cast<size_t>(d)] += background * background_direction_[static_cast<size_t>(d)];

    if (params_.noise > 0) {
        std::mt19937_64 gen(params_.seed ^ image_content_hash(image));
        std::vector<double> g(static_cast<size_t>(params_.dim));
        rng::fill_gaussian<double>(gen, g);
        const double scale = params_.noise / std::sqrt(static_cast<double>(params_.dim));
        for (int d = 0; d < params_.dim; ++d) acc[static_cast<size_t>(d)] += scale * g[static_cast<size_t>(d)];
    }

    std::vector<float> values(static_cast<size_t>(params_.dim));
    for (int d = 0; d < params_.dim; ++d) values[static_cast<size_t>(d)] = static_cast<float>(acc[static_cast<size_t>(d)]);
    return EmbeddingVector::from_values(std::move(values));
}

std::vector<EmbeddingVector> SyntheticBackend::embed_images(std::span<const Image> images) const {
    std::vector<EmbeddingVector> out(images.size());
    par::for_each_index(static_cast<std::int64_t>(images.size()),
                        [&](std::int64_t i) { out[static_cast<size_t>(i)] = embed_one(images[static_cast<size_t>(i)]); });
    return out;
}

TextEmbeddingTable SyntheticBackend::embed_texts(const ClassVocabulary& vocab,
                                                 std::string_view prompt_template) const {
    if (vocab.size() != params_.n_classes)
        fail(ErrorKind::config, "synthetic backend built for " + std::to_string(params_.n_classes) +
                                    " classes, got vocabulary of " + std::to_string(vocab.size()));
    render_prompt(prompt_template, vocab.names.front()); // validates the template
    TextEmbeddingTable table;
    table.vocabulary = vocab;
    table.prompt_template = std::string(prompt_template);
    table.embeddings.reserve(static_cast<size_t>(vocab.size()));
    for (int c = 0; c < vocab.size(); ++c)
        table.embeddings.push_back(EmbeddingVector::from_values(directions_[static_cast<size_t>(c)]));
    return table;
}

// ---------------------------------------------------------------------------
// Remote backend
// ---------------------------------------------------------------------------

struct RemoteBackend::Impl {
    httplib::Client client;
    std::mutex mutex; // httplib clients are not safe for concurrent requests
    explicit Impl(const std::string& endpoint) : client(endpoint) {}
};

namespace {

[[noreturn]] void backend_unreachable(const RemoteBackendParams& params, const std::string& detail) {
    std::string weights = params.weights_hint.empty() ? "openai" : params.weights_hint;
    fail(ErrorKind::backend,
         "encoder service unreachable at " + params.endpoint + " (" + detail + "). " +
             "Start one with: python tools/clip_server.py --model RN50 --pretrained " + weights +
             " --port <port>; see README section 'Real encoder backend'.");
}

nlohmann::json post_json(httplib::Client& client, std::mutex& mutex,
                         const RemoteBackendParams& params, const std::string& path,
                         const nlohmann::json& body) {
    std::lock_guard<std::mutex> lock(mutex);
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) backend_unreachable(params, httplib::to_string(res.error()));
    if (res->status != 200)
        fail(ErrorKind::backend, "encoder service error on " + path + ": HTTP " +
                                     std::to_string(res->status) + " " + res->body);
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::backend, "invalid JSON from encoder service on " + path + ": " + e.what());
    }
}

std::vector<float> decode_f32(const std::string& b64, int expected_dim) {
    std::vector<std::uint8_t> bytes = base64_decode(b64);
    if (bytes.size() != static_cast<size_t>(expected_dim) * 4)
        fail(ErrorKind::backend, "encoder service returned embedding of wrong size");
    std::vector<float> values(static_cast<size_t>(expected_dim));
    std::memcpy(values.data(), bytes.data(), bytes.size());
    return values;
}

} // namespace

RemoteBackend::RemoteBackend(const RemoteBackendParams& params)
    : impl_(std::make_unique<Impl>(params.endpoint)), params_(params) {
    auto timeout = std::chrono::milliseconds(static_cast<int>(params.timeout_seconds * 1000));
    impl_->client.set_connection_timeout(timeout);
    impl_->client.set_read_timeout(timeout);
    impl_->client.set_write_timeout(timeout);

    auto res = impl_->client.Get("/v1/info");
    if (!res) backend_unreachable(params_, httplib::to_string(res.error()));
    if (res->status != 200)
        fail(ErrorKind::backend, "encoder service /v1/info returned HTTP " + std::to_string(res->status));
    nlohmann::json info;
    try {
        info = nlohmann::json::parse(res->body);
        descriptor_.name = info.at("name").get<std::string>();
        descriptor_.visual_arch = info.at("visual_arch").get<std::string>();
        descriptor_.embedding_dim = info.at("embedding_dim").get<int>();
        descriptor_.temperature = info.at("temperature").get<double>();
        descriptor_.preprocess = info.at("preprocess").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::backend, std::string("malformed /v1/info response: ") + e.what());
    }
    if (params_.temperature_override.has_value()) descriptor_.temperature = *params_.temperature_override;
    if (descriptor_.temperature <= 0)
        fail(ErrorKind::backend, "encoder service reported non-positive temperature");
    if (descriptor_.embedding_dim <= 0)
        fail(ErrorKind::backend, "encoder service reported non-positive embedding_dim");
}

RemoteBackend::~RemoteBackend() = default;

std::vector<EmbeddingVector> RemoteBackend::embed_images(std::span<const Image> images) const {
    std::vector<EmbeddingVector> out;
    out.reserve(images.size());
    const size_t batch = static_cast<size_t>(std::max(1, params_.batch_size));
    for (size_t begin = 0; begin < images.size(); begin += batch) {
        size_t end = std::min(images.size(), begin + batch);
        nlohmann::json body;
        auto& arr = body["images"] = nlohmann::json::array();
        for (size_t i = begin; i < end; ++i) {
            const Image& img = images[i];
            if (img.empty()) fail(ErrorKind::data, "cannot embed a zero-size image");
            arr.push_back({{"height", img.height},
                           {"width", img.width},
                           {"pixels_b64", base64_encode(img.data.data(), img.data.size() * 4)}});
        }
        nlohmann::json reply =
            post_json(impl_->client, impl_->mutex, params_, "/v1/embed_images", body);
        const auto& embs = reply.at("embeddings_b64");
        if (embs.size() != end - begin)
            fail(ErrorKind::backend, "encoder service returned wrong embedding count");
        for (const auto& e : embs)
            out.push_back(EmbeddingVector::from_values(
                decode_f32(e.get<std::string>(), descriptor_.embedding_dim)));
    }
    return out;
}

TextEmbeddingTable RemoteBackend::embed_texts(const ClassVocabulary& vocab,
                                              std::string_view prompt_template) const {
    nlohmann::json body;
    auto& texts = body["texts"] = nlohmann::json::array();
    for (const std::string& name : vocab.names)
        texts.push_back(render_prompt(prompt_template, name));
    nlohmann::json reply =
        post_json(impl_->client, impl_->mutex, params_, "/v1/embed_texts", body);
    const auto& embs = reply.at("embeddings_b64");
    if (static_cast<int>(embs.size()) != vocab.size())
        fail(ErrorKind::backend, "encoder service returned wrong text embedding count");
    TextEmbeddingTable table;
    table.vocabulary = vocab;
    table.prompt_template = std::string(prompt_template);
    for (const auto& e : embs)
        table.embeddings.push_back(EmbeddingVector::from_values(
            decode_f32(e.get<std::string>(), descriptor_.embedding_dim)));
    return table;
}

} // namespace cdul
