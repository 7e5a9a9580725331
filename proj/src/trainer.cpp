#include "cdul/trainer.hpp"

#include "cdul/error.hpp"
#include "cdul/metrics.hpp"
#include "cdul/parallel.hpp"
#include "cdul/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace cdul {

namespace {

constexpr double kProbFloor = 1e-12; // guards log() against saturated sigmoids

void check_open_unit(const Matrix& m, const char* what) {
    for (double v : m.data)
        if (!(v > 0.0 && v < 1.0))
            fail(ErrorKind::numeric, std::string(what) + " outside the open interval (0,1)");
}

} // namespace

double GaussianWeight::operator()(double y) const {
    double d = y - 0.5;
    double value = std::exp(-(d * d) / (2.0 * sigma * sigma));
    if (normalized) value /= sigma * std::sqrt(2.0 * M_PI);
    return value;
}

void GaussianWeight::validate() const {
    if (sigma <= 0) fail(ErrorKind::config, "sigma must be > 0");
}

double kl_loss(const Matrix& y_p, const Matrix& y_u) {
    if (!y_p.same_shape(y_u)) fail(ErrorKind::internal, "kl_loss shape mismatch");
    check_open_unit(y_p, "predicted labels");
    check_open_unit(y_u, "pseudo labels");
    double total = 0.0;
    for (size_t i = 0; i < y_p.data.size(); ++i) {
        const double p = y_p.data[i];
        const double u = y_u.data[i];
        total += u * std::log(u / p) + (1.0 - u) * std::log((1.0 - u) / (1.0 - p));
    }
    return total / static_cast<double>(y_p.data.size());
}

Matrix pseudo_label_gradient(const Matrix& y_p, const Matrix& y_u) {
    if (!y_p.same_shape(y_u)) fail(ErrorKind::internal, "gradient shape mismatch");
    check_open_unit(y_p, "predicted labels");
    check_open_unit(y_u, "pseudo labels");
    Matrix grad(y_p.rows, y_p.cols);
    const double inv_m = 1.0 / static_cast<double>(y_p.data.size());
    par::for_each_index(static_cast<std::int64_t>(grad.data.size()), [&](std::int64_t i) {
        const double p = y_p.data[static_cast<size_t>(i)];
        const double u = y_u.data[static_cast<size_t>(i)];
        grad.data[static_cast<size_t>(i)] =
            inv_m * (std::log(u / p) - std::log((1.0 - u) / (1.0 - p)));
    });
    return grad;
}

double categorical_kl_loss(const Matrix& y_p_softmax, const Matrix& y_u) {
    if (!y_p_softmax.same_shape(y_u)) fail(ErrorKind::internal, "kl_loss shape mismatch");
    check_open_unit(y_p_softmax, "predicted distribution");
    check_open_unit(y_u, "pseudo labels");
    double total = 0.0;
    for (int r = 0; r < y_u.rows; ++r) {
        double row_sum = 0.0;
        for (int c = 0; c < y_u.cols; ++c) row_sum += y_u.at(r, c);
        for (int c = 0; c < y_u.cols; ++c) {
            const double q = y_u.at(r, c) / row_sum;
            total += q * std::log(q / y_p_softmax.at(r, c));
        }
    }
    return total / static_cast<double>(y_u.rows);
}

Matrix categorical_pseudo_label_gradient(const Matrix& y_p_softmax, const Matrix& y_u) {
    if (!y_p_softmax.same_shape(y_u)) fail(ErrorKind::internal, "gradient shape mismatch");
    Matrix grad(y_u.rows, y_u.cols);
    const double inv_n = 1.0 / static_cast<double>(y_u.rows);
    for (int r = 0; r < y_u.rows; ++r) {
        double row_sum = 0.0;
        for (int c = 0; c < y_u.cols; ++c) row_sum += y_u.at(r, c);
        double row_kl = 0.0;
        for (int c = 0; c < y_u.cols; ++c) {
            const double q = y_u.at(r, c) / row_sum;
            row_kl += q * std::log(q / y_p_softmax.at(r, c));
        }
        for (int c = 0; c < y_u.cols; ++c) {
            const double q = y_u.at(r, c) / row_sum;
            grad.at(r, c) = inv_n / row_sum * (std::log(q / y_p_softmax.at(r, c)) - row_kl);
        }
    }
    return grad;
}

LatentMapping latent_mapping_from_name(std::string_view name) {
    if (name == "clamp") return LatentMapping::clamp;
    if (name == "sigmoid") return LatentMapping::sigmoid;
    fail(ErrorKind::config, "unknown latent mapping '" + std::string(name) + "'");
}

LatentPseudoLabels LatentPseudoLabels::init_from_scores(const Matrix& scores, LatentMapping mapping) {
    LatentPseudoLabels out;
    out.mapping = mapping;
    out.latent = scores;
    for (double& v : out.latent.data) {
        double clamped = std::clamp(v, kClampEpsilon, 1.0 - kClampEpsilon);
        // sigmoid mapping stores logits so labels() reproduces the scores
        v = mapping == LatentMapping::clamp ? clamped : std::log(clamped / (1.0 - clamped));
    }
    return out;
}

Matrix LatentPseudoLabels::labels() const {
    Matrix out = latent;
    if (mapping == LatentMapping::clamp) {
        for (double& v : out.data) v = std::clamp(v, kClampEpsilon, 1.0 - kClampEpsilon);
    } else {
        for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    }
    return out;
}

void LatentPseudoLabels::update(const Matrix& y_p, const GaussianWeight& psi) {
    if (!y_p.same_shape(latent)) fail(ErrorKind::internal, "pseudo-label update shape mismatch");
    psi.validate();
    const Matrix y_u = labels();
    const Matrix grad = pseudo_label_gradient(y_p, y_u);
    par::for_each_index(static_cast<std::int64_t>(latent.data.size()), [&](std::int64_t i) {
        latent.data[static_cast<size_t>(i)] -=
            psi(y_u.data[static_cast<size_t>(i)]) * grad.data[static_cast<size_t>(i)];
    });
}

void TrainConfig::validate() const {
    if (epochs < 1) fail(ErrorKind::config, "epochs must be >= 1");
    if (pl_update_frequency < 1) fail(ErrorKind::config, "pl_update_frequency must be >= 1");
    if (batch_size < 1) fail(ErrorKind::config, "batch_size must be >= 1");
    if (learning_rate <= 0) fail(ErrorKind::config, "learning_rate must be > 0");
    if (sigma <= 0) fail(ErrorKind::config, "sigma must be > 0");
    if (loss != "bernoulli_kl" && loss != "categorical_kl")
        fail(ErrorKind::config, "unknown loss '" + loss + "'");
    latent_mapping_from_name(latent_mapping);
}

namespace {

// Preloaded train/val images, resized to the backbone input.
class ImageStore {
public:
    ImageStore(const DatasetManifest& manifest, int input_size) : input_size_(input_size) {
        images_.resize(manifest.samples.size());
        par::for_each_index(static_cast<std::int64_t>(manifest.samples.size()), [&](std::int64_t i) {
            Image img = load_image(manifest.samples[static_cast<size_t>(i)].image_path);
            images_[static_cast<size_t>(i)] = resize_bilinear(img, input_size_, input_size_);
        });
    }

    nn::Tensor batch(std::span<const int> indices) const {
        std::vector<Image> imgs;
        imgs.reserve(indices.size());
        for (int i : indices) imgs.push_back(images_[static_cast<size_t>(i)]);
        return nn::tensor_from_images(imgs);
    }

    size_t size() const { return images_.size(); }

private:
    int input_size_;
    std::vector<Image> images_;
};

Matrix sigmoid_probabilities(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    par::for_each_index(static_cast<std::int64_t>(out.data.size()), [&](std::int64_t i) {
        const double z = logits.data[static_cast<size_t>(i)];
        double p = 1.0 / (1.0 + std::exp(-z));
        out.data[static_cast<size_t>(i)] = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
    });
    return out;
}

Matrix softmax_probabilities(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    for (int r = 0; r < logits.rows; ++r) {
        double max_v = logits.at(r, 0);
        for (int c = 1; c < logits.cols; ++c) max_v = std::max(max_v, logits.at(r, c));
        double sum = 0.0;
        for (int c = 0; c < logits.cols; ++c) {
            double e = std::exp(logits.at(r, c) - max_v);
            out.at(r, c) = e;
            sum += e;
        }
        for (int c = 0; c < logits.cols; ++c)
            out.at(r, c) = std::clamp(out.at(r, c) / sum, kProbFloor, 1.0 - kProbFloor);
    }
    return out;
}

Matrix forward_all(nn::Backbone& net, const ImageStore& store, int batch_size, bool softmax) {
    const int n = static_cast<int>(store.size());
    Matrix probs(n, net.n_classes());
    for (int begin = 0; begin < n; begin += batch_size) {
        const int end = std::min(n, begin + batch_size);
        std::vector<int> idx(static_cast<size_t>(end - begin));
        std::iota(idx.begin(), idx.end(), begin);
        Matrix logits = net.forward(store.batch(idx));
        Matrix p = softmax ? softmax_probabilities(logits) : sigmoid_probabilities(logits);
        for (int r = 0; r < p.rows; ++r)
            for (int c = 0; c < p.cols; ++c) probs.at(begin + r, c) = p.at(r, c);
    }
    return probs;
}

std::string divergence_dump(int epoch, double loss, const Matrix& y_u) {
    nlohmann::ordered_json j;
    j["event"] = "divergence";
    j["epoch"] = epoch;
    j["loss"] = std::isfinite(loss) ? nlohmann::ordered_json(loss) : nlohmann::ordered_json("non-finite");
    double lo = 1.0, hi = 0.0;
    for (double v : y_u.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    j["pseudo_label_min"] = lo;
    j["pseudo_label_max"] = hi;
    return j.dump(2);
}

} // namespace

TrainResult train(const DatasetManifest& train_manifest, const DatasetManifest* val_manifest,
                  const Matrix& initial_pseudo, const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    const int n_train = static_cast<int>(train_manifest.samples.size());
    const int n_classes = train_manifest.vocabulary.size();
    if (initial_pseudo.rows != n_train || initial_pseudo.cols != n_classes)
        fail(ErrorKind::data, "initial pseudo labels must cover every train sample (" +
                                  std::to_string(initial_pseudo.rows) + "x" +
                                  std::to_string(initial_pseudo.cols) + " vs " +
                                  std::to_string(n_train) + "x" + std::to_string(n_classes) + ")");

    const bool categorical = config.loss == "categorical_kl";

    TrainResult result;
    result.model = nn::make_backbone(config.backbone, n_classes, config.seed);
    if (!config.backbone_weights.empty()) {
        std::ifstream in(config.backbone_weights, std::ios::binary);
        if (!in) fail(ErrorKind::io, "cannot open backbone weights " + config.backbone_weights);
        result.model->load(in);
    }
    result.latents = LatentPseudoLabels::init_from_scores(
        initial_pseudo, latent_mapping_from_name(config.latent_mapping));

    const GaussianWeight psi{config.sigma, config.psi_normalized};
    psi.validate();

    auto optimizer = nn::make_optimizer(config.optimizer, config.learning_rate);
    const std::vector<nn::Param*> params = result.model->params();

    const ImageStore train_store(train_manifest, result.model->input_size());
    std::optional<ImageStore> val_store;
    if (val_manifest != nullptr) val_store.emplace(*val_manifest, result.model->input_size());

    const Matrix train_targets = targets_from_manifest(train_manifest);
    const Matrix val_targets = val_manifest != nullptr ? targets_from_manifest(*val_manifest) : Matrix();

    std::mt19937_64 shuffle_gen(config.seed ^ 0x9E3779B97F4A7C15ull);
    std::vector<int> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

    Matrix y_u = result.latents.labels();

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng::shuffle<int>(shuffle_gen, order);

        double loss_sum = 0.0;
        double loss_weight = 0.0;
        for (int begin = 0; begin < n_train; begin += config.batch_size) {
            const int end = std::min(n_train, begin + config.batch_size);
            std::span<const int> idx(order.data() + begin, static_cast<size_t>(end - begin));

            Matrix batch_targets(end - begin, n_classes);
            for (int r = 0; r < batch_targets.rows; ++r)
                for (int c = 0; c < n_classes; ++c)
                    batch_targets.at(r, c) = y_u.at(idx[static_cast<size_t>(r)], c);

            Matrix logits = result.model->forward(train_store.batch(idx));
            bool finite = true;
            for (double v : logits.data) finite &= std::isfinite(v);
            if (!finite) {
                std::string dump = divergence_dump(epoch, std::numeric_limits<double>::quiet_NaN(), y_u);
                if (hooks.on_divergence) hooks.on_divergence(dump);
                fail(ErrorKind::numeric, "training diverged (non-finite network output) at epoch " +
                                             std::to_string(epoch));
            }
            Matrix y_p = categorical ? softmax_probabilities(logits) : sigmoid_probabilities(logits);
            double batch_loss =
                categorical ? categorical_kl_loss(y_p, batch_targets) : kl_loss(y_p, batch_targets);

            if (!std::isfinite(batch_loss)) {
                std::string dump = divergence_dump(epoch, batch_loss, y_u);
                if (hooks.on_divergence) hooks.on_divergence(dump);
                fail(ErrorKind::numeric, "training diverged (non-finite loss) at epoch " +
                                             std::to_string(epoch));
            }
            loss_sum += batch_loss * static_cast<double>(end - begin);
            loss_weight += static_cast<double>(end - begin);

            // dL/dlogit: (y_p - y_u)/(B*C) for Bernoulli KL through sigmoid,
            // (softmax - normalized y_u)/B for the categorical variant
            Matrix dlogits(y_p.rows, y_p.cols);
            if (categorical) {
                for (int r = 0; r < y_p.rows; ++r) {
                    double row_sum = 0.0;
                    for (int c = 0; c < n_classes; ++c) row_sum += batch_targets.at(r, c);
                    for (int c = 0; c < n_classes; ++c)
                        dlogits.at(r, c) = (y_p.at(r, c) - batch_targets.at(r, c) / row_sum) /
                                           static_cast<double>(y_p.rows);
                }
            } else {
                const double inv_m = 1.0 / static_cast<double>(y_p.data.size());
                for (size_t i = 0; i < dlogits.data.size(); ++i)
                    dlogits.data[i] = (y_p.data[i] - batch_targets.data[i]) * inv_m;
            }

            optimizer->zero_grad(params);
            result.model->backward(dlogits);
            optimizer->step(params);
        }

        // full-train predictions with frozen parameters: feeds both the
        // train-mAP column and (on F-th epochs) the pseudo-label update
        Matrix train_probs = forward_all(*result.model, train_store, config.batch_size, categorical);

        if (epoch % config.pl_update_frequency == 0) {
            result.latents.update(train_probs, psi);
            y_u = result.latents.labels();
            ++result.pseudo_label_updates;
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.mean_loss = loss_sum / loss_weight;
        metrics.train_map = macro_map(train_probs, train_targets, train_manifest.vocabulary);
        metrics.pl_map = macro_map(y_u, train_targets, train_manifest.vocabulary);
        if (val_store.has_value()) {
            Matrix val_probs = forward_all(*result.model, *val_store, config.batch_size, categorical);
            metrics.val_map = macro_map(val_probs, val_targets, val_manifest->vocabulary);
        } else {
            metrics.val_map = std::numeric_limits<double>::quiet_NaN();
        }
        result.log.push_back(metrics);
        if (hooks.on_epoch) hooks.on_epoch(metrics);
        if (hooks.on_checkpoint &&
            (epoch % config.pl_update_frequency == 0 || epoch == config.epochs))
            hooks.on_checkpoint(epoch, *result.model, result.latents);
    }
    return result;
}

} // namespace cdul
