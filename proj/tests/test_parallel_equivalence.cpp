// The contract behind every kernel in this codebase: the OpenMP variant
// produces bitwise-identical results to the serial reference, because each
// output element is written by exactly one iteration.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdul/dataset.hpp"
#include "cdul/encoder.hpp"
#include "cdul/error.hpp"
#include "cdul/metrics.hpp"
#include "cdul/nn.hpp"
#include "cdul/parallel.hpp"
#include "cdul/pseudo.hpp"
#include "cdul/rng.hpp"
#include "cdul/trainer.hpp"

#include <filesystem>
#include <random>

namespace fs = std::filesystem;
using namespace cdul;
using par::ExecMode;
using par::ScopedMode;

namespace {

template <class Fn>
auto run_both_modes(Fn&& fn) {
    ScopedMode serial(ExecMode::serial);
    auto serial_result = fn();
    par::set_mode(ExecMode::openmp);
    auto omp_result = fn();
    return std::make_pair(std::move(serial_result), std::move(omp_result));
}

} // namespace

TEST_CASE("mode switch and env default") {
    ScopedMode guard(ExecMode::serial);
    CHECK(par::mode() == ExecMode::serial);
    CHECK(par::max_threads() == 1);
    par::set_mode(ExecMode::openmp);
    CHECK(par::mode() == ExecMode::openmp);
}

TEST_CASE("for_each_index covers every index exactly once in both modes") {
    for (ExecMode mode : {ExecMode::serial, ExecMode::openmp}) {
        ScopedMode guard(mode);
        std::vector<int> hits(997, 0);
        par::for_each_index(997, [&](std::int64_t i) { hits[static_cast<size_t>(i)] += 1; });
        for (int h : hits) CHECK(h == 1);
    }
}

TEST_CASE("exceptions from worker iterations propagate") {
    ScopedMode guard(ExecMode::openmp);
    CHECK_THROWS_AS(par::for_each_index(64,
                                        [&](std::int64_t i) {
                                            if (i == 33) fail(ErrorKind::data, "boom");
                                        }),
                    Error);
}

TEST_CASE("conv forward/backward bitwise equal across modes") {
    std::mt19937_64 gen(1);
    nn::Tensor x(4, 8, 16, 16);
    rng::fill_gaussian<float>(gen, x.data);
    auto [s, p] = run_both_modes([&] {
        std::mt19937_64 g(3);
        nn::Conv2d conv(8, 12, 3, g);
        nn::Tensor y = conv.forward(x);
        nn::Tensor dy = y;
        nn::Tensor dx = conv.backward(dy);
        std::vector<float> all = y.data;
        all.insert(all.end(), dx.data.begin(), dx.data.end());
        for (nn::Param* pr : conv.params())
            all.insert(all.end(), pr->grad.begin(), pr->grad.end());
        return all;
    });
    CHECK(s == p);
}

TEST_CASE("backbone forward bitwise equal across modes") {
    std::mt19937_64 gen(2);
    nn::Tensor x(3, 3, 32, 32);
    rng::fill_gaussian<float>(gen, x.data);
    auto [s, p] = run_both_modes([&] {
        auto net = nn::make_backbone("small", 6, 5);
        return net->forward(x).data;
    });
    CHECK(s == p);
}

TEST_CASE("synthetic embedding batch bitwise equal across modes") {
    std::vector<Image> images;
    for (int i = 0; i < 24; ++i) {
        Image img(16, 16);
        img.fill_rect(0, 0, 16, 16, synthetic_class_color(i % 4, 4));
        img.fill_rect(4, 4, 12, 12, synthetic_class_color((i + 1) % 4, 4));
        images.push_back(std::move(img));
    }
    auto [s, p] = run_both_modes([&] {
        SyntheticBackend backend({4, 8, 0.2, 1, 0.25});
        std::vector<float> all;
        for (const EmbeddingVector& e : backend.embed_images(images))
            all.insert(all.end(), e.values.begin(), e.values.end());
        return all;
    });
    CHECK(s == p);
}

TEST_CASE("mAP bitwise equal across modes") {
    std::mt19937_64 gen(3);
    Matrix scores(200, 20), targets(200, 20);
    rng::fill_gaussian<double>(gen, scores.data);
    for (double& t : targets.data) t = (gen() & 3) == 0 ? 1.0 : 0.0;
    for (int c = 0; c < 20; ++c) targets.at(0, c) = 1.0;
    auto [s, p] =
        run_both_modes([&] { return macro_map(scores, targets, ClassVocabulary::voc2012()); });
    CHECK(s == p);
}

TEST_CASE("pseudo-label update bitwise equal across modes") {
    std::mt19937_64 gen(4);
    Matrix scores(64, 5), y_p(64, 5);
    for (double& v : scores.data) v = 0.1 + 0.8 * rng::uniform_open(gen);
    for (double& v : y_p.data) v = 0.1 + 0.8 * rng::uniform_open(gen);
    auto [s, p] = run_both_modes([&] {
        LatentPseudoLabels latents = LatentPseudoLabels::init_from_scores(scores);
        for (int i = 0; i < 5; ++i) latents.update(y_p, {1.0, false});
        return latents.latent.data;
    });
    CHECK(s == p);
}

TEST_CASE("a whole training run is bitwise identical across modes") {
    fs::path dir = fs::temp_directory_path() / "cdul_parallel_train";
    fs::remove_all(dir);
    DatasetManifest train_m = make_synthetic_dataset(dir, {16, 3, 0, 32, Split::train});
    DatasetManifest val_m = make_synthetic_dataset(dir, {8, 3, 0, 32, Split::val});
    Matrix initial = targets_from_manifest(train_m);
    for (double& v : initial.data) v = 0.3 + 0.4 * v;

    TrainConfig config;
    config.epochs = 3;
    config.pl_update_frequency = 2;
    config.batch_size = 4;
    config.learning_rate = 1e-3;
    config.seed = 11;

    auto [s, p] = run_both_modes([&] {
        TrainResult r = train(train_m, &val_m, initial, config);
        std::vector<double> all;
        for (const EpochMetrics& m : r.log) {
            all.push_back(m.train_map);
            all.push_back(m.pl_map);
            all.push_back(m.val_map);
            all.push_back(m.mean_loss);
        }
        all.insert(all.end(), r.latents.latent.data.begin(), r.latents.latent.data.end());
        return all;
    });
    CHECK(s == p);
}
