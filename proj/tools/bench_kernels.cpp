// Compares the serial and OpenMP execution of the data-parallel kernels.
// Each kernel computes per-output results, so both modes must agree
// bitwise; the benchmark verifies that while timing them.

#include "cdul/dataset.hpp"
#include "cdul/encoder.hpp"
#include "cdul/matrix.hpp"
#include "cdul/metrics.hpp"
#include "cdul/nn.hpp"
#include "cdul/parallel.hpp"
#include "cdul/pseudo.hpp"
#include "cdul/rng.hpp"
#include "cdul/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace {

using cdul::par::ExecMode;

double time_best_of(const std::function<void()>& fn, int reps) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        best = std::min(best, ms);
    }
    return best;
}

struct Row {
    std::string name;
    double serial_ms;
    double omp_ms;
    bool identical;
};

std::vector<Row> g_rows;

template <class Result>
void bench(const std::string& name, int reps, const std::function<Result()>& fn,
           const std::function<bool(const Result&, const Result&)>& equal) {
    cdul::par::set_mode(ExecMode::serial);
    Result serial_result = fn();
    double serial_ms = time_best_of([&] { fn(); }, reps);
    cdul::par::set_mode(ExecMode::openmp);
    Result omp_result = fn();
    double omp_ms = time_best_of([&] { fn(); }, reps);
    g_rows.push_back({name, serial_ms, omp_ms, equal(serial_result, omp_result)});
}

bool tensors_equal(const cdul::nn::Tensor& a, const cdul::nn::Tensor& b) {
    return a.data.size() == b.data.size() &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool matrices_equal(const cdul::Matrix& a, const cdul::Matrix& b) {
    return a.data.size() == b.data.size() &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

} // namespace

int main(int argc, char** argv) {
    const bool quick = argc > 1 && std::string(argv[1]) == "--quick";
    const int reps = quick ? 2 : 5;
    std::mt19937_64 gen(1234);

    // conv forward/backward at small-backbone shapes
    {
        const int batch = quick ? 8 : 32;
        cdul::nn::Tensor x(batch, 16, 32, 32);
        cdul::rng::fill_gaussian<float>(gen, x.data);
        auto conv = std::make_shared<cdul::nn::Conv2d>(16, 32, 3, gen);
        bench<cdul::nn::Tensor>(
            "conv2d 16->32 fwd", reps, [=] { return conv->forward(x); }, tensors_equal);
        cdul::nn::Tensor y = conv->forward(x);
        bench<cdul::nn::Tensor>(
            "conv2d 16->32 bwd", reps,
            [=] {
                for (cdul::nn::Param* p : conv->params())
                    std::fill(p->grad.begin(), p->grad.end(), 0.0f);
                return conv->backward(y);
            },
            tensors_equal);
    }

    // synthetic embedding of an image batch
    {
        const int n = quick ? 64 : 256;
        cdul::SyntheticBackend backend({5, 16, 0.1, 0, 0.25});
        std::vector<cdul::Image> images;
        for (int i = 0; i < n; ++i) {
            cdul::Image img(32, 32);
            img.fill_rect(0, 0, 32, 32, cdul::synthetic_class_color(i % 5, 5));
            images.push_back(std::move(img));
        }
        bench<std::vector<cdul::EmbeddingVector>>(
            "embed_images x" + std::to_string(n), reps,
            [&] { return backend.embed_images(images); },
            [](const auto& a, const auto& b) {
                for (size_t i = 0; i < a.size(); ++i)
                    if (std::memcmp(a[i].values.data(), b[i].values.data(),
                                    a[i].values.size() * sizeof(float)) != 0)
                        return false;
                return true;
            });
    }

    // per-class average precision over a scores matrix
    {
        const int samples = quick ? 512 : 4096, classes = 20;
        cdul::Matrix scores(samples, classes), targets(samples, classes);
        cdul::rng::fill_gaussian<double>(gen, scores.data);
        for (double& t : targets.data) t = (gen() & 3) == 0 ? 1.0 : 0.0;
        for (int c = 0; c < classes; ++c) targets.at(0, c) = 1.0;
        const auto& vocab = cdul::ClassVocabulary::voc2012();
        bench<double>(
            "mAP " + std::to_string(samples) + "x20", reps,
            [&] { return cdul::macro_map(scores, targets, vocab); },
            [](double a, double b) { return a == b; });
    }

    // one full-dataset pseudo-label update
    {
        const int samples = quick ? 2048 : 8192, classes = 20;
        cdul::Matrix scores(samples, classes), y_p(samples, classes);
        for (double& v : scores.data) v = 0.2 + 0.6 * cdul::rng::uniform_open(gen);
        for (double& v : y_p.data) v = 0.2 + 0.6 * cdul::rng::uniform_open(gen);
        bench<cdul::Matrix>(
            "pseudo update " + std::to_string(samples) + "x20", reps,
            [&] {
                auto latents = cdul::LatentPseudoLabels::init_from_scores(scores);
                latents.update(y_p, {1.0, false});
                return latents.labels();
            },
            matrices_equal);
    }

    std::printf("%-28s %12s %12s %9s %s\n", "kernel", "serial ms", "openmp ms", "speedup",
                "bitwise");
    for (const Row& r : g_rows)
        std::printf("%-28s %12.3f %12.3f %8.2fx %s\n", r.name.c_str(), r.serial_ms, r.omp_ms,
                    r.serial_ms / r.omp_ms, r.identical ? "ok" : "MISMATCH");
    for (const Row& r : g_rows)
        if (!r.identical) return 1;
    return 0;
}
