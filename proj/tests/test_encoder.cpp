#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdul/dataset.hpp"
#include "cdul/encoder.hpp"
#include "cdul/error.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>

namespace fs = std::filesystem;
using namespace cdul;

namespace {

Image solid_class_image(int cls, int n_classes, int size = 16) {
    Image img(size, size);
    img.fill_rect(0, 0, size, size, synthetic_class_color(cls, n_classes));
    return img;
}

} // namespace

TEST_CASE("prompt template validation") {
    CHECK(render_prompt("a photo of a [class]", "dog") == "a photo of a dog");
    CHECK(render_prompt("[class]!", "cat") == "cat!");
    CHECK_THROWS_AS(render_prompt("a photo", "dog"), Error);
    CHECK_THROWS_AS(render_prompt("[class] and [class]", "dog"), Error);
}

TEST_CASE("embedding vector basics") {
    EmbeddingVector e = EmbeddingVector::from_values({3.0f, 4.0f});
    CHECK(e.norm == doctest::Approx(5.0));
    CHECK_THROWS_AS(EmbeddingVector::from_values({1.0f, NAN}), Error);
    EmbeddingVector a = EmbeddingVector::from_values({1.0f, 0.0f});
    EmbeddingVector b = EmbeddingVector::from_values({0.0f, 2.0f});
    CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
}

TEST_CASE("synthetic text rows are exactly orthonormal") {
    SyntheticBackend backend({6, 11, 0.0, 9, 0.25});
    TextEmbeddingTable table =
        backend.embed_texts(ClassVocabulary::synthetic(6), kDefaultPromptTemplate);
    REQUIRE(table.embeddings.size() == 6);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            double cs = cosine_similarity(table.embeddings[static_cast<size_t>(i)],
                                          table.embeddings[static_cast<size_t>(j)]);
            if (i == j) CHECK(std::fabs(cs - 1.0) < 1e-7);
            else CHECK(std::fabs(cs) < 1e-7);
        }
    }
}

TEST_CASE("pure-class image embeds onto its class direction") {
    const int n_classes = 5;
    SyntheticBackend backend({n_classes, 8, 0.0, 0, 0.25});
    TextEmbeddingTable table =
        backend.embed_texts(ClassVocabulary::synthetic(n_classes), kDefaultPromptTemplate);
    for (int cls = 0; cls < n_classes; ++cls) {
        Image img = solid_class_image(cls, n_classes);
        std::vector<EmbeddingVector> f = backend.embed_images({&img, 1});
        // brute force over all classes: own class wins with cosine 1
        for (int other = 0; other < n_classes; ++other) {
            double cs = cosine_similarity(f[0], table.embeddings[static_cast<size_t>(other)]);
            if (other == cls) CHECK(cs == doctest::Approx(1.0).epsilon(1e-7));
            else CHECK(std::fabs(cs) < 1e-7);
        }
    }
}

TEST_CASE("two-class image with equal halves is equidistant") {
    const int n_classes = 4;
    SyntheticBackend backend({n_classes, 6, 0.0, 0, 0.25});
    TextEmbeddingTable table =
        backend.embed_texts(ClassVocabulary::synthetic(n_classes), kDefaultPromptTemplate);
    Image img(16, 16);
    img.fill_rect(0, 0, 16, 8, synthetic_class_color(1, n_classes));
    img.fill_rect(0, 8, 16, 16, synthetic_class_color(3, n_classes));
    std::vector<EmbeddingVector> f = backend.embed_images({&img, 1});
    double c1 = cosine_similarity(f[0], table.embeddings[1]);
    double c3 = cosine_similarity(f[0], table.embeddings[3]);
    CHECK(c1 == doctest::Approx(c3).epsilon(1e-9));
    CHECK(c1 == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("determinism and batch independence") {
    SyntheticBackend backend({3, 8, 0.3, 5, 0.25});
    Image a = solid_class_image(0, 3);
    Image b = solid_class_image(2, 3);
    std::vector<Image> batch{a, b, a};
    std::vector<EmbeddingVector> batched = backend.embed_images(batch);
    std::vector<EmbeddingVector> alone = backend.embed_images({&a, 1});
    CHECK(std::memcmp(batched[0].values.data(), alone[0].values.data(),
                      alone[0].values.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(batched[0].values.data(), batched[2].values.data(),
                      alone[0].values.size() * sizeof(float)) == 0);
    // different content gets different noise
    CHECK(std::memcmp(batched[0].values.data(), batched[1].values.data(),
                      alone[0].values.size() * sizeof(float)) != 0);

    // a second backend with the same seed agrees bitwise
    SyntheticBackend backend2({3, 8, 0.3, 5, 0.25});
    std::vector<EmbeddingVector> again = backend2.embed_images({&a, 1});
    CHECK(std::memcmp(again[0].values.data(), alone[0].values.data(),
                      alone[0].values.size() * sizeof(float)) == 0);
}

TEST_CASE("constructor and input validation") {
    CHECK_THROWS_AS(SyntheticBackend({5, 3, 0.0, 0, 0.25}), Error);  // dim < n_classes
    CHECK_THROWS_AS(SyntheticBackend({5, 8, -0.1, 0, 0.25}), Error); // negative noise
    CHECK_THROWS_AS(SyntheticBackend({5, 8, 0.0, 0, 0.0}), Error);   // tau <= 0
    SyntheticBackend backend({5, 8, 0.0, 0, 0.25});
    Image empty;
    CHECK_THROWS_AS(backend.embed_images({&empty, 1}), Error);
    CHECK_THROWS_AS(backend.embed_texts(ClassVocabulary::synthetic(3), kDefaultPromptTemplate),
                    Error); // vocabulary size mismatch
    CHECK_THROWS_AS(backend.embed_texts(ClassVocabulary::synthetic(5), "no placeholder"), Error);
}

TEST_CASE("descriptor identity pins noise, seed and class count") {
    SyntheticBackend a({5, 8, 0.1, 0, 0.25});
    SyntheticBackend b({5, 8, 0.2, 0, 0.25});
    SyntheticBackend c({5, 8, 0.1, 1, 0.25});
    CHECK(a.descriptor().identity() != b.descriptor().identity());
    CHECK(a.descriptor().identity() != c.descriptor().identity());
    CHECK(a.descriptor().identity() == SyntheticBackend({5, 8, 0.1, 0, 0.25}).descriptor().identity());
}

// Frozen regression: top-1 of the raw cosine scores vs ground truth on the
// 64x5 noise=0.1 seed-0 synthetic dataset. Measured once at the pinned
// seeds (64/64); drift in generator, palette, hash or noise path breaks it.
TEST_CASE("top-1 accuracy at noise 0.1 stays frozen") {
    fs::path dir = fs::temp_directory_path() / "cdul_enc_top1";
    fs::remove_all(dir);
    DatasetManifest manifest = make_synthetic_dataset(dir, {64, 5, 0, 32, Split::train});
    SyntheticBackend backend({5, 16, 0.1, 0, 0.25});
    TextEmbeddingTable table = backend.embed_texts(manifest.vocabulary, kDefaultPromptTemplate);

    int hits = 0;
    for (const LabeledSample& s : manifest.samples) {
        Image img = load_image(s.image_path);
        std::vector<EmbeddingVector> f = backend.embed_images({&img, 1});
        int best = 0;
        double best_cs = -2.0;
        for (int c = 0; c < 5; ++c) {
            double cs = cosine_similarity(f[0], table.embeddings[static_cast<size_t>(c)]);
            if (cs > best_cs) {
                best_cs = cs;
                best = c;
            }
        }
        if (s.ground_truth[static_cast<size_t>(best)] != 0) ++hits;
    }
    CHECK(hits >= 61); // the >=95% contract on 64 samples
    CHECK(hits == 64); // frozen exact value at these seeds
}
