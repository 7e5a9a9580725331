#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdul/error.hpp"
#include "cdul/metrics.hpp"
#include "cdul/rng.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <json.hpp>

using namespace cdul;

namespace {

// Independent oracle: enumerate every unique threshold, recompute
// precision/recall from scratch by scanning the whole array each time.
double brute_force_ap(const std::vector<double>& scores, const std::vector<std::uint8_t>& targets) {
    std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
    double total_pos = 0;
    for (auto t : targets) total_pos += t;
    double ap = 0.0, prev_recall = 0.0;
    for (double threshold : thresholds) {
        double tp = 0, fp = 0;
        for (size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= threshold) {
                if (targets[i] != 0) tp += 1;
                else fp += 1;
            }
        }
        double precision = tp / (tp + fp);
        double recall = tp / total_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

} // namespace

TEST_CASE("perfect ranking gives AP 1") {
    std::vector<double> scores{0.9, 0.8, 0.2, 0.1};
    std::vector<std::uint8_t> targets{1, 1, 0, 0};
    CHECK(*average_precision(scores, targets) == doctest::Approx(1.0));
}

TEST_CASE("hand-computed example") {
    // precision at the positives: 1 and 2/3, AP = (1 + 2/3)/2
    std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
    std::vector<std::uint8_t> targets{1, 0, 1, 0};
    CHECK(*average_precision(scores, targets) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("zero positives is undefined, not zero") {
    std::vector<double> scores{0.5, 0.4};
    std::vector<std::uint8_t> targets{0, 0};
    CHECK_FALSE(average_precision(scores, targets).has_value());
}

TEST_CASE("tied scores collapse into one threshold step") {
    // all scores equal: precision is the positive rate, recall jumps to 1
    std::vector<double> scores{0.5, 0.5, 0.5, 0.5};
    std::vector<std::uint8_t> targets{1, 0, 1, 0};
    CHECK(*average_precision(scores, targets) == doctest::Approx(0.5));
    CHECK(brute_force_ap(scores, targets) == doctest::Approx(0.5));
}

TEST_CASE("oracle equivalence on 1000 random instances") {
    std::mt19937_64 gen(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t n = 2 + rng::below(gen, 11); // <= 12 samples
        std::vector<double> scores(n);
        std::vector<std::uint8_t> targets(n);
        bool any = false;
        for (size_t i = 0; i < n; ++i) {
            // coarse grid makes score ties frequent
            scores[i] = static_cast<double>(rng::below(gen, 8)) / 8.0;
            targets[i] = static_cast<std::uint8_t>(rng::below(gen, 2));
            any |= targets[i] != 0;
        }
        if (!any) targets[0] = 1;
        INFO("trial ", trial);
        CHECK(*average_precision(scores, targets) ==
              doctest::Approx(brute_force_ap(scores, targets)).epsilon(1e-9));
    }
}

TEST_CASE("strictly monotone transforms leave AP unchanged") {
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t n = 3 + rng::below(gen, 10);
        std::vector<double> scores(n);
        std::vector<std::uint8_t> targets(n);
        for (size_t i = 0; i < n; ++i) {
            scores[i] = rng::uniform_open(gen);
            targets[i] = static_cast<std::uint8_t>(rng::below(gen, 2));
        }
        targets[0] = 1;
        std::vector<double> transformed(n);
        for (size_t i = 0; i < n; ++i) transformed[i] = 3.5 * scores[i] - 2.0;
        CHECK(*average_precision(scores, targets) ==
              doctest::Approx(*average_precision(transformed, targets)).epsilon(1e-12));
    }
}

TEST_CASE("AP invariant to duplicating the whole set") {
    std::vector<double> scores{0.9, 0.8, 0.7, 0.6, 0.5};
    std::vector<std::uint8_t> targets{1, 0, 1, 0, 1};
    std::vector<double> scores2 = scores;
    scores2.insert(scores2.end(), scores.begin(), scores.end());
    std::vector<std::uint8_t> targets2 = targets;
    targets2.insert(targets2.end(), targets.begin(), targets.end());
    CHECK(*average_precision(scores, targets) ==
          doctest::Approx(*average_precision(scores2, targets2)).epsilon(1e-12));
}

TEST_CASE("permutation invariance") {
    std::mt19937_64 gen(3);
    std::vector<double> scores{0.1, 0.9, 0.4, 0.4, 0.7, 0.2};
    std::vector<std::uint8_t> targets{0, 1, 1, 0, 1, 0};
    double base = *average_precision(scores, targets);
    std::vector<size_t> idx{0, 1, 2, 3, 4, 5};
    for (int trial = 0; trial < 20; ++trial) {
        rng::shuffle<size_t>(gen, idx);
        std::vector<double> s(6);
        std::vector<std::uint8_t> t(6);
        for (size_t i = 0; i < 6; ++i) {
            s[i] = scores[idx[i]];
            t[i] = targets[idx[i]];
        }
        CHECK(*average_precision(s, t) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("recall is non-decreasing along the curve") {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t n = 4 + rng::below(gen, 12);
        std::vector<double> scores(n);
        std::vector<std::uint8_t> targets(n);
        for (size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng::below(gen, 5));
            targets[i] = static_cast<std::uint8_t>(rng::below(gen, 2));
        }
        targets[0] = 1;
        PrecisionRecallCurve curve = precision_recall_curve(scores, targets);
        for (size_t k = 1; k < curve.recall.size(); ++k)
            CHECK(curve.recall[k] >= curve.recall[k - 1]);
        for (double p : curve.precision) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
        for (size_t k = 1; k < curve.thresholds.size(); ++k)
            CHECK(curve.thresholds[k] < curve.thresholds[k - 1]);
    }
}

TEST_CASE("classwise report: macro mean, exclusions, serialization") {
    ClassVocabulary vocab = ClassVocabulary::from_names({"a", "b", "c"});
    Matrix scores(4, 3), targets(4, 3);
    // class a perfectly ranked; class b half; class c has no positives
    double s[4][3] = {{0.9, 0.9, 0.5}, {0.8, 0.2, 0.4}, {0.2, 0.8, 0.3}, {0.1, 0.1, 0.2}};
    double t[4][3] = {{1, 1, 0}, {1, 0, 0}, {0, 0, 0}, {0, 1, 0}};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) {
            scores.at(r, c) = s[r][c];
            targets.at(r, c) = t[r][c];
        }
    ClasswiseReport report = mean_average_precision(scores, targets, vocab);
    REQUIRE(report.per_class.size() == 2);
    CHECK(report.excluded == std::vector<std::string>{"c"});
    CHECK(report.per_class[0].first == "a");
    CHECK(report.per_class[0].second == doctest::Approx(1.0));
    CHECK(report.map == doctest::Approx((report.per_class[0].second + report.per_class[1].second) / 2));

    auto j = nlohmann::json::parse(report.to_json_string());
    CHECK(j.at("map").get<double>() == doctest::Approx(report.map));
    CHECK(j.at("per_class").at("a").get<double>() == doctest::Approx(1.0));
    CHECK(j.at("excluded").at(0).get<std::string>() == "c");

    // single class degenerates to that class's AP
    ClassVocabulary one = ClassVocabulary::from_names({"solo"});
    Matrix s1(4, 1), t1(4, 1);
    for (int r = 0; r < 4; ++r) {
        s1.at(r, 0) = s[r][0];
        t1.at(r, 0) = t[r][0];
    }
    CHECK(mean_average_precision(s1, t1, one).map == doctest::Approx(1.0));

    // all classes positive-free is an error
    Matrix t0(4, 3);
    CHECK_THROWS_AS(mean_average_precision(scores, t0, vocab), Error);
}

TEST_CASE("two classes with APs 1.0 and 0.5 average to 0.75") {
    ClassVocabulary vocab = ClassVocabulary::from_names({"x", "y"});
    Matrix scores(2, 2), targets(2, 2);
    scores.at(0, 0) = 0.9; scores.at(1, 0) = 0.1; // x: positive on top -> AP 1
    targets.at(0, 0) = 1;
    scores.at(0, 1) = 0.9; scores.at(1, 1) = 0.1; // y: positive below a negative -> AP 0.5
    targets.at(1, 1) = 1;
    CHECK(mean_average_precision(scores, targets, vocab).map == doctest::Approx(0.75));
}
