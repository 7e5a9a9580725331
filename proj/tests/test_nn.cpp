#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdul/error.hpp"
#include "cdul/nn.hpp"
#include "cdul/rng.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace cdul;
using namespace cdul::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::mt19937_64& gen) {
    Tensor t(n, c, h, w);
    rng::fill_gaussian<float>(gen, t.data);
    return t;
}

// scalar probe loss: L = sum_i r_i * y_i with fixed random weights
struct ProbeLoss {
    std::vector<float> r;
    explicit ProbeLoss(size_t n, std::mt19937_64& gen) : r(n) { rng::fill_gaussian<float>(gen, r); }
    double operator()(const Tensor& y) const {
        double acc = 0.0;
        for (size_t i = 0; i < y.data.size(); ++i) acc += static_cast<double>(r[i]) * y.data[i];
        return acc;
    }
    Tensor gradient(const Tensor& like) const {
        Tensor g = like;
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = r[i];
        return g;
    }
};

} // namespace

TEST_CASE("tensor_from_images centers and transposes") {
    Image img(2, 3);
    img.pixel(0, 0)[0] = 1.0f; // R at (0,0)
    img.pixel(1, 2)[2] = 0.25f;
    Tensor t = tensor_from_images({img});
    CHECK(t.n == 1);
    CHECK(t.c == 3);
    CHECK(t.h == 2);
    CHECK(t.w == 3);
    CHECK(t.at(0, 0)[0] == doctest::Approx(1.0f));       // 1*2-1
    CHECK(t.at(0, 1)[0] == doctest::Approx(-1.0f));      // green channel empty
    CHECK(t.at(0, 2)[5] == doctest::Approx(-0.5f));      // 0.25*2-1
}

TEST_CASE("conv forward matches a naive direct convolution") {
    std::mt19937_64 gen(1);
    Conv2d conv(3, 4, 3, gen);
    Tensor x = random_tensor(2, 3, 5, 6, gen);
    Tensor y = conv.forward(x);
    REQUIRE(y.c == 4);
    REQUIRE(y.h == 5);
    REQUIRE(y.w == 6);

    const std::vector<float>& w = conv.params()[0]->value;
    const std::vector<float>& b = conv.params()[1]->value;
    for (int in = 0; in < 2; ++in)
        for (int oc = 0; oc < 4; ++oc)
            for (int oh = 0; oh < 5; ++oh)
                for (int ow = 0; ow < 6; ++ow) {
                    double acc = b[static_cast<size_t>(oc)];
                    for (int ic = 0; ic < 3; ++ic)
                        for (int kh = 0; kh < 3; ++kh)
                            for (int kw = 0; kw < 3; ++kw) {
                                int ih = oh + kh - 1, iw = ow + kw - 1;
                                if (ih < 0 || ih >= 5 || iw < 0 || iw >= 6) continue;
                                acc += static_cast<double>(
                                           x.at(in, ic)[static_cast<size_t>(ih) * 6 + iw]) *
                                       w[((static_cast<size_t>(oc) * 3 + ic) * 3 + kh) * 3 + kw];
                            }
                    CHECK(y.at(in, oc)[static_cast<size_t>(oh) * 6 + ow] ==
                          doctest::Approx(acc).epsilon(1e-4));
                }
}

TEST_CASE("conv backward matches finite differences") {
    std::mt19937_64 gen(2);
    Conv2d conv(2, 3, 3, gen);
    Tensor x = random_tensor(2, 2, 4, 4, gen);
    ProbeLoss probe(2 * 3 * 4 * 4, gen);

    Tensor y = conv.forward(x);
    for (Param* p : conv.params()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
    Tensor dx = conv.backward(probe.gradient(y));

    const float h = 0.05f; // conv is linear: FD is exact up to rounding
    auto loss_at = [&](Tensor input) { return probe(conv.forward(std::move(input))); };
    std::vector<size_t> probes{0, 5, 17, x.data.size() - 1};
    for (size_t i : probes) {
        Tensor plus = x, minus = x;
        plus.data[i] += h;
        minus.data[i] -= h;
        double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        CHECK(dx.data[i] == doctest::Approx(fd).epsilon(2e-3));
    }

    // weight gradient via FD
    conv.forward(x);
    for (Param* p : conv.params()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
    conv.backward(probe.gradient(y));
    Param* weights = conv.params()[0];
    for (size_t i : {size_t(0), size_t(13), weights->value.size() - 1}) {
        float saved = weights->value[i];
        weights->value[i] = saved + h;
        double up = probe(conv.forward(x));
        weights->value[i] = saved - h;
        double down = probe(conv.forward(x));
        weights->value[i] = saved;
        double fd = (up - down) / (2.0 * h);
        CHECK(weights->grad[i] == doctest::Approx(fd).epsilon(2e-3));
    }
}

TEST_CASE("linear backward matches finite differences") {
    std::mt19937_64 gen(3);
    Linear lin(12, 5, gen);
    Tensor x = random_tensor(3, 3, 2, 2, gen);
    ProbeLoss probe(3 * 5, gen);
    Tensor y = lin.forward(x);
    for (Param* p : lin.params()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
    Tensor dx = lin.backward(probe.gradient(y));

    const float h = 0.05f;
    for (size_t i : {size_t(0), size_t(7), x.data.size() - 1}) {
        Tensor plus = x, minus = x;
        plus.data[i] += h;
        minus.data[i] -= h;
        double fd = (probe(lin.forward(plus)) - probe(lin.forward(minus))) / (2.0 * h);
        CHECK(dx.data[i] == doctest::Approx(fd).epsilon(2e-3));
    }
    Param* weights = lin.params()[0];
    for (size_t i : {size_t(0), size_t(30), weights->value.size() - 1}) {
        float saved = weights->value[i];
        weights->value[i] = saved + h;
        double up = probe(lin.forward(x));
        weights->value[i] = saved - h;
        double down = probe(lin.forward(x));
        weights->value[i] = saved;
        CHECK(weights->grad[i] == doctest::Approx((up - down) / (2.0 * h)).epsilon(2e-3));
    }
}

TEST_CASE("relu masks forward and backward") {
    ReLU relu;
    Tensor x(1, 1, 1, 4);
    x.data = {-1.0f, 2.0f, -0.5f, 3.0f};
    Tensor y = relu.forward(x);
    CHECK(y.data == std::vector<float>{0.0f, 2.0f, 0.0f, 3.0f});
    Tensor dy(1, 1, 1, 4);
    dy.data = {1.0f, 1.0f, 1.0f, 1.0f};
    Tensor dx = relu.backward(dy);
    CHECK(dx.data == std::vector<float>{0.0f, 1.0f, 0.0f, 1.0f});
}

TEST_CASE("maxpool picks the max and routes gradient to it") {
    MaxPool2 pool;
    Tensor x(1, 1, 2, 4);
    x.data = {1.0f, 5.0f, 2.0f, 0.0f,
              3.0f, 4.0f, 1.0f, 9.0f};
    Tensor y = pool.forward(x);
    REQUIRE(y.h == 1);
    REQUIRE(y.w == 2);
    CHECK(y.data[0] == 5.0f);
    CHECK(y.data[1] == 9.0f);
    Tensor dy(1, 1, 1, 2);
    dy.data = {10.0f, 20.0f};
    Tensor dx = pool.backward(dy);
    CHECK(dx.data == std::vector<float>{0, 10, 0, 0, 0, 0, 0, 20});
}

TEST_CASE("global average pool") {
    GlobalAvgPool gap;
    Tensor x(1, 2, 2, 2);
    x.data = {1, 2, 3, 4, 10, 20, 30, 40};
    Tensor y = gap.forward(x);
    CHECK(y.data[0] == doctest::Approx(2.5f));
    CHECK(y.data[1] == doctest::Approx(25.0f));
    Tensor dy(1, 2, 1, 1);
    dy.data = {4.0f, 8.0f};
    Tensor dx = gap.backward(dy);
    CHECK(dx.data[0] == doctest::Approx(1.0f));
    CHECK(dx.data[4] == doctest::Approx(2.0f));
}

TEST_CASE("residual block gradient matches finite differences") {
    std::mt19937_64 gen(4);
    ResidualBlock block(3, gen);
    Tensor x = random_tensor(1, 3, 4, 4, gen);
    ProbeLoss probe(x.data.size(), gen);
    Tensor y = block.forward(x);
    for (Param* p : block.params()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
    Tensor dx = block.backward(probe.gradient(y));

    const float h = 1e-2f;
    int checked = 0;
    for (size_t i = 0; i < x.data.size(); i += 7) {
        Tensor plus = x, minus = x;
        plus.data[i] += h;
        minus.data[i] -= h;
        double fd = (probe(block.forward(plus)) - probe(block.forward(minus))) / (2.0 * h);
        if (std::fabs(fd) < 1e-3) continue; // skip entries pinned at a ReLU kink
        CHECK(dx.data[i] == doctest::Approx(fd).epsilon(5e-2));
        ++checked;
    }
    CHECK(checked > 3);
}

TEST_CASE("backbones: shapes, determinism, save/load") {
    for (const char* id : {"small", "large"}) {
        auto net = make_backbone(id, 7, 42);
        auto net_same = make_backbone(id, 7, 42);
        auto net_other = make_backbone(id, 7, 43);
        const int s = net->input_size();

        std::mt19937_64 gen(5);
        Tensor x = random_tensor(2, 3, s, s, gen);
        Matrix logits = net->forward(x);
        CHECK(logits.rows == 2);
        CHECK(logits.cols == 7);
        for (double v : logits.data) CHECK(std::isfinite(v));

        // same seed, same outputs; different seed differs
        Matrix logits_same = net_same->forward(x);
        CHECK(logits.data == logits_same.data);
        Matrix logits_other = net_other->forward(x);
        CHECK(logits.data != logits_other.data);

        // batch independence: row 0 alone equals row 0 in the batch
        Tensor single(1, 3, s, s);
        std::copy(x.data.begin(), x.data.begin() + static_cast<std::ptrdiff_t>(x.sample_size()),
                  single.data.begin());
        Matrix logits_single = net->forward(single);
        for (int c = 0; c < 7; ++c)
            CHECK(logits_single.at(0, c) == doctest::Approx(logits.at(0, c)).epsilon(1e-6));

        // save/load round trip preserves behavior
        std::stringstream buffer;
        net->save(buffer);
        Matrix reference = net->forward(x);
        net_other->load(buffer);
        Matrix restored = net_other->forward(x);
        CHECK(restored.data == reference.data);
    }
    CHECK_THROWS_AS(make_backbone("resnet-9000", 7, 0), Error);
}

TEST_CASE("backbone weight gradients match finite differences") {
    auto net = make_backbone("small", 3, 11);
    std::mt19937_64 gen(6);
    Tensor x = random_tensor(2, 3, 32, 32, gen);

    Matrix dlogits(2, 3);
    for (double& v : dlogits.data) v = rng::uniform_open(gen) - 0.5;
    auto loss_of = [&](Matrix logits) {
        double acc = 0.0;
        for (size_t i = 0; i < logits.data.size(); ++i) acc += logits.data[i] * dlogits.data[i];
        return acc;
    };

    for (nn::Param* p : net->params()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
    net->forward(x);
    net->backward(dlogits);

    std::vector<nn::Param*> params = net->params();
    const float h = 1e-2f;
    int checked = 0;
    for (nn::Param* p : params) {
        for (size_t i = 0; i < p->value.size(); i += std::max<size_t>(1, p->value.size() / 3)) {
            float saved = p->value[i];
            p->value[i] = saved + h;
            double up = loss_of(net->forward(x));
            p->value[i] = saved - h;
            double down = loss_of(net->forward(x));
            p->value[i] = saved;
            double fd = (up - down) / (2.0 * h);
            if (std::fabs(fd) < 1e-3) continue;
            CHECK(p->grad[i] == doctest::Approx(fd).epsilon(5e-2));
            ++checked;
        }
    }
    CHECK(checked >= 5);
}

TEST_CASE("optimizers minimize a quadratic") {
    for (const char* name : {"adam", "sgd"}) {
        auto opt = make_optimizer(name, name == std::string("adam") ? 0.1 : 0.05);
        Param p;
        p.resize(1);
        p.value[0] = 10.0f;
        std::vector<Param*> params{&p};
        for (int step = 0; step < 500; ++step) {
            p.grad[0] = 2.0f * (p.value[0] - 3.0f);
            opt->step(params);
        }
        CHECK(p.value[0] == doctest::Approx(3.0f).epsilon(1e-2));
    }
    CHECK_THROWS_AS(make_optimizer("adagrad", 0.1), Error);
}
