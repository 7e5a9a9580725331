#pragma once

#include "cdul/image.hpp"
#include "cdul/matrix.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace cdul::nn {

// Dense NCHW float tensor.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0f) {}

    size_t plane() const { return static_cast<size_t>(h) * w; }
    size_t sample_size() const { return static_cast<size_t>(c) * plane(); }

    float* at(int in, int ic) { return data.data() + (static_cast<size_t>(in) * c + ic) * plane(); }
    const float* at(int in, int ic) const {
        return data.data() + (static_cast<size_t>(in) * c + ic) * plane();
    }
};

// Images arrive HWC in [0,1]; the network consumes NCHW centered to [-1,1].
Tensor tensor_from_images(const std::vector<Image>& images);

struct Param {
    std::vector<float> value;
    std::vector<float> grad;

    void resize(size_t n) {
        value.assign(n, 0.0f);
        grad.assign(n, 0.0f);
    }
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    // Accumulates parameter gradients and returns the input gradient.
    virtual Tensor backward(const Tensor& dy) = 0;
    virtual std::vector<Param*> params() { return {}; }
};

// 3x3 (or kxk) convolution, stride 1, zero padding to keep spatial size.
class Conv2d : public Layer {
public:
    Conv2d(int in_channels, int out_channels, int kernel, std::mt19937_64& gen);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }

private:
    int in_c_, out_c_, k_, pad_;
    Param weight_; // [out_c][in_c][k][k]
    Param bias_;   // [out_c]
    Tensor input_;
};

class ReLU : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    Tensor input_;
};

class MaxPool2 : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    Tensor input_;
    std::vector<std::int32_t> argmax_;
    int out_h_ = 0, out_w_ = 0;
};

class GlobalAvgPool : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    int in_h_ = 0, in_w_ = 0;
};

// Fully connected over flattened (c*h*w) features.
class Linear : public Layer {
public:
    Linear(int in_features, int out_features, std::mt19937_64& gen);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }

private:
    int in_f_, out_f_;
    Param weight_; // [out_f][in_f]
    Param bias_;
    Tensor input_;
};

// x + conv(relu(conv(x))), then ReLU. Channel count is preserved.
class ResidualBlock : public Layer {
public:
    ResidualBlock(int channels, std::mt19937_64& gen);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override;

private:
    Conv2d conv1_;
    ReLU relu1_;
    Conv2d conv2_;
    Tensor sum_; // pre-activation of the output ReLU
};

// ---------------------------------------------------------------------------

class Backbone {
public:
    virtual ~Backbone() = default;
    virtual const std::string& id() const = 0;
    virtual int input_size() const = 0;
    virtual int n_classes() const = 0;
    // logits, one row per batch image
    virtual Matrix forward(const Tensor& images) = 0;
    virtual void backward(const Matrix& dlogits) = 0;
    virtual std::vector<Param*> params() = 0;
    virtual void save(std::ostream& out) const = 0;
    virtual void load(std::istream& in) = 0;
};

// ids: "small" (two conv blocks + fc, 32px input) and "large" (residual
// net, 64px input). Initialization is fully determined by the seed.
std::unique_ptr<Backbone> make_backbone(const std::string& id, int n_classes, std::uint64_t seed);

// ---------------------------------------------------------------------------

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(const std::vector<Param*>& params) = 0;
    void zero_grad(const std::vector<Param*>& params);
};

class Sgd : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {}
    void step(const std::vector<Param*>& params) override;

private:
    double lr_;
};

class Adam : public Optimizer {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const std::vector<Param*>& params) override;

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<std::vector<float>> m_, v_;
    long t_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double lr);

} // namespace cdul::nn
