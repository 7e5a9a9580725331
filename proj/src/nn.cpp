#include "cdul/nn.hpp"

#include "cdul/error.hpp"
#include "cdul/parallel.hpp"
#include "cdul/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace cdul::nn {

Tensor tensor_from_images(const std::vector<Image>& images) {
    if (images.empty()) fail(ErrorKind::internal, "empty image batch");
    const int h = images.front().height;
    const int w = images.front().width;
    Tensor t(static_cast<int>(images.size()), 3, h, w);
    for (size_t i = 0; i < images.size(); ++i) {
        const Image& img = images[i];
        if (img.height != h || img.width != w)
            fail(ErrorKind::internal, "mixed image sizes in one batch");
        for (int ch = 0; ch < 3; ++ch) {
            float* dst = t.at(static_cast<int>(i), ch);
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    dst[static_cast<size_t>(r) * w + c] = img.pixel(r, c)[ch] * 2.0f - 1.0f;
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, std::mt19937_64& gen)
    : in_c_(in_channels), out_c_(out_channels), k_(kernel), pad_(kernel / 2) {
    weight_.resize(static_cast<size_t>(out_c_) * in_c_ * k_ * k_);
    bias_.resize(static_cast<size_t>(out_c_));
    rng::fill_gaussian<float>(gen, weight_.value);
    const float std_dev = std::sqrt(2.0f / (static_cast<float>(in_c_) * k_ * k_));
    for (float& v : weight_.value) v *= std_dev;
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.c != in_c_) fail(ErrorKind::internal, "conv input channel mismatch");
    input_ = x;
    Tensor y(x.n, out_c_, x.h, x.w);
    const int h = x.h, w = x.w, k = k_, pad = pad_;

    par::for_each_index(static_cast<std::int64_t>(x.n) * out_c_, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / out_c_);
        const int oc = static_cast<int>(idx % out_c_);
        float* out = y.at(in, oc);
        const float* wbase = weight_.value.data() + static_cast<size_t>(oc) * in_c_ * k * k;
        const float b = bias_.value[static_cast<size_t>(oc)];
        for (int oh = 0; oh < h; ++oh) {
            for (int ow = 0; ow < w; ++ow) {
                float acc = b;
                for (int ic = 0; ic < in_c_; ++ic) {
                    const float* src = x.at(in, ic);
                    const float* wk = wbase + static_cast<size_t>(ic) * k * k;
                    for (int kh = 0; kh < k; ++kh) {
                        const int ih = oh + kh - pad;
                        if (ih < 0 || ih >= h) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const int iw = ow + kw - pad;
                            if (iw < 0 || iw >= w) continue;
                            acc += src[static_cast<size_t>(ih) * w + iw] * wk[kh * k + kw];
                        }
                    }
                }
                out[static_cast<size_t>(oh) * w + ow] = acc;
            }
        }
    });
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const Tensor& x = input_;
    const int h = x.h, w = x.w, k = k_, pad = pad_;
    Tensor dx(x.n, in_c_, h, w);

    par::for_each_index(static_cast<std::int64_t>(x.n) * in_c_, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / in_c_);
        const int ic = static_cast<int>(idx % in_c_);
        float* out = dx.at(in, ic);
        for (int ih = 0; ih < h; ++ih) {
            for (int iw = 0; iw < w; ++iw) {
                float acc = 0.0f;
                for (int oc = 0; oc < out_c_; ++oc) {
                    const float* g = dy.at(in, oc);
                    const float* wk = weight_.value.data() +
                                      (static_cast<size_t>(oc) * in_c_ + ic) * k * k;
                    for (int kh = 0; kh < k; ++kh) {
                        const int oh = ih - kh + pad;
                        if (oh < 0 || oh >= h) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const int ow = iw - kw + pad;
                            if (ow < 0 || ow >= w) continue;
                            acc += g[static_cast<size_t>(oh) * w + ow] * wk[kh * k + kw];
                        }
                    }
                }
                out[static_cast<size_t>(ih) * w + iw] = acc;
            }
        }
    });

    // each weight slot owned by one thread: batch sums stay in one fixed order
    par::for_each_index(static_cast<std::int64_t>(weight_.value.size()), [&](std::int64_t slot) {
        const int kw = static_cast<int>(slot % k);
        const int kh = static_cast<int>((slot / k) % k);
        const int ic = static_cast<int>((slot / (k * k)) % in_c_);
        const int oc = static_cast<int>(slot / (static_cast<std::int64_t>(k) * k * in_c_));
        float acc = 0.0f;
        for (int in = 0; in < x.n; ++in) {
            const float* g = dy.at(in, oc);
            const float* src = x.at(in, ic);
            for (int oh = 0; oh < h; ++oh) {
                const int ih = oh + kh - pad;
                if (ih < 0 || ih >= h) continue;
                for (int ow = 0; ow < w; ++ow) {
                    const int iw = ow + kw - pad;
                    if (iw < 0 || iw >= w) continue;
                    acc += g[static_cast<size_t>(oh) * w + ow] * src[static_cast<size_t>(ih) * w + iw];
                }
            }
        }
        weight_.grad[static_cast<size_t>(slot)] += acc;
    });

    par::for_each_index(out_c_, [&](std::int64_t oc) {
        float acc = 0.0f;
        for (int in = 0; in < x.n; ++in) {
            const float* g = dy.at(in, static_cast<int>(oc));
            for (size_t i = 0; i < dy.plane(); ++i) acc += g[i];
        }
        bias_.grad[static_cast<size_t>(oc)] += acc;
    });

    return dx;
}

// ---------------------------------------------------------------------------
// ReLU / pooling
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
    input_ = x;
    Tensor y = x;
    par::for_each_index(static_cast<std::int64_t>(y.data.size()), [&](std::int64_t i) {
        y.data[static_cast<size_t>(i)] = std::max(0.0f, y.data[static_cast<size_t>(i)]);
    });
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    Tensor dx = dy;
    par::for_each_index(static_cast<std::int64_t>(dx.data.size()), [&](std::int64_t i) {
        if (input_.data[static_cast<size_t>(i)] <= 0.0f) dx.data[static_cast<size_t>(i)] = 0.0f;
    });
    return dx;
}

Tensor MaxPool2::forward(const Tensor& x) {
    input_ = x;
    out_h_ = x.h / 2;
    out_w_ = x.w / 2;
    Tensor y(x.n, x.c, out_h_, out_w_);
    argmax_.assign(y.data.size(), 0);

    par::for_each_index(static_cast<std::int64_t>(x.n) * x.c, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / x.c);
        const int ch = static_cast<int>(idx % x.c);
        const float* src = x.at(in, ch);
        float* dst = y.at(in, ch);
        std::int32_t* amax = argmax_.data() + (static_cast<size_t>(in) * x.c + ch) * y.plane();
        for (int oh = 0; oh < out_h_; ++oh) {
            for (int ow = 0; ow < out_w_; ++ow) {
                int best = (oh * 2) * x.w + ow * 2;
                float best_v = src[best];
                for (int dh = 0; dh < 2; ++dh)
                    for (int dw = 0; dw < 2; ++dw) {
                        int i = (oh * 2 + dh) * x.w + (ow * 2 + dw);
                        if (src[i] > best_v) {
                            best_v = src[i];
                            best = i;
                        }
                    }
                dst[static_cast<size_t>(oh) * out_w_ + ow] = best_v;
                amax[static_cast<size_t>(oh) * out_w_ + ow] = best;
            }
        }
    });
    return y;
}

Tensor MaxPool2::backward(const Tensor& dy) {
    Tensor dx(input_.n, input_.c, input_.h, input_.w);
    par::for_each_index(static_cast<std::int64_t>(input_.n) * input_.c, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / input_.c);
        const int ch = static_cast<int>(idx % input_.c);
        const float* g = dy.at(in, ch);
        float* out = dx.at(in, ch);
        const std::int32_t* amax = argmax_.data() + (static_cast<size_t>(in) * input_.c + ch) * dy.plane();
        for (size_t i = 0; i < dy.plane(); ++i) out[amax[i]] += g[i];
    });
    return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor y(x.n, x.c, 1, 1);
    const float inv = 1.0f / static_cast<float>(x.plane());
    par::for_each_index(static_cast<std::int64_t>(x.n) * x.c, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / x.c);
        const int ch = static_cast<int>(idx % x.c);
        const float* src = x.at(in, ch);
        float acc = 0.0f;
        for (size_t i = 0; i < x.plane(); ++i) acc += src[i];
        y.at(in, ch)[0] = acc * inv;
    });
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
    Tensor dx(dy.n, dy.c, in_h_, in_w_);
    const float inv = 1.0f / static_cast<float>(dx.plane());
    par::for_each_index(static_cast<std::int64_t>(dy.n) * dy.c, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / dy.c);
        const int ch = static_cast<int>(idx % dy.c);
        const float g = dy.at(in, ch)[0] * inv;
        float* out = dx.at(in, ch);
        for (size_t i = 0; i < dx.plane(); ++i) out[i] = g;
    });
    return dx;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int in_features, int out_features, std::mt19937_64& gen)
    : in_f_(in_features), out_f_(out_features) {
    weight_.resize(static_cast<size_t>(out_f_) * in_f_);
    bias_.resize(static_cast<size_t>(out_f_));
    rng::fill_gaussian<float>(gen, weight_.value);
    const float std_dev = std::sqrt(2.0f / static_cast<float>(in_f_));
    for (float& v : weight_.value) v *= std_dev;
}

Tensor Linear::forward(const Tensor& x) {
    if (static_cast<int>(x.sample_size()) != in_f_)
        fail(ErrorKind::internal, "linear input feature mismatch");
    input_ = x;
    Tensor y(x.n, out_f_, 1, 1);
    par::for_each_index(static_cast<std::int64_t>(x.n) * out_f_, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / out_f_);
        const int of = static_cast<int>(idx % out_f_);
        const float* src = x.data.data() + static_cast<size_t>(in) * in_f_;
        const float* wrow = weight_.value.data() + static_cast<size_t>(of) * in_f_;
        float acc = bias_.value[static_cast<size_t>(of)];
        for (int i = 0; i < in_f_; ++i) acc += src[i] * wrow[i];
        y.data[static_cast<size_t>(in) * out_f_ + of] = acc;
    });
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    const Tensor& x = input_;
    Tensor dx(x.n, x.c, x.h, x.w);
    par::for_each_index(static_cast<std::int64_t>(x.n) * in_f_, [&](std::int64_t idx) {
        const int in = static_cast<int>(idx / in_f_);
        const int fi = static_cast<int>(idx % in_f_);
        const float* g = dy.data.data() + static_cast<size_t>(in) * out_f_;
        float acc = 0.0f;
        for (int of = 0; of < out_f_; ++of)
            acc += g[of] * weight_.value[static_cast<size_t>(of) * in_f_ + fi];
        dx.data[static_cast<size_t>(in) * in_f_ + fi] = acc;
    });

    par::for_each_index(static_cast<std::int64_t>(out_f_) * in_f_, [&](std::int64_t idx) {
        const int of = static_cast<int>(idx / in_f_);
        const int fi = static_cast<int>(idx % in_f_);
        float acc = 0.0f;
        for (int in = 0; in < x.n; ++in)
            acc += dy.data[static_cast<size_t>(in) * out_f_ + of] *
                   x.data[static_cast<size_t>(in) * in_f_ + fi];
        weight_.grad[static_cast<size_t>(idx)] += acc;
    });

    par::for_each_index(out_f_, [&](std::int64_t of) {
        float acc = 0.0f;
        for (int in = 0; in < x.n; ++in)
            acc += dy.data[static_cast<size_t>(in) * out_f_ + static_cast<size_t>(of)];
        bias_.grad[static_cast<size_t>(of)] += acc;
    });
    return dx;
}

// ---------------------------------------------------------------------------
// ResidualBlock
// ---------------------------------------------------------------------------

ResidualBlock::ResidualBlock(int channels, std::mt19937_64& gen)
    : conv1_(channels, channels, 3, gen), conv2_(channels, channels, 3, gen) {}

Tensor ResidualBlock::forward(const Tensor& x) {
    Tensor branch = conv2_.forward(relu1_.forward(conv1_.forward(x)));
    sum_ = x;
    for (size_t i = 0; i < sum_.data.size(); ++i) sum_.data[i] += branch.data[i];
    Tensor y = sum_;
    for (float& v : y.data) v = std::max(0.0f, v);
    return y;
}

Tensor ResidualBlock::backward(const Tensor& dy) {
    Tensor ds = dy;
    for (size_t i = 0; i < ds.data.size(); ++i)
        if (sum_.data[i] <= 0.0f) ds.data[i] = 0.0f;
    Tensor dbranch = conv1_.backward(relu1_.backward(conv2_.backward(ds)));
    for (size_t i = 0; i < dbranch.data.size(); ++i) dbranch.data[i] += ds.data[i];
    return dbranch;
}

std::vector<Param*> ResidualBlock::params() {
    std::vector<Param*> out = conv1_.params();
    for (Param* p : conv2_.params()) out.push_back(p);
    return out;
}

// ---------------------------------------------------------------------------
// Backbones
// ---------------------------------------------------------------------------

namespace {

class StackBackbone : public Backbone {
public:
    StackBackbone(std::string id, int input_size, int n_classes)
        : id_(std::move(id)), input_size_(input_size), n_classes_(n_classes) {}

    const std::string& id() const override { return id_; }
    int input_size() const override { return input_size_; }
    int n_classes() const override { return n_classes_; }

    Matrix forward(const Tensor& images) override {
        if (images.h != input_size_ || images.w != input_size_)
            fail(ErrorKind::internal, "backbone '" + id_ + "' expects " +
                                          std::to_string(input_size_) + "px input");
        Tensor x = images;
        for (auto& layer : layers_) x = layer->forward(x);
        if (x.c != n_classes_ || x.h != 1 || x.w != 1)
            fail(ErrorKind::internal, "backbone head shape mismatch");
        Matrix logits(x.n, n_classes_);
        for (int i = 0; i < x.n; ++i)
            for (int c = 0; c < n_classes_; ++c)
                logits.at(i, c) = x.data[static_cast<size_t>(i) * n_classes_ + c];
        return logits;
    }

    void backward(const Matrix& dlogits) override {
        Tensor dy(dlogits.rows, n_classes_, 1, 1);
        for (int i = 0; i < dlogits.rows; ++i)
            for (int c = 0; c < n_classes_; ++c)
                dy.data[static_cast<size_t>(i) * n_classes_ + c] = static_cast<float>(dlogits.at(i, c));
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) dy = (*it)->backward(dy);
    }

    std::vector<Param*> params() override {
        std::vector<Param*> out;
        for (auto& layer : layers_)
            for (Param* p : layer->params()) out.push_back(p);
        return out;
    }

    void save(std::ostream& out) const override;
    void load(std::istream& in) override;

    std::vector<std::unique_ptr<Layer>> layers_;

private:
    std::string id_;
    int input_size_;
    int n_classes_;
};

constexpr char kNetMagic[8] = {'C', 'D', 'U', 'L', 'N', 'E', 'T', '1'};

void StackBackbone::save(std::ostream& out) const {
    out.write(kNetMagic, sizeof(kNetMagic));
    auto write_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    write_u32(static_cast<std::uint32_t>(id_.size()));
    out.write(id_.data(), static_cast<std::streamsize>(id_.size()));
    write_u32(static_cast<std::uint32_t>(n_classes_));
    std::vector<Param*> ps;
    for (const auto& layer : layers_)
        for (Param* p : const_cast<Layer&>(*layer).params()) ps.push_back(p);
    write_u32(static_cast<std::uint32_t>(ps.size()));
    for (Param* p : ps) {
        write_u32(static_cast<std::uint32_t>(p->value.size()));
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
    if (!out) fail(ErrorKind::io, "backbone serialization failed");
}

void StackBackbone::load(std::istream& in) {
    char magic[sizeof(kNetMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kNetMagic, sizeof(kNetMagic)) != 0)
        fail(ErrorKind::data, "not a backbone checkpoint (bad magic)");
    auto read_u32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    std::string stored_id(read_u32(), '\0');
    in.read(stored_id.data(), static_cast<std::streamsize>(stored_id.size()));
    if (stored_id != id_)
        fail(ErrorKind::data, "checkpoint is for backbone '" + stored_id + "', expected '" + id_ + "'");
    if (read_u32() != static_cast<std::uint32_t>(n_classes_))
        fail(ErrorKind::data, "checkpoint class count mismatch");
    std::vector<Param*> ps = params();
    if (read_u32() != ps.size()) fail(ErrorKind::data, "checkpoint parameter block count mismatch");
    for (Param* p : ps) {
        if (read_u32() != p->value.size()) fail(ErrorKind::data, "checkpoint parameter size mismatch");
        in.read(reinterpret_cast<char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
    if (!in) fail(ErrorKind::data, "truncated backbone checkpoint");
}

} // namespace

std::unique_ptr<Backbone> make_backbone(const std::string& id, int n_classes, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    if (id == "small") {
        auto net = std::make_unique<StackBackbone>(id, 32, n_classes);
        net->layers_.push_back(std::make_unique<Conv2d>(3, 16, 3, gen));
        net->layers_.push_back(std::make_unique<ReLU>());
        net->layers_.push_back(std::make_unique<MaxPool2>());
        net->layers_.push_back(std::make_unique<Conv2d>(16, 32, 3, gen));
        net->layers_.push_back(std::make_unique<ReLU>());
        net->layers_.push_back(std::make_unique<MaxPool2>());
        net->layers_.push_back(std::make_unique<Linear>(32 * 8 * 8, n_classes, gen));
        return net;
    }
    if (id == "large") {
        auto net = std::make_unique<StackBackbone>(id, 64, n_classes);
        net->layers_.push_back(std::make_unique<Conv2d>(3, 32, 3, gen));
        net->layers_.push_back(std::make_unique<ReLU>());
        net->layers_.push_back(std::make_unique<MaxPool2>()); // 32
        net->layers_.push_back(std::make_unique<ResidualBlock>(32, gen));
        net->layers_.push_back(std::make_unique<Conv2d>(32, 64, 3, gen));
        net->layers_.push_back(std::make_unique<ReLU>());
        net->layers_.push_back(std::make_unique<MaxPool2>()); // 16
        net->layers_.push_back(std::make_unique<ResidualBlock>(64, gen));
        net->layers_.push_back(std::make_unique<MaxPool2>()); // 8
        net->layers_.push_back(std::make_unique<ResidualBlock>(64, gen));
        net->layers_.push_back(std::make_unique<GlobalAvgPool>());
        net->layers_.push_back(std::make_unique<Linear>(64, n_classes, gen));
        return net;
    }
    fail(ErrorKind::config, "unknown backbone '" + id + "' (expected 'small' or 'large')");
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

void Optimizer::zero_grad(const std::vector<Param*>& params) {
    for (Param* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

void Sgd::step(const std::vector<Param*>& params) {
    for (Param* p : params) {
        par::for_each_index(static_cast<std::int64_t>(p->value.size()), [&](std::int64_t i) {
            p->value[static_cast<size_t>(i)] -=
                static_cast<float>(lr_ * p->grad[static_cast<size_t>(i)]);
        });
    }
}

void Adam::step(const std::vector<Param*>& params) {
    if (m_.empty()) {
        for (Param* p : params) {
            m_.emplace_back(p->value.size(), 0.0f);
            v_.emplace_back(p->value.size(), 0.0f);
        }
    }
    if (m_.size() != params.size()) fail(ErrorKind::internal, "optimizer/param set mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        auto& m = m_[pi];
        auto& v = v_[pi];
        if (m.size() != p->value.size()) fail(ErrorKind::internal, "optimizer state size mismatch");
        par::for_each_index(static_cast<std::int64_t>(p->value.size()), [&](std::int64_t ii) {
            const size_t i = static_cast<size_t>(ii);
            const double g = p->grad[i];
            const double mi = beta1_ * m[i] + (1.0 - beta1_) * g;
            const double vi = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            p->value[i] -= static_cast<float>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
        });
    }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double lr) {
    if (name == "adam") return std::make_unique<Adam>(lr);
    if (name == "sgd") return std::make_unique<Sgd>(lr);
    fail(ErrorKind::config, "unknown optimizer '" + name + "' (expected 'adam' or 'sgd')");
}

} // namespace cdul::nn
