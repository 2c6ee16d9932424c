#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srforge/io.hpp"
#include "srforge/nn.hpp"

namespace srforge::zoo {

using nn::Tensor;

enum class ModelKind { Srcnn, Srresnet, EsrganGen, DiscClassic, DiscUnet, FeatureBackbone };

inline std::string kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::Srcnn: return "srcnn";
        case ModelKind::Srresnet: return "srresnet";
        case ModelKind::EsrganGen: return "esrgan_gen";
        case ModelKind::DiscClassic: return "disc_classic";
        case ModelKind::DiscUnet: return "disc_unet";
        case ModelKind::FeatureBackbone: return "feature_backbone";
    }
    fail("zoo", "unknown model kind");
}

inline ModelKind kind_from_name(const std::string& name) {
    if (name == "srcnn") return ModelKind::Srcnn;
    if (name == "srresnet") return ModelKind::Srresnet;
    if (name == "esrgan_gen") return ModelKind::EsrganGen;
    if (name == "disc_classic") return ModelKind::DiscClassic;
    if (name == "disc_unet") return ModelKind::DiscUnet;
    if (name == "feature_backbone") return ModelKind::FeatureBackbone;
    fail("zoo", "unknown model kind: " + name);
}

struct ModelSpec {
    ModelKind kind = ModelKind::Srcnn;
    int scale = 2;
    int n_rrdb = 4;
    int n_ub = 1;
    int channels = 64;
    int hr_size = 192; // discriminator input side (dense sizing for the classic head)
    std::uint64_t seed = 42;

    void validate() const {
        require(n_rrdb >= 1, "zoo", "n_rrdb must be >= 1");
        require(n_ub >= 1 && n_ub <= 4, "zoo", "n_ub out of range");
        require(channels >= 1, "zoo", "channels must be positive");
        if (kind == ModelKind::Srresnet || kind == ModelKind::EsrganGen)
            require(scale == (1 << n_ub), "zoo", "scale must equal 2^n_ub for generator kinds");
        if (kind == ModelKind::DiscClassic)
            require(hr_size % 16 == 0, "zoo",
                    "classic discriminator input side must be divisible by 16");
        if (kind == ModelKind::DiscUnet)
            require(hr_size % 8 == 0, "zoo",
                    "U-Net discriminator input side must be divisible by 8");
    }

    nlohmann::json to_json() const {
        return {{"kind", kind_name(kind)}, {"scale", scale},     {"n_rrdb", n_rrdb},
                {"n_ub", n_ub},            {"channels", channels}, {"hr_size", hr_size},
                {"seed", seed}};
    }

    static ModelSpec from_json(const nlohmann::json& j) {
        ModelSpec spec;
        spec.kind = kind_from_name(j.at("kind").get<std::string>());
        spec.scale = j.value("scale", 2);
        spec.n_rrdb = j.value("n_rrdb", 4);
        spec.n_ub = j.value("n_ub", 1);
        spec.channels = j.value("channels", 64);
        spec.hr_size = j.value("hr_size", 192);
        spec.seed = j.value("seed", std::uint64_t(42));
        spec.validate();
        return spec;
    }
};

// ---- layer toolkit ----

namespace layers {

struct Conv {
    Tensor w, b;
    int stride = 1, pad = 0;

    Conv() = default;
    Conv(nn::ParamRegistry& reg, const std::string& name, Rng& rng, int in_ch, int out_ch, int k,
         int stride_, int pad_, double init_scale = 1.0)
        : stride(stride_), pad(pad_) {
        w = reg.add_parameter(name + ".weight",
                              nn::kaiming_uniform(rng, {out_ch, in_ch, k, k},
                                                  std::int64_t(in_ch) * k * k, init_scale));
        b = reg.add_parameter(name + ".bias", Tensor::zeros({out_ch}, true));
    }

    Tensor operator()(const Tensor& x) const { return nn::conv2d(x, w, b, stride, pad); }
};

struct SpectralConv {
    Tensor w, b;
    std::shared_ptr<std::vector<double>> u;
    int stride = 1, pad = 0;

    SpectralConv() = default;
    SpectralConv(nn::ParamRegistry& reg, const std::string& name, Rng& rng, int in_ch,
                 int out_ch, int k, int stride_, int pad_)
        : stride(stride_), pad(pad_) {
        w = reg.add_parameter(name + ".weight",
                              nn::kaiming_uniform(rng, {out_ch, in_ch, k, k},
                                                  std::int64_t(in_ch) * k * k));
        b = reg.add_parameter(name + ".bias", Tensor::zeros({out_ch}, true));
        std::vector<double> u0(static_cast<std::size_t>(out_ch));
        for (double& v : u0) v = rng.normal();
        u = reg.add_buffer(name + ".u", std::move(u0));
    }

    Tensor operator()(const Tensor& x, bool train) const {
        return nn::conv2d(x, nn::spectral_normalize(w, u, train), b, stride, pad);
    }
};

struct BatchNorm {
    Tensor gamma, beta;
    nn::BatchNormBuffers buffers;

    BatchNorm() = default;
    BatchNorm(nn::ParamRegistry& reg, const std::string& name, int channels) {
        gamma = reg.add_parameter(name + ".gamma",
                                  Tensor::from_data({channels},
                                                    std::vector<double>(std::size_t(channels), 1.0),
                                                    true));
        beta = reg.add_parameter(name + ".beta", Tensor::zeros({channels}, true));
        buffers.running_mean =
            reg.add_buffer(name + ".running_mean", std::vector<double>(std::size_t(channels), 0.0));
        buffers.running_var =
            reg.add_buffer(name + ".running_var", std::vector<double>(std::size_t(channels), 1.0));
    }

    Tensor operator()(const Tensor& x, bool train) {
        return nn::batch_norm(x, gamma, beta, buffers, train);
    }
};

struct PRelu {
    Tensor a;

    PRelu() = default;
    PRelu(nn::ParamRegistry& reg, const std::string& name, int channels, double init = 0.25) {
        a = reg.add_parameter(name + ".slope",
                              Tensor::from_data({channels},
                                                std::vector<double>(std::size_t(channels), init),
                                                true));
    }

    Tensor operator()(const Tensor& x) const { return nn::prelu(x, a); }
};

struct DenseLayer {
    Tensor w, b;

    DenseLayer() = default;
    DenseLayer(nn::ParamRegistry& reg, const std::string& name, Rng& rng, int in_f, int out_f) {
        w = reg.add_parameter(name + ".weight", nn::kaiming_uniform(rng, {out_f, in_f}, in_f));
        b = reg.add_parameter(name + ".bias", Tensor::zeros({out_f}, true));
    }

    Tensor operator()(const Tensor& x) const { return nn::dense(x, w, b); }
};

} // namespace layers

/// Common surface for every architecture in the zoo. `forward` maps one NCHW
/// batch; generator kinds clamp into [0,1] at inference only.
class Model {
public:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
    virtual ~Model() = default;

    virtual Tensor forward(const Tensor& x, bool train) = 0;

    const ModelSpec& spec() const { return spec_; }
    nn::ParamRegistry& registry() { return registry_; }
    const nn::ParamRegistry& registry() const { return registry_; }

    /// Stop recording gradients for every parameter (fixed reference nets).
    void freeze() {
        for (auto& p : registry_.parameters()) p.tensor.set_requires_grad(false);
    }

    /// SRCNN consumes a bicubically pre-upscaled input; everything else maps
    /// LR resolution directly.
    bool wants_preupscaled_input() const { return spec_.kind == ModelKind::Srcnn; }
    bool is_generator() const {
        return spec_.kind == ModelKind::Srcnn || spec_.kind == ModelKind::Srresnet ||
               spec_.kind == ModelKind::EsrganGen;
    }

protected:
    ModelSpec spec_;
    nn::ParamRegistry registry_;
};

/// Three-layer mapping network over a bicubically upscaled input.
class SrcnnModel final : public Model {
public:
    explicit SrcnnModel(ModelSpec spec) : Model(std::move(spec)) {
        Rng rng(spec_.seed);
        conv1_ = layers::Conv(registry_, "conv1", rng, 3, 64, 9, 1, 4);
        conv2_ = layers::Conv(registry_, "conv2", rng, 64, 32, 1, 1, 0);
        conv3_ = layers::Conv(registry_, "conv3", rng, 32, 3, 5, 1, 2);
    }

    Tensor forward(const Tensor& x, bool train) override {
        require(x.dim(1) == 3, "zoo", "srcnn expects 3-band input");
        Tensor y = conv3_(nn::relu(conv2_(nn::relu(conv1_(x)))));
        return train ? y : nn::clamp_value(y, 0.0, 1.0);
    }

private:
    layers::Conv conv1_, conv2_, conv3_;
};

/// Deep residual generator: 16 conv-BN-PReLU-conv-BN blocks with skips, a
/// global skip, one sub-pixel upsample stage and a 9x9 tail.
class SrresnetModel final : public Model {
public:
    static constexpr int kBlocks = 16;

    explicit SrresnetModel(ModelSpec spec) : Model(std::move(spec)) {
        Rng rng(spec_.seed);
        const int ch = spec_.channels;
        head_ = layers::Conv(registry_, "head", rng, 3, ch, 9, 1, 4);
        head_act_ = layers::PRelu(registry_, "head_act", ch);
        for (int i = 0; i < kBlocks; ++i) {
            const std::string base = "block" + std::to_string(i);
            blocks_.push_back({layers::Conv(registry_, base + ".conv1", rng, ch, ch, 3, 1, 1),
                               layers::BatchNorm(registry_, base + ".bn1", ch),
                               layers::PRelu(registry_, base + ".act", ch),
                               layers::Conv(registry_, base + ".conv2", rng, ch, ch, 3, 1, 1),
                               layers::BatchNorm(registry_, base + ".bn2", ch)});
        }
        trunk_conv_ = layers::Conv(registry_, "trunk", rng, ch, ch, 3, 1, 1);
        trunk_bn_ = layers::BatchNorm(registry_, "trunk_bn", ch);
        up_conv_ = layers::Conv(registry_, "up.conv", rng, ch, ch * 4, 3, 1, 1);
        up_act_ = layers::PRelu(registry_, "up.act", ch);
        tail_ = layers::Conv(registry_, "tail", rng, ch, 3, 9, 1, 4);
    }

    Tensor forward(const Tensor& x, bool train) override {
        require(x.dim(1) == 3, "zoo", "srresnet expects 3-band input");
        require(x.dim(2) >= 16 && x.dim(3) >= 16, "zoo", "srresnet expects inputs >= 16 px");
        Tensor head = head_act_(head_(x));
        Tensor t = head;
        for (auto& block : blocks_) {
            Tensor r = block.bn1(block.conv1(t), train);
            r = block.act(r);
            r = block.bn2(block.conv2(r), train);
            t = nn::add(t, r);
        }
        t = nn::add(head, trunk_bn_(trunk_conv_(t), train));
        t = up_act_(nn::pixel_shuffle(up_conv_(t), 2));
        Tensor y = tail_(t);
        return train ? y : nn::clamp_value(y, 0.0, 1.0);
    }

private:
    struct ResBlock {
        layers::Conv conv1;
        layers::BatchNorm bn1;
        layers::PRelu act;
        layers::Conv conv2;
        layers::BatchNorm bn2;
    };
    layers::Conv head_;
    layers::PRelu head_act_;
    std::vector<ResBlock> blocks_;
    layers::Conv trunk_conv_;
    layers::BatchNorm trunk_bn_;
    layers::Conv up_conv_;
    layers::PRelu up_act_;
    layers::Conv tail_;
};

/// Residual-in-residual dense generator without batch norm. Each RRDB holds
/// three dense blocks (five 3x3 convs, growth 32, leaky-ReLU, linear last)
/// scaled by beta = 0.2 at both nesting levels.
class EsrganGeneratorModel final : public Model {
public:
    static constexpr int kGrowth = 32;

    explicit EsrganGeneratorModel(ModelSpec spec) : Model(std::move(spec)) {
        require(spec_.kind == ModelKind::EsrganGen, "zoo", "wrong spec kind");
        Rng rng(spec_.seed);
        const int ch = spec_.channels;
        head_ = layers::Conv(registry_, "head", rng, 3, ch, 3, 1, 1);
        for (int r = 0; r < spec_.n_rrdb; ++r) {
            Rrdb rrdb;
            for (int d = 0; d < 3; ++d) {
                DenseBlock block;
                const std::string base =
                    "rrdb" + std::to_string(r) + ".dense" + std::to_string(d);
                for (int c = 0; c < 5; ++c) {
                    const int in_ch = ch + c * kGrowth;
                    const int out_ch = c == 4 ? ch : kGrowth;
                    block.convs.push_back(layers::Conv(registry_,
                                                       base + ".conv" + std::to_string(c), rng,
                                                       in_ch, out_ch, 3, 1, 1, 0.1));
                }
                rrdb.blocks.push_back(std::move(block));
            }
            rrdbs_.push_back(std::move(rrdb));
        }
        trunk_ = layers::Conv(registry_, "trunk", rng, ch, ch, 3, 1, 1);
        for (int u = 0; u < spec_.n_ub; ++u)
            ups_.push_back(layers::Conv(registry_, "up" + std::to_string(u), rng, ch, ch * 4, 3,
                                        1, 1));
        tail1_ = layers::Conv(registry_, "tail1", rng, ch, ch, 3, 1, 1);
        tail2_ = layers::Conv(registry_, "tail2", rng, ch, 3, 3, 1, 1);
    }

    Tensor forward(const Tensor& x, bool train) override {
        require(x.dim(1) == 3, "zoo", "esrgan generator expects 3-band input");
        Tensor head = head_(x);
        Tensor t = head;
        for (auto& rrdb : rrdbs_) {
            Tensor inner = t;
            for (auto& block : rrdb.blocks) inner = dense_block_forward(block, inner);
            t = nn::add(t, nn::scale(inner, beta_));
        }
        t = nn::add(head, trunk_(t));
        for (auto& up : ups_) t = nn::leaky_relu(nn::pixel_shuffle(up(t), 2), 0.2);
        Tensor y = tail2_(nn::leaky_relu(tail1_(t), 0.2));
        return train ? y : nn::clamp_value(y, 0.0, 1.0);
    }

    /// Residual scaling shared by the RRDB and dense-block skips (0.2 per the
    /// lineage this generator follows; 0 collapses every RRDB to identity).
    void set_residual_beta(double beta) { beta_ = beta; }
    double residual_beta() const { return beta_; }

private:
    struct DenseBlock {
        std::vector<layers::Conv> convs; // five, growth concatenation
    };
    struct Rrdb {
        std::vector<DenseBlock> blocks; // three dense blocks
    };

    Tensor dense_block_forward(DenseBlock& block, const Tensor& x) const {
        std::vector<Tensor> feats{x};
        for (std::size_t c = 0; c + 1 < block.convs.size(); ++c) {
            Tensor in = feats.size() == 1 ? feats[0] : nn::concat_channels(feats);
            feats.push_back(nn::leaky_relu(block.convs[c](in), 0.2));
        }
        Tensor out = block.convs.back()(nn::concat_channels(feats));
        return nn::add(x, nn::scale(out, beta_));
    }

    layers::Conv head_;
    std::vector<Rrdb> rrdbs_;
    layers::Conv trunk_;
    std::vector<layers::Conv> ups_;
    layers::Conv tail1_, tail2_;
    double beta_ = 0.2;
};

/// Eight conv blocks (stride alternating 1/2, BN from the second block on),
/// then dense 1024 -> 1 logit. Input side is fixed at spec.hr_size.
class DiscClassicModel final : public Model {
public:
    explicit DiscClassicModel(ModelSpec spec) : Model(std::move(spec)) {
        Rng rng(spec_.seed);
        const int chans[8] = {64, 64, 128, 128, 256, 256, 512, 512};
        int in_ch = 3;
        for (int i = 0; i < 8; ++i) {
            const int stride = (i % 2 == 0) ? 1 : 2;
            Block b;
            b.conv = layers::Conv(registry_, "block" + std::to_string(i) + ".conv", rng, in_ch,
                                  chans[i], 3, stride, 1);
            if (i > 0) b.bn = layers::BatchNorm(registry_, "block" + std::to_string(i) + ".bn",
                                                chans[i]);
            b.has_bn = i > 0;
            blocks_.push_back(std::move(b));
            in_ch = chans[i];
        }
        feature_side_ = spec_.hr_size / 16; // four stride-2 blocks
        const int features = 512 * feature_side_ * feature_side_;
        fc1_ = layers::DenseLayer(registry_, "fc1", rng, features, 1024);
        fc2_ = layers::DenseLayer(registry_, "fc2", rng, 1024, 1);
    }

    Tensor forward(const Tensor& x, bool train) override {
        require(int(x.dim(2)) == spec_.hr_size && int(x.dim(3)) == spec_.hr_size, "zoo",
                "classic discriminator requires " + std::to_string(spec_.hr_size) + "x" +
                    std::to_string(spec_.hr_size) + " input");
        Tensor t = x;
        for (auto& b : blocks_) {
            t = b.conv(t);
            if (b.has_bn) t = b.bn(t, train);
            t = nn::leaky_relu(t, 0.2);
        }
        t = nn::reshape(t, {t.dim(0), t.size() / t.dim(0)});
        t = nn::leaky_relu(fc1_(t), 0.2);
        return fc2_(t);
    }

    int feature_side() const { return feature_side_; }

private:
    struct Block {
        layers::Conv conv;
        layers::BatchNorm bn;
        bool has_bn = false;
    };
    std::vector<Block> blocks_;
    layers::DenseLayer fc1_, fc2_;
    int feature_side_ = 0;
};

/// Spectral-normalized U-Net discriminator: three stride-2 encoder convs
/// (64, 128, 256), bilinear up path with additive skips, per-pixel logit map.
class DiscUnetModel final : public Model {
public:
    explicit DiscUnetModel(ModelSpec spec) : Model(std::move(spec)) {
        Rng rng(spec_.seed);
        down0_ = layers::SpectralConv(registry_, "down0", rng, 3, 64, 3, 2, 1);
        down1_ = layers::SpectralConv(registry_, "down1", rng, 64, 128, 3, 2, 1);
        down2_ = layers::SpectralConv(registry_, "down2", rng, 128, 256, 3, 2, 1);
        up2_ = layers::SpectralConv(registry_, "up2", rng, 256, 128, 3, 1, 1);
        up1_ = layers::SpectralConv(registry_, "up1", rng, 128, 64, 3, 1, 1);
        up0_ = layers::SpectralConv(registry_, "up0", rng, 64, 64, 3, 1, 1);
        out_ = layers::SpectralConv(registry_, "out", rng, 64, 1, 3, 1, 1);
    }

    Tensor forward(const Tensor& x, bool train) override {
        require(x.dim(2) % 8 == 0 && x.dim(3) % 8 == 0, "zoo",
                "U-Net discriminator needs spatial dims divisible by 8");
        Tensor d0 = nn::leaky_relu(down0_(x, train), 0.2);           // 64  @ /2
        Tensor d1 = nn::leaky_relu(down1_(d0, train), 0.2);          // 128 @ /4
        Tensor d2 = nn::leaky_relu(down2_(d1, train), 0.2);          // 256 @ /8
        Tensor u2 = nn::leaky_relu(up2_(nn::interpolate_bilinear(d2, 2), train), 0.2);
        u2 = nn::add(u2, d1);                                        // 128 @ /4
        Tensor u1 = nn::leaky_relu(up1_(nn::interpolate_bilinear(u2, 2), train), 0.2);
        u1 = nn::add(u1, d0);                                        // 64  @ /2
        Tensor u0 = nn::leaky_relu(up0_(nn::interpolate_bilinear(u1, 2), train), 0.2);
        return out_(u0, train);                                      // 1   @ /1
    }

    /// Test hook: sigma estimates for every spectral-normalized weight.
    std::vector<std::pair<std::string, double>> sigma_estimates() const {
        std::vector<std::pair<std::string, double>> out;
        const char* names[] = {"down0", "down1", "down2", "up2", "up1", "up0", "out"};
        const layers::SpectralConv* convs[] = {&down0_, &down1_, &down2_, &up2_,
                                               &up1_,   &up0_,   &out_};
        for (int i = 0; i < 7; ++i)
            out.emplace_back(names[i],
                             nn::spectral_sigma(Tensor::from_data(convs[i]->w.shape(),
                                                                  convs[i]->w.data()),
                                                *convs[i]->u));
        return out;
    }

    layers::SpectralConv& deepest_up() { return up2_; }
    layers::SpectralConv& deepest_down() { return down2_; }

private:
    layers::SpectralConv down0_, down1_, down2_, up2_, up1_, up0_, out_;
};

/// VGG-style perceptual backbone: stages of 3x3 convs (2,2,4,4,4 per stage;
/// channels 64,128,256,512,512) with 2x2 max pooling between stages. Taps
/// are the last activation of each stage, before its pool — the fifth tap is
/// the activation after the fourth convolution of stage five, ahead of the
/// fifth pooling layer.
class FeatureBackboneModel final : public Model {
public:
    explicit FeatureBackboneModel(ModelSpec spec) : Model(std::move(spec)) {
        Rng rng(spec_.seed);
        const int stage_channels[5] = {64, 128, 256, 512, 512};
        const int stage_convs[5] = {2, 2, 4, 4, 4};
        int in_ch = 3;
        for (int s = 0; s < 5; ++s) {
            std::vector<layers::Conv> convs;
            for (int c = 0; c < stage_convs[s]; ++c) {
                convs.push_back(layers::Conv(
                    registry_, "stage" + std::to_string(s) + ".conv" + std::to_string(c), rng,
                    in_ch, stage_channels[s], 3, 1, 1));
                in_ch = stage_channels[s];
            }
            stages_.push_back(std::move(convs));
        }
        freeze(); // fixed perceptual reference, never trained here
    }

    /// All five stage taps; gradient flows through to the input.
    std::vector<Tensor> forward_taps(const Tensor& x) {
        require(x.dim(1) == 3, "zoo", "feature backbone expects 3-band input");
        std::vector<Tensor> taps;
        Tensor t = x;
        for (std::size_t s = 0; s < stages_.size(); ++s) {
            if (s > 0) t = nn::max_pool2(t);
            for (auto& conv : stages_[s]) t = nn::relu(conv(t));
            taps.push_back(t);
        }
        return taps;
    }

    Tensor forward(const Tensor& x, bool) override { return forward_taps(x).back(); }

    static const std::vector<std::string>& tap_names() {
        static const std::vector<std::string> names{"stage1_tap", "stage2_tap", "stage3_tap",
                                                    "stage4_tap", "stage5_tap"};
        return names;
    }

private:
    std::vector<std::vector<layers::Conv>> stages_;
};

inline std::unique_ptr<Model> build_model(const ModelSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case ModelKind::Srcnn: return std::make_unique<SrcnnModel>(spec);
        case ModelKind::Srresnet: return std::make_unique<SrresnetModel>(spec);
        case ModelKind::EsrganGen: return std::make_unique<EsrganGeneratorModel>(spec);
        case ModelKind::DiscClassic: return std::make_unique<DiscClassicModel>(spec);
        case ModelKind::DiscUnet: return std::make_unique<DiscUnetModel>(spec);
        case ModelKind::FeatureBackbone: return std::make_unique<FeatureBackboneModel>(spec);
    }
    fail("zoo", "unknown model kind");
}

/// Persist as the (model.json, model.srwt) pair used by checkpoints.
inline void save_model(const Model& model, const std::string& path_prefix) {
    const std::string text = model.spec().to_json().dump(2) + "\n";
    io::detail::write_file(path_prefix + ".json", text.data(), text.size());
    io::save_srwt(path_prefix + ".srwt", io::registry_to_entries(model.registry()));
}

inline std::unique_ptr<Model> load_model(const std::string& path_prefix) {
    nlohmann::json j;
    {
        std::ifstream in(path_prefix + ".json");
        require(bool(in), "zoo", "cannot open " + path_prefix + ".json");
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            fail("zoo", "malformed model spec " + path_prefix + ".json: " + e.what());
        }
    }
    auto model = build_model(ModelSpec::from_json(j));
    io::entries_to_registry(io::load_srwt(path_prefix + ".srwt"), model->registry());
    return model;
}

} // namespace srforge::zoo
