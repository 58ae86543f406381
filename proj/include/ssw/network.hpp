#pragma once

// U-shaped segmentation network: encoder stages mixing snake convolution with
// shifted-window attention (dual-branch or alternating), and a U-Net decoder.
//
// Stage k of the encoder works at extent S/2^k with hidden width C_k/2 and emits
// C_k = init_channels * 2^k channels at extent S/2^(k+1). Its skip tensor is taken
// before downsampling. Decoder stage k upsamples to S/2^k, joins skip k and emits C_k/2.

#include <cstdint>
#include <string>

#include "ssw/dsconv.hpp"
#include "ssw/swin.hpp"

namespace ssw {

enum class Variant { DualBranch, Alternating };

inline std::string to_string(Variant v) { return v == Variant::DualBranch ? "dual" : "alt"; }

inline Variant parse_variant(const std::string& s) {
    if (s == "dual" || s == "dual-branch" || s == "DualBranch") return Variant::DualBranch;
    if (s == "alt" || s == "alternating" || s == "Alternating") return Variant::Alternating;
    throw std::invalid_argument("unknown architecture variant: " + s);
}

struct ArchitectureConfig {
    Variant variant = Variant::DualBranch;
    std::size_t init_channels = 72;
    std::size_t depth = 4;
    std::size_t kernel_points = 9;
    std::size_t in_channels = 3;
    std::size_t out_channels = 1;
    std::size_t window = 8;
    bool relative_bias = true;

    static ArchitectureConfig dual_branch() { return {}; }
    static ArchitectureConfig alternating() {
        ArchitectureConfig c;
        c.variant = Variant::Alternating;
        c.init_channels = 108;
        return c;
    }
    /// Dual-branch, 16 initial channels, depth 3, 5-point snakes: 176,119 parameters.
    static ArchitectureConfig lightweight() {
        ArchitectureConfig c;
        c.init_channels = 16;
        c.depth = 3;
        c.kernel_points = 5;
        return c;
    }

    std::size_t stage_channels(std::size_t k) const { return init_channels << k; }
    std::size_t hidden_channels(std::size_t k) const { return stage_channels(k) / 2; }
    std::size_t skip_channels(std::size_t k) const {
        return variant == Variant::DualBranch ? stage_channels(k) : hidden_channels(k);
    }

    /// Smallest padded extent the encoder accepts: every stage must fit one snake kernel.
    std::size_t min_extent() const { return std::max<std::size_t>(kernel_points << (depth - 1), std::size_t{1} << depth); }

    void validate() const {
        if (depth == 0) throw std::invalid_argument("architecture: depth must be positive");
        if (init_channels == 0 || init_channels % 2 != 0)
            throw std::invalid_argument("architecture: init_channels must be even and positive, got " +
                                        std::to_string(init_channels));
        if (kernel_points == 0 || kernel_points % 2 == 0)
            throw std::invalid_argument("architecture: kernel size must be odd, got " + std::to_string(kernel_points));
        if (in_channels == 0 || out_channels == 0) throw std::invalid_argument("architecture: channel counts must be positive");
        if (window == 0) throw std::invalid_argument("architecture: window must be positive");
    }
};

/// Extents and channel counts of one stage, as built.
struct StageDescriptor {
    std::size_t index = 0;
    std::size_t in_extent_h = 0, in_extent_w = 0;
    std::size_t out_extent_h = 0, out_extent_w = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t skip_channels = 0;
};

/// Shapes observed during one forward pass.
struct ForwardTrace {
    Shape padded_input;
    std::vector<Shape> skips;
    std::vector<Shape> encoder_outputs;
    std::vector<Shape> decoder_outputs;
    Shape output;
};

namespace detail {
template <class T>
Var<T> to_nhwc(const Var<T>& x) { return permute(x, {0, 2, 3, 1}); }
template <class T>
Var<T> to_nchw(const Var<T>& x) { return permute(x, {0, 3, 1, 2}); }
}  // namespace detail

template <std::floating_point T>
class EncoderStage {
   public:
    EncoderStage() = default;
    EncoderStage(ParameterSet<T>& ps, const std::string& name, const ArchitectureConfig& cfg, std::size_t k,
                 std::size_t in)
        : variant_(cfg.variant) {
        const std::size_t c = cfg.stage_channels(k), h = cfg.hidden_channels(k);
        const std::size_t heads = default_heads(h);
        dsconv_ = DSConvBlock<T>(ps, join_name(name, "dsconv"), in, h, cfg.kernel_points);
        if (variant_ == Variant::DualBranch) embed_ = Conv2d<T>(ps, join_name(name, "embed"), in, h, 1);
        swin_ = SwinBlockPair<T>(ps, join_name(name, "swin"), h, cfg.window, heads, cfg.relative_bias);
        merge_ = PatchMerging<T>(ps, join_name(name, "merge"), h);
        if (variant_ == Variant::DualBranch) {
            down_ = Conv2d<T>(ps, join_name(name, "down"), h, c, 3, 2);
            fuse_ = Conv2d<T>(ps, join_name(name, "fuse"), 2 * c, c, 1);
        }
    }

    /// Returns {skip, output}.
    std::pair<Var<T>, Var<T>> operator()(const Var<T>& x) const {
        if (variant_ == Variant::DualBranch) {
            auto local = dsconv_(x);
            auto global = swin_(detail::to_nhwc(embed_(x)));
            auto skip = concat<T>({local, detail::to_nchw(global)}, 1);
            auto out = fuse_(concat<T>({down_(local), detail::to_nchw(merge_(global))}, 1));
            return {skip, out};
        }
        auto y = swin_(detail::to_nhwc(dsconv_(x)));
        return {detail::to_nchw(y), detail::to_nchw(merge_(y))};
    }

   private:
    Variant variant_ = Variant::DualBranch;
    DSConvBlock<T> dsconv_;
    Conv2d<T> embed_;
    SwinBlockPair<T> swin_;
    PatchMerging<T> merge_;
    Conv2d<T> down_;
    Conv2d<T> fuse_;
};

template <std::floating_point T>
class DecoderStage {
   public:
    DecoderStage() = default;
    DecoderStage(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t skip, std::size_t out)
        : conv1_(ps, join_name(name, "conv1"), in + skip, out, 3), conv2_(ps, join_name(name, "conv2"), out, out, 3) {}

    Var<T> operator()(const Var<T>& x, const Var<T>& skip) const {
        auto up = upsample_nearest2x(x);
        if (up.dim(2) != skip.dim(2) || up.dim(3) != skip.dim(3))
            throw ShapeError("decoder: upsampled " + shape_str(up.shape()) + " does not match skip " +
                             shape_str(skip.shape()));
        return relu(conv2_(relu(conv1_(concat<T>({up, skip}, 1)))));
    }

   private:
    Conv2d<T> conv1_;
    Conv2d<T> conv2_;
};

template <std::floating_point T>
class SegmentationModel {
   public:
    explicit SegmentationModel(ArchitectureConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
        cfg_.validate();
        std::size_t in = cfg_.in_channels;
        for (std::size_t k = 0; k < cfg_.depth; ++k) {
            encoder_.emplace_back(params_, "encoder.stage" + std::to_string(k), cfg_, k, in);
            in = cfg_.stage_channels(k);
        }
        for (std::size_t k = cfg_.depth; k-- > 0;) {
            decoder_.emplace_back(params_, "decoder.stage" + std::to_string(k), in, cfg_.skip_channels(k),
                                  cfg_.hidden_channels(k));
            in = cfg_.hidden_channels(k);
        }
        head_ = Conv2d<T>(params_, "head", in, cfg_.out_channels, 1);
        init_parameters(params_, seed);
    }

    SegmentationModel(const SegmentationModel&) = delete;
    SegmentationModel& operator=(const SegmentationModel&) = delete;
    SegmentationModel(SegmentationModel&&) noexcept = default;
    SegmentationModel& operator=(SegmentationModel&&) noexcept = default;

    const ArchitectureConfig& config() const noexcept { return cfg_; }
    ParameterSet<T>& parameters() noexcept { return params_; }
    const ParameterSet<T>& parameters() const noexcept { return params_; }
    std::size_t count_parameters() const { return params_.element_count(); }

    /// Extent after reflection padding to a multiple of 2^depth.
    std::size_t padded_extent(std::size_t n) const {
        const std::size_t q = std::size_t{1} << cfg_.depth;
        return (n + q - 1) / q * q;
    }

    void check_input(const Shape& s) const {
        if (s.size() != 4 || s[1] != cfg_.in_channels)
            throw ShapeError("model: expected [B," + std::to_string(cfg_.in_channels) + ",H,W] input, got " + shape_str(s));
        const std::size_t need = cfg_.min_extent();
        if (padded_extent(s[2]) < need || padded_extent(s[3]) < need)
            throw ShapeError("model: input extents " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                             " too small for depth " + std::to_string(cfg_.depth) + " and kernel " +
                             std::to_string(cfg_.kernel_points) + "; minimum extent is " + std::to_string(need));
    }

    /// Closed-form stage schedule for an H x W input.
    std::pair<std::vector<StageDescriptor>, std::vector<StageDescriptor>> describe(std::size_t h, std::size_t w) const {
        std::vector<StageDescriptor> enc, dec;
        std::size_t ph = padded_extent(h), pw = padded_extent(w), in = cfg_.in_channels;
        for (std::size_t k = 0; k < cfg_.depth; ++k) {
            enc.push_back({k, ph >> k, pw >> k, ph >> (k + 1), pw >> (k + 1), in, cfg_.stage_channels(k),
                           cfg_.skip_channels(k)});
            in = cfg_.stage_channels(k);
        }
        for (std::size_t k = cfg_.depth; k-- > 0;) {
            dec.push_back({k, ph >> (k + 1), pw >> (k + 1), ph >> k, pw >> k, in, cfg_.hidden_channels(k),
                           cfg_.skip_channels(k)});
            in = cfg_.hidden_channels(k);
        }
        return {enc, dec};
    }

    Var<T> forward_logits(const Var<T>& x, ForwardTrace* trace = nullptr) const {
        check_input(x.shape());
        const std::size_t h = x.dim(2), w = x.dim(3);
        auto y = pad_reflect(pad_reflect(x, 2, 0, padded_extent(h) - h), 3, 0, padded_extent(w) - w);
        if (trace) trace->padded_input = y.shape();
        std::vector<Var<T>> skips;
        for (const auto& stage : encoder_) {
            auto [skip, out] = stage(y);
            if (trace) {
                trace->skips.push_back(skip.shape());
                trace->encoder_outputs.push_back(out.shape());
            }
            skips.push_back(skip);
            y = out;
        }
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            y = decoder_[i](y, skips[skips.size() - 1 - i]);
            if (trace) trace->decoder_outputs.push_back(y.shape());
        }
        y = head_(y);
        if (y.dim(2) != h) y = slice(y, 2, 0, h);
        if (y.dim(3) != w) y = slice(y, 3, 0, w);
        if (trace) trace->output = y.shape();
        return y;
    }

    /// Foreground probability map [B, out_channels, H, W].
    Var<T> forward(const Var<T>& x, ForwardTrace* trace = nullptr) const { return sigmoid(forward_logits(x, trace)); }

   private:
    ArchitectureConfig cfg_;
    ParameterSet<T> params_;
    std::vector<EncoderStage<T>> encoder_;
    std::vector<DecoderStage<T>> decoder_;
    Conv2d<T> head_;
};

}  // namespace ssw
