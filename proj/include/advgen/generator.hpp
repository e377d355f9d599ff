#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "advgen/checkpoint.hpp"

namespace advgen {

// Fully convolutional UNet: two stride-2 descents (16->32->64), nearest-x2
// ascents with skip concatenations, raw unbounded 3-channel head. No
// normalization layers and no cross-frame state, so each frame of a batch
// is a pure function of that frame and the weights.
class Generator {
public:
    Generator(int channels, uint64_t seed) : channels_(channels) {
        Rng root(seed);
        stem_ = Conv2d(params_, "g.stem", channels, 16, 3, 1, 1, root);
        down1_ = Conv2d(params_, "g.down1", 16, 32, 3, 2, 1, root);
        down2_ = Conv2d(params_, "g.down2", 32, 64, 3, 2, 1, root);
        up1_ = Conv2d(params_, "g.up1", 64, 32, 3, 1, 1, root);
        fuse1_ = Conv2d(params_, "g.fuse1", 64, 32, 3, 1, 1, root);
        up2_ = Conv2d(params_, "g.up2", 32, 16, 3, 1, 1, root);
        fuse2_ = Conv2d(params_, "g.fuse2", 32, 16, 3, 1, 1, root);
        head_ = Conv2d(params_, "g.head", 16, channels, 3, 1, 1, root);
    }

    int channels() const { return channels_; }
    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }

    // Batch of frames [N,C,H,W] in [0,1] -> raw perturbation field, same shape.
    Tensor raw(const Tensor& frames) const {
        if (frames.rank() != 4 || frames.dim(1) != channels_)
            throw ShapeError("generator expects [N," + std::to_string(channels_) +
                             ",H,W], got " + shape_str(frames.shape()));
        if (frames.dim(2) % 4 || frames.dim(3) % 4)
            throw ShapeError("generator needs H,W divisible by 4, got " + shape_str(frames.shape()));
        for (float v : frames.data())
            if (v < -0.005f || v > 1.005f)
                throw UsageError("generator input pixel " + std::to_string(v) + " outside [0,1]");

        Tensor e0 = relu(stem_(frames));                       // [N,16,H,W]
        Tensor e1 = relu(down1_(e0));                          // [N,32,H/2,W/2]
        Tensor e2 = relu(down2_(e1));                          // [N,64,H/4,W/4]
        Tensor u1 = relu(up1_(nearest_upsample2x(e2)));        // [N,32,H/2,W/2]
        u1 = relu(fuse1_(concat({u1, e1}, 1)));                // skip join
        Tensor u2 = relu(up2_(nearest_upsample2x(u1)));        // [N,16,H,W]
        u2 = relu(fuse2_(concat({u2, e0}, 1)));
        return head_(u2);
    }

private:
    int channels_;
    ParamMap params_;
    Conv2d stem_, down1_, down2_, up1_, fuse1_, up2_, fuse2_, head_;
};

// Smooth l-inf projection: delta = eps * tanh(raw), so |delta| < eps
// everywhere and gradients never die at the boundary.
inline Tensor project_linf(const Tensor& raw, float eps) {
    if (!(eps > 0.0f)) throw UsageError("perturbation bound must be positive");
    return scale(tanh(raw), eps);
}

// V + delta followed by the valid-pixel projection.
inline Tensor apply_perturbation(const Tensor& frames, const Tensor& delta) {
    if (!same_shape(frames, delta))
        throw ShapeError("apply: frames " + shape_str(frames.shape()) + " vs delta " +
                         shape_str(delta.shape()));
    return clamp01(add(frames, delta));
}

inline void save_generator(const Generator& g, const std::filesystem::path& dir,
                           nlohmann::json extra = {}) {
    nlohmann::json meta = {{"kind", "generator"}, {"channels", g.channels()}, {"schema", 1}};
    for (auto& [k, v] : extra.items()) meta[k] = v;
    save_checkpoint(dir, g.params(), meta);
}

inline Generator load_generator(const std::filesystem::path& dir, nlohmann::json* meta_out = nullptr) {
    nlohmann::json meta = load_checkpoint_meta(dir);
    if (meta.value("kind", "") != "generator")
        throw IoError(dir.string() + " is not a generator checkpoint");
    Generator g(meta.value("channels", 3), 0);
    load_checkpoint_params(dir, g.params(), meta);
    if (meta_out) *meta_out = meta;
    return g;
}

}  // namespace advgen
