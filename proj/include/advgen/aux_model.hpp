#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "advgen/checkpoint.hpp"
#include "advgen/optim.hpp"

namespace advgen {

// Desk-scale stand-in for the adversarially trained feature extractor F:
// three conv blocks, a 32-wide pooled feature vector, and a class head used
// only while training F itself.
class AuxModel {
public:
    static constexpr int kFeatureDim = 32;

    AuxModel(int channels, int n_classes, uint64_t seed) : channels_(channels), n_classes_(n_classes) {
        Rng root(seed);
        c1_ = Conv2d(params_, "aux.c1", channels, 16, 3, 2, 1, root);
        c2_ = Conv2d(params_, "aux.c2", 16, 32, 3, 2, 1, root);
        c3_ = Conv2d(params_, "aux.c3", 32, 32, 3, 1, 1, root);
        head_ = Linear(params_, "aux.head", kFeatureDim, n_classes, root);
    }

    int channels() const { return channels_; }
    int n_classes() const { return n_classes_; }
    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }

    void freeze() {
        for (auto& [_, t] : params_.items()) t.set_requires_grad(false);
    }

    // [N,C,H,W] -> pooled features [N,32]
    Tensor features(const Tensor& images) const {
        if (images.rank() != 4 || images.dim(1) != channels_)
            throw ShapeError("aux features expect [N," + std::to_string(channels_) + ",H,W], got " +
                             shape_str(images.shape()));
        return global_avg_pool(relu(c3_(relu(c2_(relu(c1_(images)))))));
    }

    Tensor logits(const Tensor& images) const { return head_(features(images)); }

private:
    int channels_;
    int n_classes_;
    ParamMap params_;
    Conv2d c1_, c2_, c3_;
    Linear head_;
};

struct LabeledImage {
    Tensor image;  // [C,H,W] in [0,1]
    int label = 0;
};

struct AuxTrainConfig {
    int epochs = 6;
    int batch = 8;
    float lr = 1e-3f;
    float adv_eps = 16.0f / 255.0f;  // 0 disables the adversarial inner step
    uint64_t seed = 1;
};

namespace detail {

inline Tensor stack_images(const std::vector<LabeledImage>& data, const std::vector<size_t>& idx) {
    const Tensor& first = data[idx[0]].image;
    Tensor batch({static_cast<int>(idx.size()), first.dim(0), first.dim(1), first.dim(2)});
    float* dst = batch.ptr();
    for (size_t i : idx) {
        const Tensor& img = data[i].image;
        std::copy(img.data().begin(), img.data().end(), dst);
        dst += img.numel();
    }
    return batch;
}

inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    std::vector<int> rows(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) rows[i] = static_cast<int>(i);
    return scale(mean(gather_rc(log_softmax(logits), rows, labels)), -1.0f);
}

}  // namespace detail

inline float aux_accuracy(const AuxModel& model, const std::vector<LabeledImage>& data) {
    NoTapeScope quiet;
    int hits = 0;
    for (const auto& s : data) {
        Tensor one = reshape(s.image, {1, s.image.dim(0), s.image.dim(1), s.image.dim(2)});
        Tensor lg = model.logits(one);
        int best = 0;
        for (int c = 1; c < model.n_classes(); ++c)
            if (lg.ptr()[c] > lg.ptr()[best]) best = c;
        hits += best == s.label;
    }
    return static_cast<float>(hits) / static_cast<float>(data.size());
}

// Single-step sign-gradient adversarial training: each batch is replaced by
// x + eps*sign(dL/dx) (clamped to valid pixels) before the weight update.
inline void train_aux_model(AuxModel& model, const std::vector<LabeledImage>& train,
                            const AuxTrainConfig& cfg) {
    if (train.empty()) throw UsageError("aux training set is empty");
    AdamW opt(model.params());
    Rng order(Rng(cfg.seed).fork("aux.order").next());

    double prev_epoch_loss = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> perm(train.size());
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1], perm[order.below(i)]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start + 1 <= perm.size(); start += static_cast<size_t>(cfg.batch)) {
            std::vector<size_t> idx(perm.begin() + static_cast<ptrdiff_t>(start),
                                    perm.begin() + static_cast<ptrdiff_t>(
                                                       std::min(start + cfg.batch, perm.size())));
            std::vector<int> labels;
            for (size_t i : idx) labels.push_back(train[i].label);
            Tensor x = detail::stack_images(train, idx);

            if (cfg.adv_eps > 0.0f) {
                x.set_requires_grad(true);
                Tape tape;
                TapeScope scope(tape);
                model.params().zero_grad();
                tape.backward(detail::cross_entropy(model.logits(x), labels));
                Tensor adv = x.clone();
                const auto& gx = x.grad();
                for (int64_t i = 0; i < adv.numel(); ++i) {
                    float step = gx[static_cast<size_t>(i)] > 0.0f  ? cfg.adv_eps
                                 : gx[static_cast<size_t>(i)] < 0.0f ? -cfg.adv_eps
                                                                     : 0.0f;
                    adv.ptr()[i] = std::min(1.0f, std::max(0.0f, adv.ptr()[i] + step));
                }
                x = adv;
            }

            Tape tape;
            TapeScope scope(tape);
            model.params().zero_grad();
            Tensor loss = detail::cross_entropy(model.logits(x), labels);
            epoch_loss += loss.item();
            ++batches;
            tape.backward(loss);
            opt.step(cfg.lr);
        }
        epoch_loss /= std::max(1, batches);
        if (epoch > 0 && prev_epoch_loss > 0.0 && epoch_loss > 2.0 * prev_epoch_loss)
            throw TrainingError("aux model training diverged");
        prev_epoch_loss = epoch_loss;
    }
}

inline void save_aux_model(const AuxModel& model, const std::filesystem::path& dir,
                           nlohmann::json extra = {}) {
    nlohmann::json meta = {{"kind", "aux"},
                           {"channels", model.channels()},
                           {"n_classes", model.n_classes()},
                           {"schema", 1}};
    for (auto& [k, v] : extra.items()) meta[k] = v;
    save_checkpoint(dir, model.params(), meta);
}

inline AuxModel load_aux_model(const std::filesystem::path& dir) {
    nlohmann::json meta = load_checkpoint_meta(dir);
    if (meta.value("kind", "") != "aux") throw IoError(dir.string() + " is not an aux checkpoint");
    AuxModel model(meta.value("channels", 3), meta.value("n_classes", 3), 0);
    load_checkpoint_params(dir, model.params(), meta);
    return model;
}

}  // namespace advgen
