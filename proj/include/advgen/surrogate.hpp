#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "advgen/checkpoint.hpp"
#include "advgen/optim.hpp"
#include "advgen/tokenizer.hpp"

namespace advgen {

// Uniform frame subsampling: index_i = floor(i*N/k), strictly increasing.
inline std::vector<int> sample_frames(int n_frames, int k) {
    if (k < 1 || k > n_frames)
        throw UsageError("cannot sample " + std::to_string(k) + " of " + std::to_string(n_frames) +
                         " frames");
    std::vector<int> idx(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i)
        idx[static_cast<size_t>(i)] =
            static_cast<int>(static_cast<int64_t>(i) * n_frames / k);
    return idx;
}

struct SurrogateConfig {
    int channels = 3;
    int frame_h = 32;
    int frame_w = 32;
    int patch = 4;
    int dv = 64;
    int vis_blocks = 2;
    int vis_heads = 4;
    int dl = 64;
    int lm_blocks = 2;
    int lm_heads = 4;
    int max_seq = 160;

    int patches_per_frame() const { return (frame_h / patch) * (frame_w / patch); }

    nlohmann::json to_json() const {
        return {{"channels", channels}, {"frame_h", frame_h},       {"frame_w", frame_w},
                {"patch", patch},       {"dv", dv},                 {"vis_blocks", vis_blocks},
                {"vis_heads", vis_heads}, {"dl", dl},               {"lm_blocks", lm_blocks},
                {"lm_heads", lm_heads}, {"max_seq", max_seq},       {"vocab", Tokenizer::kVocab}};
    }

    static SurrogateConfig from_json(const nlohmann::json& j) {
        SurrogateConfig c;
        c.channels = j.at("channels");
        c.frame_h = j.at("frame_h");
        c.frame_w = j.at("frame_w");
        c.patch = j.at("patch");
        c.dv = j.at("dv");
        c.vis_blocks = j.at("vis_blocks");
        c.vis_heads = j.at("vis_heads");
        c.dl = j.at("dl");
        c.lm_blocks = j.at("lm_blocks");
        c.lm_heads = j.at("lm_heads");
        c.max_seq = j.at("max_seq");
        return c;
    }
};

// White-box vision-language surrogate: patch transformer encoder over one
// frame, byte-level causal LM over [visual prefix][BOS]Q[EOS]A[EOS].
class Surrogate {
public:
    Surrogate(SurrogateConfig cfg, uint64_t seed) : cfg_(cfg) {
        if (cfg.frame_h % cfg.patch || cfg.frame_w % cfg.patch)
            throw UsageError("frame dims must be divisible by the patch size");
        Rng root(seed);
        const int pdim = cfg.channels * cfg.patch * cfg.patch;
        patch_embed_ = Linear(params_, "vis.embed", pdim, cfg.dv, root);
        vis_pos_ = params_.add("vis.pos", init::fan_in_uniform(root.fork("vis.pos"),
                                                              {cfg.patches_per_frame(), cfg.dv}, cfg.dv));
        for (int i = 0; i < cfg.vis_blocks; ++i)
            vis_blocks_.emplace_back(params_, "vis.blk" + std::to_string(i), cfg.dv, cfg.vis_heads,
                                     false, root);
        vis_ln_ = LayerNorm(params_, "vis.ln", cfg.dv);

        tok_embed_ = params_.add("lm.embed", init::fan_in_uniform(root.fork("lm.embed"),
                                                                 {Tokenizer::kVocab, cfg.dl}, cfg.dl));
        lm_pos_ = params_.add("lm.pos", init::fan_in_uniform(root.fork("lm.pos"),
                                                            {cfg.max_seq, cfg.dl}, cfg.dl));
        vis_proj_ = Linear(params_, "lm.visproj", cfg.dv, cfg.dl, root);
        for (int i = 0; i < cfg.lm_blocks; ++i)
            lm_blocks_.emplace_back(params_, "lm.blk" + std::to_string(i), cfg.dl, cfg.lm_heads, true,
                                    root);
        lm_ln_ = LayerNorm(params_, "lm.ln", cfg.dl);
        head_ = Linear(params_, "lm.head", cfg.dl, Tokenizer::kVocab, root);
        tokenizer_.max_len = cfg.max_seq;
    }

    const SurrogateConfig& config() const { return cfg_; }
    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }
    const Tokenizer& tokenizer() const { return tokenizer_; }

    void freeze() {
        for (auto& [_, t] : params_.items()) t.set_requires_grad(false);
    }

    // [C,H,W] in [0,1] -> [patches, D_v]; differentiable w.r.t. the frame.
    Tensor encode_frame(const Tensor& frame) const {
        if (frame.rank() != 3 || frame.dim(0) != cfg_.channels || frame.dim(1) != cfg_.frame_h ||
            frame.dim(2) != cfg_.frame_w)
            throw ShapeError("encode_frame: expected " +
                             shape_str({cfg_.channels, cfg_.frame_h, cfg_.frame_w}) + ", got " +
                             shape_str(frame.shape()));
        for (float v : frame.data())
            if (v < -0.005f || v > 1.005f)
                throw UsageError("encode_frame: pixel value " + std::to_string(v) + " outside [0,1]");
        Tensor x = add(patch_embed_(patchify(frame, cfg_.patch)), vis_pos_);
        for (const auto& blk : vis_blocks_) x = blk(x);
        return vis_ln_(x);
    }

    // Full-sequence logits over [visual prefix][text]: rows = P + |text|.
    Tensor sequence_logits(const Tensor& visual_tokens, const std::vector<int>& text) const {
        const int P = visual_tokens.dim(0);
        const int T = static_cast<int>(text.size());
        if (P + T > cfg_.max_seq)
            throw UsageError("sequence of " + std::to_string(P + T) + " exceeds max length " +
                             std::to_string(cfg_.max_seq));
        Tensor x = concat({vis_proj_(visual_tokens), embedding_lookup(tok_embed_, text)}, 0);
        x = add(x, slice_rows(lm_pos_, 0, P + T));
        for (const auto& blk : lm_blocks_) x = blk(x);
        return head_(lm_ln_(x));
    }

    // Mean NLL of the answer region (answer bytes + closing EOS) under
    // teacher forcing: -(1/T) sum_t log P(a_t | visual, Q, a_<t).
    Tensor answer_nll(const Tensor& visual_tokens, const std::vector<int>& q_tokens,
                      const std::vector<int>& a_tokens) const {
        if (q_tokens.size() < 2 || q_tokens.front() != Tokenizer::kBos ||
            q_tokens.back() != Tokenizer::kEos)
            throw UsageError("question tokens must be BOS-framed");
        if (a_tokens.size() < 2 || a_tokens.front() != Tokenizer::kBos ||
            a_tokens.back() != Tokenizer::kEos)
            throw UsageError("answer tokens must be BOS-framed");

        std::vector<int> text = q_tokens;                              // [BOS] q [EOS]
        text.insert(text.end(), a_tokens.begin() + 1, a_tokens.end()); // ... a [EOS]
        const int P = visual_tokens.dim(0);
        Tensor lp = log_softmax(sequence_logits(visual_tokens, text));

        std::vector<int> rows, cols;
        for (size_t t = q_tokens.size(); t < text.size(); ++t) {
            rows.push_back(P + static_cast<int>(t) - 1);
            cols.push_back(text[t]);
        }
        return scale(mean(gather_rc(lp, rows, cols)), -1.0f);
    }

    // Greedy decoding after the [BOS]Q[EOS] separator; stops at EOS.
    std::string generate(const Tensor& visual_tokens, const std::vector<int>& q_tokens,
                         int max_new) const {
        NoTapeScope quiet;
        std::vector<int> text = q_tokens;
        std::string out;
        for (int i = 0; i < max_new; ++i) {
            Tensor logits = sequence_logits(visual_tokens, text);
            const int last = logits.dim(0) - 1;
            const float* row = logits.ptr() + static_cast<int64_t>(last) * Tokenizer::kVocab;
            int best = 0;
            for (int v = 1; v < Tokenizer::kVocab; ++v)
                if (row[v] > row[best]) best = v;
            if (best == Tokenizer::kEos) break;
            text.push_back(best);
            if (best < 256) out.push_back(static_cast<char>(best));
            if (static_cast<int>(text.size()) + visual_tokens.dim(0) >= cfg_.max_seq) break;
        }
        return out;
    }

private:
    SurrogateConfig cfg_;
    ParamMap params_;
    Linear patch_embed_;
    Tensor vis_pos_;
    std::vector<TransformerBlock> vis_blocks_;
    LayerNorm vis_ln_;
    Tensor tok_embed_;
    Tensor lm_pos_;
    Linear vis_proj_;
    std::vector<TransformerBlock> lm_blocks_;
    LayerNorm lm_ln_;
    Linear head_;
    Tokenizer tokenizer_;
};

// One supervised triple for surrogate pretraining and eval.
struct VisualQA {
    Tensor frame;
    std::string question;
    std::string answer;
};

struct PretrainConfig {
    int steps = 1200;
    int batch = 4;
    float lr = 1e-3f;
    uint64_t seed = 1;
};

struct PretrainReport {
    float initial_nll = 0.0f;
    float final_nll = 0.0f;
    int steps_run = 0;
};

inline float mean_heldout_nll(const Surrogate& model, const std::vector<VisualQA>& samples) {
    NoTapeScope quiet;
    double total = 0.0;
    for (const auto& s : samples) {
        Tensor vis = model.encode_frame(s.frame);
        total += model.answer_nll(vis, model.tokenizer().tokenize(s.question),
                                  model.tokenizer().tokenize(s.answer))
                     .item();
    }
    return static_cast<float>(total / static_cast<double>(samples.size()));
}

// Supervised pretraining on the toy corpus. Constant lr; diverging loss
// (window mean doubling over 100 steps) aborts with a training error.
inline PretrainReport pretrain_surrogate(Surrogate& model, const std::vector<VisualQA>& train,
                                         const std::vector<VisualQA>& heldout,
                                         const PretrainConfig& cfg) {
    if (train.empty()) throw UsageError("pretrain: empty training set");
    PretrainReport rep;
    rep.initial_nll = heldout.empty() ? 0.0f : mean_heldout_nll(model, heldout);

    AdamW opt(model.params());
    Rng order(Rng(cfg.seed).fork("pretrain.order").next());
    std::vector<float> window;
    double prev_window_mean = 0.0;

    for (int step = 0; step < cfg.steps; ++step) {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& s = train[order.below(train.size())];
            Tensor vis = model.encode_frame(s.frame);
            Tensor nll = model.answer_nll(vis, model.tokenizer().tokenize(s.question),
                                          model.tokenizer().tokenize(s.answer));
            loss = loss.defined() ? add(loss, nll) : nll;
        }
        loss = scale(loss, 1.0f / static_cast<float>(cfg.batch));
        model.params().zero_grad();
        tape.backward(loss);
        opt.step(cfg.lr);
        ++rep.steps_run;

        window.push_back(loss.item());
        if (window.size() == 100) {
            double m = 0.0;
            for (float v : window) m += v;
            m /= 100.0;
            if (prev_window_mean > 0.0 && m > 2.0 * prev_window_mean)
                throw TrainingError("surrogate pretraining diverged: loss doubled over 100 steps");
            prev_window_mean = m;
            window.clear();
        }
    }
    rep.final_nll = heldout.empty() ? 0.0f : mean_heldout_nll(model, heldout);
    return rep;
}

inline void save_surrogate(const Surrogate& model, const std::filesystem::path& dir,
                           nlohmann::json extra = {}) {
    nlohmann::json meta = {{"kind", "surrogate"}, {"arch", model.config().to_json()}, {"schema", 1}};
    for (auto& [k, v] : extra.items()) meta[k] = v;
    save_checkpoint(dir, model.params(), meta);
}

inline Surrogate load_surrogate(const std::filesystem::path& dir) {
    nlohmann::json meta = load_checkpoint_meta(dir);
    if (meta.value("kind", "") != "surrogate")
        throw IoError(dir.string() + " is not a surrogate checkpoint");
    Surrogate model(SurrogateConfig::from_json(meta.at("arch")), 0);
    load_checkpoint_params(dir, model.params(), meta);
    return model;
}

}  // namespace advgen
