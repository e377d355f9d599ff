#pragma once

#include <string>

#include "advgen/aux_model.hpp"
#include "advgen/surrogate.hpp"

namespace advgen {

struct LossWeights {
    float lambda1 = 0.1f;   // semantic
    float lambda2 = 20.0f;  // visual-feature
    float lambda3 = 10.0f;  // aux-feature

    void validate() const {
        if (lambda1 < 0.0f || lambda2 < 0.0f || lambda3 < 0.0f)
            throw UsageError("loss weights must be non-negative");
    }
};

// Mean NLL of the ground-truth answer under the frozen surrogate, evaluated
// on the (possibly perturbed) frame. The attack trainer MAXIMIZES this.
inline Tensor semantic_loss(const Tensor& frame_adv, const std::string& question,
                            const std::string& answer, const Surrogate& surrogate) {
    const Tokenizer& tok = surrogate.tokenizer();
    return surrogate.answer_nll(surrogate.encode_frame(frame_adv), tok.tokenize(question),
                                tok.tokenize(answer));
}

// Squared L2 distance between clean and perturbed visual-token matrices.
// The clean side is a constant of the optimization; pass it precomputed
// when looping (clean features never need the tape).
inline Tensor visual_loss_from_clean(const Tensor& clean_visual_tokens, const Tensor& frame_adv,
                                     const Surrogate& surrogate) {
    return sq_dist(clean_visual_tokens, surrogate.encode_frame(frame_adv));
}

inline Tensor visual_loss(const Tensor& frame_clean, const Tensor& frame_adv,
                          const Surrogate& surrogate) {
    Tensor clean_tokens;
    {
        NoTapeScope quiet;
        clean_tokens = surrogate.encode_frame(frame_clean);
    }
    return visual_loss_from_clean(clean_tokens, frame_adv, surrogate);
}

// Same distance over the auxiliary model's pooled features.
inline Tensor aux_loss_from_clean(const Tensor& clean_features, const Tensor& frame_adv,
                                  const AuxModel& aux) {
    Tensor adv = reshape(frame_adv, {1, frame_adv.dim(0), frame_adv.dim(1), frame_adv.dim(2)});
    return sq_dist(clean_features, aux.features(adv));
}

inline Tensor aux_loss(const Tensor& frame_clean, const Tensor& frame_adv, const AuxModel& aux) {
    Tensor clean_features;
    {
        NoTapeScope quiet;
        Tensor clean =
            reshape(frame_clean, {1, frame_clean.dim(0), frame_clean.dim(1), frame_clean.dim(2)});
        clean_features = aux.features(clean);
    }
    return aux_loss_from_clean(clean_features, frame_adv, aux);
}

// L = l1*L_sem + l2*L_vis + l3*L_aux, combined inside the graph.
inline Tensor weighted_total(const Tensor& sem, const Tensor& vis, const Tensor& aux,
                             const LossWeights& w) {
    w.validate();
    return add(add(scale(sem, w.lambda1), scale(vis, w.lambda2)), scale(aux, w.lambda3));
}

inline Tensor total_objective(const Tensor& frame_clean, const Tensor& frame_adv,
                              const std::string& question, const std::string& answer,
                              const Surrogate& surrogate, const AuxModel& aux,
                              const LossWeights& w) {
    return weighted_total(semantic_loss(frame_adv, question, answer, surrogate),
                          visual_loss(frame_clean, frame_adv, surrogate),
                          aux_loss(frame_clean, frame_adv, aux), w);
}

}  // namespace advgen
