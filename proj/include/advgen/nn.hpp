#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "advgen/ops.hpp"

namespace advgen {

// Ordered parameter registry. Iteration order is registration order, which
// makes optimizer sweeps, checkpoints and hashes independent of name sort.
class ParamMap {
public:
    Tensor& add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
        t.set_requires_grad(true);
        index_[name] = items_.size();
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw UsageError("unknown parameter: " + name);
        return items_[it->second].second;
    }

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    size_t size() const { return items_.size(); }

    int64_t total_numel() const {
        int64_t n = 0;
        for (const auto& [_, t] : items_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : items_) t.zero_grad();
    }

    // Order-sensitive digest of names, shapes and values.
    uint64_t content_hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& [name, t] : items_) {
            h = fnv1a64(name, h);
            h = fnv1a64(t.shape().data(), t.shape().size() * sizeof(int), h);
            h = fnv1a64(t.ptr(), static_cast<size_t>(t.numel()) * sizeof(float), h);
        }
        return h;
    }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, size_t> index_;
};

namespace init {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default.
inline Tensor fan_in_uniform(Rng rng, Shape shape, int fan_in) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    return Tensor::rand_uniform(rng, std::move(shape), -bound, bound);
}

}  // namespace init

// ---------------------------------------------------------------------------
// Modules. Each registers its parameters under "<prefix>.<leaf>" and draws
// its init from a stream forked off the prefix, so adding a module never
// shifts another's initial values.
// ---------------------------------------------------------------------------

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out], undefined when bias-free

    Linear() = default;
    Linear(ParamMap& params, const std::string& prefix, int in, int out, const Rng& seed, bool bias = true) {
        Rng r = seed.fork(prefix);
        w = params.add(prefix + ".w", init::fan_in_uniform(r, {in, out}, in));
        if (bias) b = params.add(prefix + ".b", Tensor::zeros({out}));
    }

    Tensor operator()(const Tensor& x) const {
        Tensor y = matmul(x, w);
        return b.defined() ? add(y, b) : y;
    }
};

struct Conv2d {
    Tensor w;  // [out, in, k, k]
    Tensor b;  // [out]
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(ParamMap& params, const std::string& prefix, int in, int out, int k, int stride_, int pad_,
           const Rng& seed)
        : stride(stride_), pad(pad_) {
        Rng r = seed.fork(prefix);
        const int fan_in = in * k * k;
        w = params.add(prefix + ".w", init::fan_in_uniform(r, {out, in, k, k}, fan_in));
        b = params.add(prefix + ".b", Tensor::zeros({out}));
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

struct LayerNorm {
    Tensor gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamMap& params, const std::string& prefix, int dim) {
        gamma = params.add(prefix + ".gamma", Tensor::full({dim}, 1.0f));
        beta = params.add(prefix + ".beta", Tensor::zeros({dim}));
    }

    Tensor operator()(const Tensor& x) const { return layernorm(x, gamma, beta); }
};

// Additive attention mask: 0 on allowed pairs, -1e9 on masked ones. The
// large negative constant underflows to exactly 0 after row softmax.
inline Tensor causal_mask(int T) {
    Tensor m({T, T});
    for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) m.ptr()[static_cast<int64_t>(i) * T + j] = -1e9f;
    return m;
}

// Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    Linear q, k, v, proj, fc1, fc2;
    int dim = 0;
    int heads = 1;
    bool causal = false;

    TransformerBlock() = default;
    TransformerBlock(ParamMap& params, const std::string& prefix, int dim_, int heads_, bool causal_,
                     const Rng& seed)
        : dim(dim_), heads(heads_), causal(causal_) {
        if (dim % heads != 0) throw UsageError("attention dim must divide into heads");
        ln1 = LayerNorm(params, prefix + ".ln1", dim);
        ln2 = LayerNorm(params, prefix + ".ln2", dim);
        q = Linear(params, prefix + ".q", dim, dim, seed);
        k = Linear(params, prefix + ".k", dim, dim, seed);
        v = Linear(params, prefix + ".v", dim, dim, seed);
        proj = Linear(params, prefix + ".proj", dim, dim, seed);
        fc1 = Linear(params, prefix + ".fc1", dim, 4 * dim, seed);
        fc2 = Linear(params, prefix + ".fc2", 4 * dim, dim, seed);
    }

    Tensor operator()(const Tensor& x) const {
        const int T = x.dim(0);
        const int dh = dim / heads;
        const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

        Tensor h = ln1(x);
        Tensor qs = q(h), ks = k(h), vs = v(h);
        Tensor mask;
        if (causal) mask = causal_mask(T);

        std::vector<Tensor> head_out;
        head_out.reserve(static_cast<size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            Tensor qh = slice_cols(qs, hd * dh, dh);
            Tensor kh = slice_cols(ks, hd * dh, dh);
            Tensor vh = slice_cols(vs, hd * dh, dh);
            Tensor scores = scale(matmul(qh, transpose(kh)), att_scale);
            if (causal) scores = add(scores, mask);
            head_out.push_back(matmul(softmax(scores), vh));
        }
        Tensor attn = proj(concat(head_out, 1));
        Tensor x1 = add(x, attn);
        Tensor m = ln2(x1);
        return add(x1, fc2(gelu(fc1(m))));
    }
};

}  // namespace advgen
