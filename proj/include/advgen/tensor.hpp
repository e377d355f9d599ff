#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "advgen/common.hpp"

namespace advgen {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("tensor extents must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Running tally of live tensor bytes; the attack runtime asserts its
// high-water mark stays bounded by one chunk regardless of clip length.
struct AllocStats {
    static std::atomic<int64_t>& live() {
        static std::atomic<int64_t> v{0};
        return v;
    }
    static std::atomic<int64_t>& peak() {
        static std::atomic<int64_t> v{0};
        return v;
    }
    static void on_alloc(int64_t bytes) {
        int64_t now = live().fetch_add(bytes) + bytes;
        int64_t p = peak().load();
        while (now > p && !peak().compare_exchange_weak(p, now)) {
        }
    }
    static void on_free(int64_t bytes) { live().fetch_sub(bytes); }
    static void reset_peak() { peak().store(live().load()); }
};

namespace detail {

struct TensorStorage {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until touched by backward
    bool requires_grad = false;

    explicit TensorStorage(Shape s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
        AllocStats::on_alloc(static_cast<int64_t>(data.size() * sizeof(float)));
    }
    ~TensorStorage() {
        AllocStats::on_free(static_cast<int64_t>((data.size() + grad.size()) * sizeof(float)));
    }
    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(data.size(), 0.0f);
            AllocStats::on_alloc(static_cast<int64_t>(grad.size() * sizeof(float)));
        }
    }
};

}  // namespace detail

// Rank-N float32 array with an optional gradient buffer. Copies share
// storage; clone() makes a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : s_(std::make_shared<detail::TensorStorage>(std::move(shape))) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, float v) {
        Tensor t(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor scalar(float v) { return full({1}, v); }

    static Tensor from(std::vector<float> values, Shape shape) {
        Tensor t(std::move(shape));
        if (static_cast<int64_t>(values.size()) != t.numel())
            throw ShapeError("from(): value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(t.shape()));
        std::copy(values.begin(), values.end(), t.data().begin());
        return t;
    }

    static Tensor rand_uniform(Rng& rng, Shape shape, float lo, float hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data()) v = rng.uniform(lo, hi);
        return t;
    }

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    int dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(s_->data.size()); }

    // Handle semantics: a const Tensor still views mutable shared storage,
    // so accessors are const and closures can capture copies freely.
    std::vector<float>& data() const { return s_->data; }
    float* ptr() const { return s_->data.data(); }

    bool requires_grad() const { return s_->requires_grad; }
    const Tensor& set_requires_grad(bool v) const {
        s_->requires_grad = v;
        return *this;
    }

    std::vector<float>& grad() const {
        s_->ensure_grad();
        return s_->grad;
    }
    bool has_grad() const { return !s_->grad.empty(); }
    void zero_grad() const {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0f);
    }

    float item() const {
        if (numel() != 1) throw UsageError("item() requires a scalar tensor, got shape " + shape_str(shape()));
        return s_->data[0];
    }

    Tensor clone() const {
        Tensor t(s_->shape);
        t.s_->data = s_->data;
        return t;
    }

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

    bool all_finite() const {
        for (float v : s_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    uint64_t content_hash() const {
        uint64_t h = fnv1a64(s_->shape.data(), s_->shape.size() * sizeof(int));
        return fnv1a64(s_->data.data(), s_->data.size() * sizeof(float), h);
    }

private:
    std::shared_ptr<detail::TensorStorage> s_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

// ---------------------------------------------------------------------------
// Tensor container file: "CVT1" magic, u8 rank, rank x u32 little-endian
// extents, then row-major float32 little-endian payload. No padding.
// ---------------------------------------------------------------------------

inline void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path.string());
    f.write("CVT1", 4);
    uint8_t rank = static_cast<uint8_t>(t.rank());
    f.write(reinterpret_cast<const char*>(&rank), 1);
    for (int i = 0; i < t.rank(); ++i) {
        uint32_t ext = static_cast<uint32_t>(t.dim(i));
        f.write(reinterpret_cast<const char*>(&ext), 4);
    }
    f.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 4));
    if (!f) throw IoError("write failed: " + path.string());
}

inline Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    auto fail = [&](const std::string& what, int64_t offset) -> Tensor {
        throw IoError("malformed tensor container " + path.string() + " at byte " +
                      std::to_string(offset) + ": " + what);
    };
    char magic[4];
    f.read(magic, 4);
    if (f.gcount() != 4 || std::memcmp(magic, "CVT1", 4) != 0) return fail("bad magic", 0);
    uint8_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), 1);
    if (f.gcount() != 1) return fail("missing rank", 4);
    if (rank == 0) return fail("zero rank", 4);
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) {
        uint32_t ext = 0;
        f.read(reinterpret_cast<char*>(&ext), 4);
        if (f.gcount() != 4) return fail("truncated extents", 5 + 4 * i);
        if (ext == 0 || ext > (1u << 28)) return fail("bad extent " + std::to_string(ext), 5 + 4 * i);
        shape[static_cast<size_t>(i)] = static_cast<int>(ext);
    }
    Tensor t(shape);
    int64_t header = 5 + 4 * static_cast<int64_t>(rank);
    f.read(reinterpret_cast<char*>(t.ptr()), t.numel() * 4);
    if (f.gcount() != t.numel() * 4) return fail("truncated payload", header + f.gcount());
    return t;
}

}  // namespace advgen
