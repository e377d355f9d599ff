#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "advgen/clip_io.hpp"
#include "advgen/manifest.hpp"

namespace advgen {

// Synthetic corpus: colored shapes on a dark background, captioned images
// for pretraining, QA pairs for fine-tuning, constant-velocity clips for the
// video stage and the benchmark. Every answer is a single lowercase word
// derivable from the generation parameters.

namespace toy {

inline constexpr const char* kFixedPretrainQuestion = "Describe what you see in this image";
inline constexpr float kBackground = 0.05f;

inline const std::array<const char*, 3>& shape_names() {
    static const std::array<const char*, 3> n = {"square", "circle", "triangle"};
    return n;
}

inline const std::array<const char*, 4>& color_names() {
    static const std::array<const char*, 4> n = {"red", "green", "blue", "yellow"};
    return n;
}

inline const std::array<std::array<float, 3>, 4>& color_values() {
    static const std::array<std::array<float, 3>, 4> v = {{{0.90f, 0.10f, 0.10f},
                                                           {0.10f, 0.80f, 0.15f},
                                                           {0.15f, 0.20f, 0.90f},
                                                           {0.90f, 0.85f, 0.10f}}};
    return v;
}

inline const std::array<const char*, 4>& count_names() {
    static const std::array<const char*, 4> n = {"one", "two", "three", "four"};
    return n;
}

struct ShapeSpec {
    int shape = 0;  // index into shape_names
    int color = 0;  // index into color_names
    float cx = 16.0f, cy = 16.0f;
    float r = 5.0f;
};

inline bool inside(const ShapeSpec& s, float x, float y) {
    const float dx = x - s.cx, dy = y - s.cy;
    switch (s.shape) {
        case 0: return std::abs(dx) <= s.r && std::abs(dy) <= s.r;
        case 1: return dx * dx + dy * dy <= s.r * s.r;
        default: return dy >= -s.r && dy <= s.r && std::abs(dx) <= (dy + s.r) * 0.5f;
    }
}

inline Tensor render(const std::vector<ShapeSpec>& shapes, int H, int W) {
    Tensor frame = Tensor::full({3, H, W}, kBackground);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (const auto& s : shapes)
                if (inside(s, static_cast<float>(x), static_cast<float>(y))) {
                    for (int c = 0; c < 3; ++c)
                        frame.ptr()[(static_cast<int64_t>(c) * H + y) * W + x] =
                            color_values()[static_cast<size_t>(s.color)][static_cast<size_t>(c)];
                    break;
                }
    return frame;
}

// Axis-aligned unit directions and their answer words.
inline const std::array<std::pair<std::array<int, 2>, const char*>, 4>& directions() {
    static const std::array<std::pair<std::array<int, 2>, const char*>, 4> d = {{
        {{1, 0}, "right"},
        {{-1, 0}, "left"},
        {{0, -1}, "up"},
        {{0, 1}, "down"},
    }};
    return d;
}

struct ClipSpec {
    std::vector<ShapeSpec> shapes;  // positions at frame 0
    int vx = 1, vy = 0;             // pixels per frame, shared by all shapes
    int n_frames = 8;
    std::string question, answer, category;
};

inline Tensor render_clip(const ClipSpec& spec, int H, int W) {
    Tensor frames({spec.n_frames, 3, H, W});
    for (int t = 0; t < spec.n_frames; ++t) {
        std::vector<ShapeSpec> moved = spec.shapes;
        for (auto& s : moved) {
            s.cx += static_cast<float>(spec.vx * t);
            s.cy += static_cast<float>(spec.vy * t);
        }
        Tensor f = render(moved, H, W);
        std::copy(f.data().begin(), f.data().end(),
                  frames.ptr() + static_cast<int64_t>(t) * 3 * H * W);
    }
    return frames;
}

inline ShapeSpec random_single(Rng& rng, int H, int W) {
    ShapeSpec s;
    s.shape = static_cast<int>(rng.below(3));
    s.color = static_cast<int>(rng.below(4));
    s.r = 4.0f + static_cast<float>(rng.below(3));
    s.cx = s.r + 2.0f + rng.uniform() * (static_cast<float>(W) - 2.0f * (s.r + 2.0f));
    s.cy = s.r + 2.0f + rng.uniform() * (static_cast<float>(H) - 2.0f * (s.r + 2.0f));
    return s;
}

// k shapes of one kind/color in separated quadrant slots.
inline std::vector<ShapeSpec> random_count_group(Rng& rng, int k, int H, int W) {
    static const std::array<std::array<float, 2>, 4> slots = {
        {{-8.0f, -8.0f}, {8.0f, -8.0f}, {-8.0f, 8.0f}, {8.0f, 8.0f}}};
    ShapeSpec base;
    base.shape = static_cast<int>(rng.below(3));
    base.color = static_cast<int>(rng.below(4));
    base.r = 3.0f;
    std::vector<ShapeSpec> out;
    for (int i = 0; i < k; ++i) {
        ShapeSpec s = base;
        s.cx = static_cast<float>(W) / 2.0f + slots[static_cast<size_t>(i)][0] +
               static_cast<float>(rng.below(3)) - 1.0f;
        s.cy = static_cast<float>(H) / 2.0f + slots[static_cast<size_t>(i)][1] +
               static_cast<float>(rng.below(3)) - 1.0f;
        out.push_back(s);
    }
    return out;
}

inline ClipSpec random_clip(Rng& rng, const std::string& category, int H, int W, int min_frames,
                            int max_frames) {
    ClipSpec c;
    c.category = category;
    c.n_frames = min_frames + static_cast<int>(rng.below(static_cast<uint64_t>(max_frames - min_frames + 1)));
    const auto& dir = directions()[rng.below(4)];
    const int speed = category == "count" ? 1 : 1 + static_cast<int>(rng.below(2));
    c.vx = dir.first[0] * speed;
    c.vy = dir.first[1] * speed;

    if (category == "count") {
        const int k = 1 + static_cast<int>(rng.below(4));
        c.shapes = random_count_group(rng, k, H, W);
        // drift the group back so it stays inside for the whole clip
        const float backoff = static_cast<float>(c.n_frames - 1) / 2.0f;
        for (auto& s : c.shapes) {
            s.cx -= static_cast<float>(c.vx) * backoff;
            s.cy -= static_cast<float>(c.vy) * backoff;
        }
        const std::string shape = shape_names()[static_cast<size_t>(c.shapes[0].shape)];
        c.question = "how many " + shape + "s are there";
        c.answer = count_names()[static_cast<size_t>(k - 1)];
        return c;
    }

    ShapeSpec s;
    s.shape = static_cast<int>(rng.below(3));
    s.color = static_cast<int>(rng.below(4));
    s.r = 4.0f + static_cast<float>(rng.below(2));
    // start close to center so that mid-clip position encodes direction
    s.cx = static_cast<float>(W) / 2.0f + static_cast<float>(rng.below(5)) - 2.0f;
    s.cy = static_cast<float>(H) / 2.0f + static_cast<float>(rng.below(5)) - 2.0f;
    c.shapes = {s};

    const std::string shape = shape_names()[static_cast<size_t>(s.shape)];
    if (category == "color") {
        c.question = "what color is the " + shape;
        c.answer = color_names()[static_cast<size_t>(s.color)];
    } else {  // motion
        c.question = "which direction does the " + shape + " move";
        c.answer = dir.second;
    }
    return c;
}

}  // namespace toy

struct ToyCounts {
    int pretrain = 120;
    int qa = 240;
    int videos = 24;
    int bench = 36;
    int aux = 240;
    int frame_h = 32;
    int frame_w = 32;
    int min_frames = 8;
    int max_frames = 16;
    int bench_max_frames = 20;
};

struct ToyDataPaths {
    std::filesystem::path root;
    std::filesystem::path pretrain_manifest() const { return root / "pretrain.jsonl"; }
    std::filesystem::path qa_manifest() const { return root / "qa.jsonl"; }
    std::filesystem::path video_manifest() const { return root / "video.jsonl"; }
    std::filesystem::path benchmark_manifest() const { return root / "benchmark.jsonl"; }
    std::filesystem::path aux_manifest() const { return root / "aux.jsonl"; }
};

// Deterministic corpus generation. Training and benchmark draw from
// disjoint RNG streams and disjoint media paths.
inline ToyDataPaths make_toy_data(const std::filesystem::path& out, uint64_t seed,
                                  const ToyCounts& counts = {}) {
    namespace fs = std::filesystem;
    if (counts.pretrain < 1 || counts.qa < 1 || counts.videos < 1 || counts.bench < 1 ||
        counts.aux < 1)
        throw UsageError("toy data counts must each be >= 1");
    const int H = counts.frame_h, W = counts.frame_w;
    fs::create_directories(out / "frames");
    fs::create_directories(out / "clips");
    Rng root(seed);

    char name[64];

    // captioned singles, fixed-question stage
    {
        Rng rng = root.fork("pretrain");
        std::vector<ManifestRecord> records;
        for (int i = 0; i < counts.pretrain; ++i) {
            toy::ShapeSpec s = toy::random_single(rng, H, W);
            std::snprintf(name, sizeof(name), "frames/cap_%04d.cvt", i);
            save_tensor(toy::render({s}, H, W), out / name);
            ManifestRecord r;
            r.media = name;
            r.question = toy::kFixedPretrainQuestion;
            r.answer = std::string("a ") + toy::color_names()[static_cast<size_t>(s.color)] + " " +
                       toy::shape_names()[static_cast<size_t>(s.shape)] + " on black";
            records.push_back(std::move(r));
        }
        write_manifest(out / "pretrain.jsonl", records);
    }

    // varied image QA
    {
        Rng rng = root.fork("qa");
        std::vector<ManifestRecord> records;
        for (int i = 0; i < counts.qa; ++i) {
            std::snprintf(name, sizeof(name), "frames/qa_%04d.cvt", i);
            ManifestRecord r;
            r.media = name;
            const int kind = static_cast<int>(rng.below(3));
            if (kind == 2) {
                const int k = 1 + static_cast<int>(rng.below(4));
                auto group = toy::random_count_group(rng, k, H, W);
                save_tensor(toy::render(group, H, W), out / name);
                const std::string shape = toy::shape_names()[static_cast<size_t>(group[0].shape)];
                r.question = "how many " + shape + "s are there";
                r.answer = toy::count_names()[static_cast<size_t>(k - 1)];
            } else {
                toy::ShapeSpec s = toy::random_single(rng, H, W);
                save_tensor(toy::render({s}, H, W), out / name);
                const std::string shape = toy::shape_names()[static_cast<size_t>(s.shape)];
                if (kind == 0) {
                    r.question = "what color is the " + shape;
                    r.answer = toy::color_names()[static_cast<size_t>(s.color)];
                } else {
                    r.question = "what shape is shown";
                    r.answer = shape;
                }
            }
            records.push_back(std::move(r));
        }
        write_manifest(out / "qa.jsonl", records);
    }

    // aux classifier set: label = shape kind
    {
        Rng rng = root.fork("aux");
        std::vector<ManifestRecord> records;
        for (int i = 0; i < counts.aux; ++i) {
            toy::ShapeSpec s = toy::random_single(rng, H, W);
            std::snprintf(name, sizeof(name), "frames/aux_%04d.cvt", i);
            save_tensor(toy::render({s}, H, W), out / name);
            ManifestRecord r;
            r.media = name;
            r.label = s.shape;
            r.answer = toy::shape_names()[static_cast<size_t>(s.shape)];
            records.push_back(std::move(r));
        }
        write_manifest(out / "aux.jsonl", records);
    }

    auto emit_clips = [&](const char* stream, const char* prefix, int n, int max_frames,
                          const fs::path& manifest, bool benchmark_fields) {
        Rng rng = root.fork(stream);
        static const std::array<const char*, 3> cats = {"color", "count", "motion"};
        std::ofstream mf(manifest);
        if (!mf) throw IoError("cannot write manifest: " + manifest.string());
        for (int i = 0; i < n; ++i) {
            const std::string category = cats[static_cast<size_t>(i) % 3];
            toy::ClipSpec spec =
                toy::random_clip(rng, category, H, W, counts.min_frames, max_frames);
            std::snprintf(name, sizeof(name), "clips/%s_%03d", prefix, i);
            write_clip_dir(toy::render_clip(spec, H, W), out / name);
            nlohmann::json j;
            if (benchmark_fields) {
                j = {{"clip_path", name},
                     {"question", spec.question},
                     {"answer", spec.answer},
                     {"category", category}};
            } else {
                j = {{"media", name},          {"video_id", std::string(prefix) + "_" +
                                                                std::to_string(i)},
                     {"question", spec.question}, {"answer", spec.answer},
                     {"category", category},   {"frames", spec.n_frames}};
            }
            mf << j.dump() << "\n";
        }
    };

    emit_clips("videos", "vtrain", counts.videos, counts.max_frames, out / "video.jsonl", false);
    emit_clips("bench", "vbench", counts.bench, counts.bench_max_frames, out / "benchmark.jsonl",
               true);

    return ToyDataPaths{out};
}

}  // namespace advgen
