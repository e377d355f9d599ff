#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "advgen/tensor.hpp"

namespace advgen {

// Ordered frame sequence in [0,1]. Frames live as one [N,C,H,W] tensor;
// long clips that must not be memory-resident go through the streaming
// frame-path API instead (see attack runtime).
struct VideoClip {
    std::string id;
    Tensor frames;  // [N,C,H,W]
    float fps = 8.0f;

    int n_frames() const { return frames.dim(0); }

    Tensor frame(int i) const {
        const int C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
        if (i < 0 || i >= frames.dim(0)) throw UsageError("frame index out of range");
        Tensor out({C, H, W});
        std::copy(frames.ptr() + static_cast<int64_t>(i) * C * H * W,
                  frames.ptr() + static_cast<int64_t>(i + 1) * C * H * W, out.ptr());
        return out;
    }
};

// --- PNG (8-bit export/import; quantizes by at most 1/510) ------------------

inline void save_frame_png(const Tensor& frame, const std::filesystem::path& path) {
    if (frame.rank() != 3 || frame.dim(0) != 3)
        throw ShapeError("png export expects [3,H,W], got " + shape_str(frame.shape()));
    const int H = frame.dim(1), W = frame.dim(2);

    std::FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw IoError("cannot open for write: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw IoError("png write failed: " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = frame.ptr()[(static_cast<int64_t>(c) * H + y) * W + x];
                v = std::min(1.0f, std::max(0.0f, v));
                row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
                    static_cast<unsigned char>(v * 255.0f + 0.5f);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Tensor load_frame_png(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) throw IoError("cannot open: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw IoError("png read failed: " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int W = static_cast<int>(png_get_image_width(png, info));
    const int H = static_cast<int>(png_get_image_height(png, info));

    std::vector<unsigned char> row(static_cast<size_t>(W) * 3);
    Tensor frame({3, H, W});
    for (int y = 0; y < H; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                frame.ptr()[(static_cast<int64_t>(c) * H + y) * W + x] =
                    static_cast<float>(row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)]) /
                    255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return frame;
}

// --- frame files and directories --------------------------------------------

inline Tensor load_frame(const std::filesystem::path& path) {
    if (path.extension() == ".png") return load_frame_png(path);
    Tensor t = load_tensor(path);
    if (t.rank() != 3)
        throw IoError("frame file " + path.string() + " holds rank-" + std::to_string(t.rank()) +
                      " data, expected [C,H,W]");
    return t;
}

inline std::string frame_name(int index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d%s", index, ext);
    return buf;
}

// frame_<k>.cvt (or .png) files of dir, ordered by the numeric value of <k>.
inline std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a frame directory: " + dir.string());
    std::vector<std::pair<long, fs::path>> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string stem = entry.path().stem().string();
        const std::string ext = entry.path().extension().string();
        if (stem.rfind("frame_", 0) != 0 || (ext != ".cvt" && ext != ".png")) continue;
        try {
            found.emplace_back(std::stol(stem.substr(6)), entry.path());
        } catch (...) {
            throw IoError("unparseable frame name: " + entry.path().string());
        }
    }
    if (found.empty()) throw IoError("no frames found in " + dir.string());
    std::sort(found.begin(), found.end());
    std::vector<fs::path> out;
    out.reserve(found.size());
    for (auto& [k, p] : found) out.push_back(std::move(p));
    return out;
}

inline VideoClip read_clip_dir(const std::filesystem::path& dir) {
    auto files = list_frame_files(dir);
    Tensor first = load_frame(files[0]);
    const int C = first.dim(0), H = first.dim(1), W = first.dim(2);
    VideoClip clip;
    clip.id = dir.filename().string();
    clip.frames = Tensor({static_cast<int>(files.size()), C, H, W});
    for (size_t i = 0; i < files.size(); ++i) {
        Tensor f = i == 0 ? first : load_frame(files[i]);
        if (f.shape() != first.shape())
            throw IoError("frame " + files[i].string() + " has shape " + shape_str(f.shape()) +
                          ", clip started with " + shape_str(first.shape()));
        std::copy(f.data().begin(), f.data().end(),
                  clip.frames.ptr() + static_cast<int64_t>(i) * C * H * W);
    }
    return clip;
}

inline void write_clip_dir(const Tensor& frames, const std::filesystem::path& dir, bool png = false) {
    if (frames.rank() != 4) throw ShapeError("write_clip_dir expects [N,C,H,W]");
    std::filesystem::create_directories(dir);
    const int N = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
    for (int i = 0; i < N; ++i) {
        Tensor f({C, H, W});
        std::copy(frames.ptr() + static_cast<int64_t>(i) * C * H * W,
                  frames.ptr() + static_cast<int64_t>(i + 1) * C * H * W, f.ptr());
        save_tensor(f, dir / frame_name(i, ".cvt"));
        if (png) save_frame_png(f, dir / frame_name(i, ".png"));
    }
}

}  // namespace advgen
