#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "advgen/nn.hpp"

namespace advgen {

// A checkpoint is a directory of one tensor container per parameter plus
// meta.json carrying architecture fields, training provenance and a content
// hash over the parameters. nlohmann::json serializes keys sorted, so the
// meta file is byte-stable for identical content.

inline void save_checkpoint(const std::filesystem::path& dir, const ParamMap& params,
                            nlohmann::json meta) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    for (const auto& [name, t] : params.items()) save_tensor(t, dir / (name + ".cvt"));
    meta["param_hash"] = hex64(params.content_hash());
    meta["param_count"] = params.total_numel();
    std::ofstream f(dir / "meta.json");
    if (!f) throw IoError("cannot write " + (dir / "meta.json").string());
    f << meta.dump(2) << "\n";
}

inline nlohmann::json load_checkpoint_meta(const std::filesystem::path& dir) {
    std::ifstream f(dir / "meta.json");
    if (!f) throw IoError("missing checkpoint meta: " + (dir / "meta.json").string());
    nlohmann::json meta;
    try {
        f >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("unparseable checkpoint meta " + (dir / "meta.json").string() + ": " + e.what());
    }
    return meta;
}

// Fills an already-constructed ParamMap (shapes fixed by the architecture)
// from a checkpoint directory and verifies the stored content hash.
inline void load_checkpoint_params(const std::filesystem::path& dir, ParamMap& params,
                                   const nlohmann::json& meta) {
    for (auto& [name, t] : params.items()) {
        Tensor loaded = load_tensor(dir / (name + ".cvt"));
        if (loaded.shape() != t.shape())
            throw IoError("checkpoint tensor " + name + " has shape " + shape_str(loaded.shape()) +
                          ", expected " + shape_str(t.shape()));
        std::copy(loaded.data().begin(), loaded.data().end(), t.ptr());
    }
    if (meta.contains("param_hash") && meta["param_hash"] != hex64(params.content_hash()))
        throw IoError("checkpoint " + dir.string() + " failed its content-hash check");
}

}  // namespace advgen
