#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advgen/common.hpp"

namespace advgen {

// One JSONL record of a dataset manifest. Image records carry a frame file
// in `media`; video records point `media` at a frame directory and carry a
// video id. Unused fields stay empty/defaulted.
struct ManifestRecord {
    std::string media;
    std::string question;
    std::string answer;
    std::string video_id;
    std::string category;
    int label = -1;    // aux-classifier records
    int frames = 0;    // video records

    nlohmann::json to_json() const {
        nlohmann::json j = {{"media", media}, {"question", question}, {"answer", answer}};
        if (!video_id.empty()) j["video_id"] = video_id;
        if (!category.empty()) j["category"] = category;
        if (label >= 0) j["label"] = label;
        if (frames > 0) j["frames"] = frames;
        return j;
    }

    static ManifestRecord from_json(const nlohmann::json& j) {
        ManifestRecord r;
        r.media = j.value("media", "");
        r.question = j.value("question", "");
        r.answer = j.value("answer", "");
        r.video_id = j.value("video_id", "");
        r.category = j.value("category", "");
        r.label = j.value("label", -1);
        r.frames = j.value("frames", 0);
        return r;
    }
};

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestRecord>& records) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest: " + path.string());
    for (const auto& r : records) f << r.to_json().dump() << "\n";
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(ManifestRecord::from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("manifest " + path.string() + " line " + std::to_string(lineno) + ": " +
                          e.what());
        }
    }
    return out;
}

// Media paths in manifests are relative to the manifest's own directory.
inline std::filesystem::path resolve_media(const std::filesystem::path& manifest_path,
                                           const std::string& media) {
    std::filesystem::path m(media);
    return m.is_absolute() ? m : manifest_path.parent_path() / m;
}

inline uint64_t file_content_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot hash missing file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes);
}

}  // namespace advgen
