#include "locinv/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "locinv/errors.hpp"

namespace locinv {

namespace fs = std::filesystem;
using nlohmann::json;

std::string DatasetManifest::resolve(const std::string& relative) const {
    fs::path p(relative);
    if (p.is_absolute()) return relative;
    return (fs::path(base_dir) / p).string();
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path);
    json j = json::parse(is, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw DataError("invalid manifest JSON: " + path);

    DatasetManifest m;
    m.base_dir = fs::path(path).parent_path().string();
    if (m.base_dir.empty()) m.base_dir = ".";

    if (!j.contains("entries") || !j["entries"].is_array())
        throw DataError("manifest: missing entries array in " + path);
    int index = 0;
    for (const auto& e : j["entries"]) {
        ManifestEntry entry;
        entry.image_path = e.at("image_path").get<std::string>();
        entry.prompt = e.at("prompt").get<std::string>();
        fs::path stem = fs::path(entry.image_path).stem();
        char id[64];
        std::snprintf(id, sizeof(id), "%04d_%s", index, stem.string().c_str());
        entry.id = id;

        for (const auto& n : e.at("nouns")) {
            ManifestNoun noun;
            noun.word = n.at("word").get<std::string>();
            if (n.contains("mask")) {
                noun.mask_path = n.at("mask").get<std::string>();
            } else if (n.contains("box")) {
                auto b = n.at("box").get<std::vector<scalar_t>>();
                if (b.size() != 4) throw DataError("manifest: box needs 4 values in " + path);
                noun.box = NormalizedBox{b[0], b[1], b[2], b[3]};
                noun.box->validate();
            } else {
                throw DataError("manifest: noun \"" + noun.word + "\" needs a mask or a box");
            }
            entry.nouns.push_back(std::move(noun));
        }
        if (entry.nouns.empty())
            throw DataError("manifest: entry " + entry.id + " has no nouns");

        if (e.contains("adjective_pairs"))
            for (const auto& p : e.at("adjective_pairs")) {
                if (!p.is_array() || p.size() != 2)
                    throw DataError("manifest: adjective pairs must be [adjective, noun]");
                entry.adjective_pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
            }
        if (e.contains("edit_task")) {
            entry.edit_source = e.at("edit_task").at("source_word").get<std::string>();
            entry.edit_target = e.at("edit_task").at("target_word").get<std::string>();
        }

        if (!fs::exists(m.resolve(entry.image_path)))
            throw DataError("manifest: missing image file " + m.resolve(entry.image_path));
        for (const auto& n : entry.nouns)
            if (!n.mask_path.empty() && !fs::exists(m.resolve(n.mask_path)))
                throw DataError("manifest: missing mask file " + m.resolve(n.mask_path));

        m.entries.push_back(std::move(entry));
        index += 1;
    }
    return m;
}

}  // namespace locinv
