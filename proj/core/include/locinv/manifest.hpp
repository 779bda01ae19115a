#pragma once

#include <optional>
#include <string>
#include <vector>

#include "locinv/priors.hpp"

namespace locinv {

struct ManifestNoun {
    std::string word;
    std::string mask_path;  // relative to the manifest directory
    std::optional<NormalizedBox> box;
};

struct ManifestEntry {
    std::string id;
    std::string image_path;
    std::string prompt;
    std::vector<ManifestNoun> nouns;
    std::vector<std::pair<std::string, std::string>> adjective_pairs;  // (adjective, noun)
    std::string edit_source, edit_target;
};

struct DatasetManifest {
    std::string base_dir;
    std::vector<ManifestEntry> entries;

    // Validates JSON structure and that referenced files exist.
    static DatasetManifest load(const std::string& path);
    std::string resolve(const std::string& relative) const;
};

}  // namespace locinv
