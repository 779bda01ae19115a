#pragma once

#include <set>
#include <string>
#include <vector>

#include "locinv/config.hpp"
#include "locinv/manifest.hpp"
#include "locinv/metrics.hpp"

namespace locinv {

enum class Stage { Invert, Edit, Eval };

std::set<Stage> parse_stages(const std::string& csv);  // "invert,edit,eval"

struct EntryStatus {
    std::string id;
    bool cached = false;
    std::string error;  // empty = ok
};

struct BatchReport {
    std::string run_dir;
    std::vector<EntryStatus> entries;

    int failed() const;
    int cached() const;
};

// Run layout: <run>/{config.json, entries/<id>/{inversion/, edits/, attn/},
// report.json, curves.csv}. Entries already holding a valid persisted
// inversion are skipped during the invert stage; per-entry failures are
// isolated and the batch continues.
BatchReport run_batch(const DatasetManifest& manifest, const RunConfig& config,
                      const std::set<Stage>& stages, int jobs_override = 0);

struct EvalOutput {
    std::vector<MethodCurveSummary> methods;
    std::string report_json;  // full report content
};

// Evaluates one or more run directories against a manifest and writes
// report.json and curves.csv (threshold,method,mean_iou). Multi-run mode
// yields the method-comparison table.
EvalOutput evaluate_runs(const std::vector<std::string>& run_dirs, const DatasetManifest& manifest,
                         const RunConfig& config, const std::string& out_dir);

// Builds the annotation and localization prior for one manifest entry.
PromptAnnotation entry_annotation(const ManifestEntry& entry, const Tokenizer& tokenizer);
LocalizationPrior entry_prior(const DatasetManifest& manifest, const ManifestEntry& entry,
                              const PromptAnnotation& ann, int resolution);

}  // namespace locinv
