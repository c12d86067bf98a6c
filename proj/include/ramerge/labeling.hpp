// SPDX-License-Identifier: Apache-2.0
//
// Pattern-labeled calibration data: for every query, which base model
// (long or short reasoning) should be imitated and which avoided.

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ramerge/error.hpp"

namespace ramerge {

enum class ModelTag { long_cot, short_cot };

std::string to_string(ModelTag tag);          // "long" / "short"
ModelTag model_tag_from_string(const std::string& text);
inline ModelTag other(ModelTag tag) { return tag == ModelTag::long_cot ? ModelTag::short_cot : ModelTag::long_cot; }

struct ResponseRecord {
    std::string query_id;
    ModelTag model = ModelTag::long_cot;
    std::size_t sample_index = 0;
    bool correct = false;
    std::uint64_t token_count = 0;
};

class LabelingError : public Error {
public:
    using Error::Error;
};

// One JSON object per line; blank lines are skipped. Duplicate
// (query_id, model, sample_index) keys raise LabelingError.
std::vector<ResponseRecord> parse_response_log(std::istream& in);
std::vector<ResponseRecord> ingest_response_log(const std::filesystem::path& path);

struct ModelStats {
    std::size_t samples = 0;
    double accuracy = 0.0;
    double mean_tokens = 0.0;
};

struct QueryStats {
    std::string query_id;
    std::optional<ModelStats> long_stats;
    std::optional<ModelStats> short_stats;
};

// Fraction correct over a non-empty set sharing one query_id and model tag.
double empirical_accuracy(const std::vector<ResponseRecord>& records);

ModelStats summarize(const std::vector<ResponseRecord>& records);

enum class LabelReason { accuracy, tie_tokens, tie_default };
std::string to_string(LabelReason reason);

struct PatternLabel {
    std::string query_id;
    ModelTag positive = ModelTag::short_cot;
    ModelTag negative = ModelTag::long_cot;
    LabelReason reason = LabelReason::accuracy;

    friend bool operator==(const PatternLabel&, const PatternLabel&) = default;
};

// Higher accuracy wins; equal accuracy falls back to fewer mean tokens; a
// double tie labels short as positive.
PatternLabel assign_pattern(const QueryStats& stats);

struct PLProvenance {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> sources;
};

struct PLDataset {
    std::vector<PatternLabel> labels;  // sorted by query_id
    PLProvenance provenance;

    const PatternLabel* find(const std::string& query_id) const;
};

// Every query must carry sample indices 0..k_expected-1 for both models.
PLDataset build_pl_dataset(const std::vector<ResponseRecord>& records, std::size_t k_expected);

std::string pl_dataset_to_json(const PLDataset& dataset);
PLDataset pl_dataset_from_json(const std::string& text);
PLDataset read_pl_dataset(const std::filesystem::path& path);

}  // namespace ramerge
