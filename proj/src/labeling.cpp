// SPDX-License-Identifier: Apache-2.0

#include "ramerge/labeling.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

namespace ramerge {

namespace {

using json = nlohmann::json;

ResponseRecord parse_record(const json& j, std::size_t line) {
    if (!j.is_object()) throw LogFormatError(line, "expected a JSON object");
    ResponseRecord r;
    if (!j.contains("query_id") || !j["query_id"].is_string()) {
        throw LogFormatError(line, "query_id must be a string");
    }
    r.query_id = j["query_id"].get<std::string>();
    if (!j.contains("model") || !j["model"].is_string()) throw LogFormatError(line, "model must be a string");
    try {
        r.model = model_tag_from_string(j["model"].get<std::string>());
    } catch (const Error& e) {
        throw LogFormatError(line, e.what());
    }
    if (!j.contains("sample_index") || !j["sample_index"].is_number_unsigned()) {
        throw LogFormatError(line, "sample_index must be a non-negative integer");
    }
    r.sample_index = j["sample_index"].get<std::size_t>();
    if (!j.contains("correct") || !j["correct"].is_boolean()) throw LogFormatError(line, "correct must be a boolean");
    r.correct = j["correct"].get<bool>();
    if (!j.contains("token_count") || !j["token_count"].is_number_unsigned()) {
        throw LogFormatError(line, "token_count must be a non-negative integer");
    }
    r.token_count = j["token_count"].get<std::uint64_t>();
    return r;
}

}  // namespace

std::string to_string(ModelTag tag) {
    return tag == ModelTag::long_cot ? "long" : "short";
}

ModelTag model_tag_from_string(const std::string& text) {
    if (text == "long") return ModelTag::long_cot;
    if (text == "short") return ModelTag::short_cot;
    throw Error("unknown model tag '" + text + "' (expected \"long\" or \"short\")");
}

std::string to_string(LabelReason reason) {
    switch (reason) {
        case LabelReason::accuracy: return "accuracy";
        case LabelReason::tie_tokens: return "tie_tokens";
        case LabelReason::tie_default: return "tie_default";
    }
    return "accuracy";
}

std::vector<ResponseRecord> parse_response_log(std::istream& in) {
    std::vector<ResponseRecord> records;
    std::set<std::tuple<std::string, ModelTag, std::size_t>> seen;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw LogFormatError(line, std::string("malformed JSON: ") + e.what());
        }
        ResponseRecord r = parse_record(j, line);
        if (!seen.emplace(r.query_id, r.model, r.sample_index).second) {
            throw LabelingError("line " + std::to_string(line) + ": duplicate record (" + r.query_id + ", " +
                                to_string(r.model) + ", " + std::to_string(r.sample_index) + ")");
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<ResponseRecord> ingest_response_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open response log " + path.string());
    return parse_response_log(in);
}

double empirical_accuracy(const std::vector<ResponseRecord>& records) {
    return summarize(records).accuracy;
}

ModelStats summarize(const std::vector<ResponseRecord>& records) {
    if (records.empty()) throw LabelingError("cannot compute accuracy of an empty record set");
    std::size_t correct = 0;
    std::uint64_t tokens = 0;
    for (const auto& r : records) {
        if (r.query_id != records.front().query_id || r.model != records.front().model) {
            throw LabelingError("record set mixes queries or models");
        }
        correct += r.correct ? 1 : 0;
        tokens += r.token_count;
    }
    ModelStats s;
    s.samples = records.size();
    s.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
    s.mean_tokens = static_cast<double>(tokens) / static_cast<double>(records.size());
    return s;
}

PatternLabel assign_pattern(const QueryStats& stats) {
    if (!stats.long_stats || !stats.short_stats) {
        throw LabelingError("query " + stats.query_id + " lacks statistics for " +
                            (stats.long_stats ? "the short model" : "the long model"));
    }
    const ModelStats& l = *stats.long_stats;
    const ModelStats& s = *stats.short_stats;
    PatternLabel label;
    label.query_id = stats.query_id;
    if (l.accuracy != s.accuracy) {
        label.positive = l.accuracy > s.accuracy ? ModelTag::long_cot : ModelTag::short_cot;
        label.reason = LabelReason::accuracy;
    } else if (l.mean_tokens != s.mean_tokens) {
        label.positive = l.mean_tokens < s.mean_tokens ? ModelTag::long_cot : ModelTag::short_cot;
        label.reason = LabelReason::tie_tokens;
    } else {
        label.positive = ModelTag::short_cot;
        label.reason = LabelReason::tie_default;
    }
    label.negative = other(label.positive);
    return label;
}

const PatternLabel* PLDataset::find(const std::string& query_id) const {
    auto it = std::lower_bound(labels.begin(), labels.end(), query_id,
                               [](const PatternLabel& l, const std::string& id) { return l.query_id < id; });
    return it != labels.end() && it->query_id == query_id ? &*it : nullptr;
}

PLDataset build_pl_dataset(const std::vector<ResponseRecord>& records, std::size_t k_expected) {
    if (k_expected == 0) throw LabelingError("k must be positive");
    // query -> model -> records, ordered by sample index so stats never depend on log order.
    std::map<std::string, std::map<ModelTag, std::vector<ResponseRecord>>> grouped;
    for (const auto& r : records) {
        if (r.sample_index >= k_expected) {
            throw LabelingError("k mismatch: query " + r.query_id + " model " + to_string(r.model) +
                                " has sample_index " + std::to_string(r.sample_index) + " but k is " +
                                std::to_string(k_expected));
        }
        grouped[r.query_id][r.model].push_back(r);
    }
    if (grouped.empty()) throw LabelingError("no queries");

    PLDataset ds;
    ds.provenance.k = k_expected;
    for (auto& [query, by_model] : grouped) {
        QueryStats stats;
        stats.query_id = query;
        for (ModelTag tag : {ModelTag::long_cot, ModelTag::short_cot}) {
            auto& group = by_model[tag];
            if (group.size() != k_expected) {
                throw LabelingError("missing samples: query " + query + " model " + to_string(tag) + " has " +
                                    std::to_string(group.size()) + " of " + std::to_string(k_expected));
            }
            std::sort(group.begin(), group.end(),
                      [](const ResponseRecord& a, const ResponseRecord& b) { return a.sample_index < b.sample_index; });
            (tag == ModelTag::long_cot ? stats.long_stats : stats.short_stats) = summarize(group);
        }
        ds.labels.push_back(assign_pattern(stats));
    }
    return ds;
}

std::string pl_dataset_to_json(const PLDataset& dataset) {
    nlohmann::ordered_json j;
    j["labels"] = nlohmann::ordered_json::array();
    for (const auto& l : dataset.labels) {
        nlohmann::ordered_json e;
        e["query_id"] = l.query_id;
        e["positive"] = to_string(l.positive);
        e["negative"] = to_string(l.negative);
        e["reason"] = to_string(l.reason);
        j["labels"].push_back(e);
    }
    nlohmann::ordered_json prov;
    prov["k"] = dataset.provenance.k;
    prov["seed"] = dataset.provenance.seed;
    prov["sources"] = dataset.provenance.sources;
    j["provenance"] = prov;
    return j.dump(2) + "\n";
}

PLDataset pl_dataset_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw LabelingError(std::string("PL dataset is not valid JSON: ") + e.what());
    }
    if (!j.contains("labels") || !j["labels"].is_array()) throw LabelingError("PL dataset has no labels array");
    PLDataset ds;
    for (const auto& e : j["labels"]) {
        PatternLabel l;
        try {
            l.query_id = e.at("query_id").get<std::string>();
            l.positive = model_tag_from_string(e.at("positive").get<std::string>());
            l.negative = model_tag_from_string(e.at("negative").get<std::string>());
            const auto reason = e.value("reason", std::string("accuracy"));
            l.reason = reason == "tie_tokens"    ? LabelReason::tie_tokens
                       : reason == "tie_default" ? LabelReason::tie_default
                                                 : LabelReason::accuracy;
        } catch (const json::exception& ex) {
            throw LabelingError(std::string("malformed PL label: ") + ex.what());
        }
        if (l.positive == l.negative) throw LabelingError("label for " + l.query_id + " has positive == negative");
        ds.labels.push_back(std::move(l));
    }
    if (ds.labels.empty()) throw LabelingError("PL dataset is empty");
    std::sort(ds.labels.begin(), ds.labels.end(),
              [](const PatternLabel& a, const PatternLabel& b) { return a.query_id < b.query_id; });
    for (std::size_t i = 1; i < ds.labels.size(); ++i) {
        if (ds.labels[i].query_id == ds.labels[i - 1].query_id) {
            throw LabelingError("PL dataset has two labels for " + ds.labels[i].query_id);
        }
    }
    if (j.contains("provenance") && j["provenance"].is_object()) {
        const auto& p = j["provenance"];
        ds.provenance.k = p.value("k", std::size_t{0});
        ds.provenance.seed = p.value("seed", std::uint64_t{0});
        ds.provenance.sources = p.value("sources", std::vector<std::string>{});
    }
    return ds;
}

PLDataset read_pl_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LabelingError("cannot open PL dataset " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return pl_dataset_from_json(ss.str());
}

}  // namespace ramerge
