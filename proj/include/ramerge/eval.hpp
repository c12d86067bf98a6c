// SPDX-License-Identifier: Apache-2.0
//
// Accuracy / response-length bookkeeping over graded responses and the
// comparison against a reference model.

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ramerge/error.hpp"

namespace ramerge {

struct GradedResponse {
    std::string benchmark;
    bool correct = false;
    std::uint64_t token_count = 0;
    std::optional<std::string> text;
};

struct EvalResult {
    std::string benchmark;
    double accuracy = 0.0;
    double mean_tokens = 0.0;
    std::size_t sample_count = 0;
    std::optional<double> thinking_ratio;  // only when every response carries text
};

class EvalError : public Error {
public:
    using Error::Error;
};

// Throws EvalError on an empty list; benchmark names are not checked.
EvalResult evaluate(std::span<const GradedResponse> responses, const std::string& benchmark = "");

// One EvalResult per benchmark, sorted by name.
std::vector<EvalResult> evaluate_by_benchmark(const std::vector<GradedResponse>& responses);

struct BenchmarkComparison {
    EvalResult candidate;
    EvalResult reference;
    // Relative, negative = drop / shorter; empty when the reference value is zero.
    std::optional<double> accuracy_change_pct;
    std::optional<double> length_change_pct;
};

// Summary columns are relative changes of the across-benchmark means.
struct ComparativeReport {
    std::vector<BenchmarkComparison> rows;
    double candidate_mean_accuracy = 0.0;
    double reference_mean_accuracy = 0.0;
    double candidate_mean_tokens = 0.0;
    double reference_mean_tokens = 0.0;
    std::optional<double> accuracy_change_pct;
    std::optional<double> length_change_pct;
};

// Benchmark name sets must match exactly.
ComparativeReport compare(const std::vector<EvalResult>& candidate, const std::vector<EvalResult>& reference);

// 100 * (candidate - reference) / reference; empty for a zero reference
// unless both are zero.
std::optional<double> relative_change_pct(double candidate, double reference);

const std::vector<std::string>& default_thinking_keywords();

// Fraction of responses containing any keyword (ASCII case-insensitive substring).
double thinking_ratio(const std::vector<std::string>& responses, const std::vector<std::string>& keywords);

// JSONL: benchmark, correct, token_count, optional text. Errors carry the line number.
std::vector<GradedResponse> parse_eval_log(std::istream& in);
std::vector<GradedResponse> read_eval_log(const std::filesystem::path& path);

std::string comparative_report_json(const ComparativeReport& report);
std::string comparative_report_table(const ComparativeReport& report);

}  // namespace ramerge
