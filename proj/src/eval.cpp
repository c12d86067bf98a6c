// SPDX-License-Identifier: Apache-2.0

#include "ramerge/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ramerge {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string ascii_lower(std::string s) {
    for (char& c : s) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return s;
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

ojson optional_json(const std::optional<double>& v) {
    return v ? ojson(*v) : ojson(nullptr);
}

std::string change_cell(const std::optional<double>& v) {
    return v ? fmt("%+.2f%%", *v) : "n/a";
}

ojson result_json(const EvalResult& r) {
    ojson j;
    j["benchmark"] = r.benchmark;
    j["accuracy"] = r.accuracy;
    j["mean_tokens"] = r.mean_tokens;
    j["sample_count"] = r.sample_count;
    if (r.thinking_ratio) j["thinking_ratio"] = *r.thinking_ratio;
    return j;
}

}  // namespace

EvalResult evaluate(std::span<const GradedResponse> responses, const std::string& benchmark) {
    if (responses.empty()) throw EvalError("cannot evaluate an empty response list");
    std::size_t correct = 0;
    std::uint64_t tokens = 0;
    bool all_text = true;
    std::vector<std::string> texts;
    for (const auto& r : responses) {
        correct += r.correct ? 1 : 0;
        tokens += r.token_count;
        if (r.text) {
            texts.push_back(*r.text);
        } else {
            all_text = false;
        }
    }
    EvalResult out;
    out.benchmark = benchmark;
    out.sample_count = responses.size();
    out.accuracy = static_cast<double>(correct) / static_cast<double>(responses.size());
    out.mean_tokens = static_cast<double>(tokens) / static_cast<double>(responses.size());
    if (all_text) out.thinking_ratio = thinking_ratio(texts, default_thinking_keywords());
    return out;
}

std::vector<EvalResult> evaluate_by_benchmark(const std::vector<GradedResponse>& responses) {
    if (responses.empty()) throw EvalError("eval log has no responses");
    std::map<std::string, std::vector<GradedResponse>> groups;
    for (const auto& r : responses) groups[r.benchmark].push_back(r);
    std::vector<EvalResult> out;
    for (const auto& [name, group] : groups) out.push_back(evaluate(group, name));
    return out;
}

std::optional<double> relative_change_pct(double candidate, double reference) {
    if (reference == 0.0) {
        if (candidate == 0.0) return 0.0;
        return std::nullopt;
    }
    return 100.0 * (candidate - reference) / reference;
}

ComparativeReport compare(const std::vector<EvalResult>& candidate, const std::vector<EvalResult>& reference) {
    std::map<std::string, const EvalResult*> ref;
    for (const auto& r : reference) {
        if (!ref.emplace(r.benchmark, &r).second) throw EvalError("duplicate reference benchmark " + r.benchmark);
    }
    std::set<std::string> cand_names;
    for (const auto& c : candidate) {
        if (!cand_names.insert(c.benchmark).second) throw EvalError("duplicate candidate benchmark " + c.benchmark);
    }
    std::vector<std::string> problems;
    for (const auto& name : cand_names) {
        if (!ref.count(name)) problems.push_back(name + " missing from reference");
    }
    for (const auto& [name, r] : ref) {
        if (!cand_names.count(name)) problems.push_back(name + " missing from candidate");
    }
    if (!problems.empty()) {
        std::string msg = "benchmark set mismatch:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw EvalError(msg);
    }
    if (candidate.empty()) throw EvalError("nothing to compare");

    std::vector<const EvalResult*> sorted;
    for (const auto& c : candidate) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(),
              [](const EvalResult* a, const EvalResult* b) { return a->benchmark < b->benchmark; });

    ComparativeReport report;
    for (const EvalResult* c : sorted) {
        const EvalResult& r = *ref.at(c->benchmark);
        BenchmarkComparison row{*c, r, relative_change_pct(c->accuracy, r.accuracy),
                                relative_change_pct(c->mean_tokens, r.mean_tokens)};
        report.candidate_mean_accuracy += c->accuracy;
        report.reference_mean_accuracy += r.accuracy;
        report.candidate_mean_tokens += c->mean_tokens;
        report.reference_mean_tokens += r.mean_tokens;
        report.rows.push_back(std::move(row));
    }
    const double n = static_cast<double>(report.rows.size());
    report.candidate_mean_accuracy /= n;
    report.reference_mean_accuracy /= n;
    report.candidate_mean_tokens /= n;
    report.reference_mean_tokens /= n;
    report.accuracy_change_pct = relative_change_pct(report.candidate_mean_accuracy, report.reference_mean_accuracy);
    report.length_change_pct = relative_change_pct(report.candidate_mean_tokens, report.reference_mean_tokens);
    return report;
}

const std::vector<std::string>& default_thinking_keywords() {
    static const std::vector<std::string> words{"wait",           "re-examine",     "recap",
                                                "double-check",   "let me just check", "let me just verify"};
    return words;
}

double thinking_ratio(const std::vector<std::string>& responses, const std::vector<std::string>& keywords) {
    if (keywords.empty()) throw EvalError("thinking_ratio needs at least one keyword");
    if (responses.empty()) return 0.0;
    std::vector<std::string> lowered;
    for (const auto& k : keywords) lowered.push_back(ascii_lower(k));
    std::size_t hits = 0;
    for (const auto& r : responses) {
        const std::string text = ascii_lower(r);
        hits += std::any_of(lowered.begin(), lowered.end(),
                            [&](const std::string& k) { return text.find(k) != std::string::npos; })
                    ? 1
                    : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(responses.size());
}

std::vector<GradedResponse> parse_eval_log(std::istream& in) {
    std::vector<GradedResponse> out;
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
        if (!j.is_object()) throw LogFormatError(line, "expected a JSON object");
        GradedResponse r;
        if (!j.contains("benchmark") || !j["benchmark"].is_string()) {
            throw LogFormatError(line, "benchmark must be a string");
        }
        r.benchmark = j["benchmark"].get<std::string>();
        if (!j.contains("correct") || !j["correct"].is_boolean()) throw LogFormatError(line, "correct must be a boolean");
        r.correct = j["correct"].get<bool>();
        if (!j.contains("token_count") || !j["token_count"].is_number_unsigned()) {
            throw LogFormatError(line, "token_count must be a non-negative integer");
        }
        r.token_count = j["token_count"].get<std::uint64_t>();
        if (j.contains("text")) {
            if (!j["text"].is_string()) throw LogFormatError(line, "text must be a string");
            r.text = j["text"].get<std::string>();
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<GradedResponse> read_eval_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw EvalError("cannot open eval log " + path.string());
    return parse_eval_log(in);
}

std::string comparative_report_json(const ComparativeReport& report) {
    ojson j;
    j["benchmarks"] = ojson::array();
    for (const auto& row : report.rows) {
        ojson e;
        e["benchmark"] = row.candidate.benchmark;
        e["candidate"] = result_json(row.candidate);
        e["reference"] = result_json(row.reference);
        e["accuracy_change_pct"] = optional_json(row.accuracy_change_pct);
        e["length_change_pct"] = optional_json(row.length_change_pct);
        j["benchmarks"].push_back(e);
    }
    ojson s;
    s["candidate_mean_accuracy"] = report.candidate_mean_accuracy;
    s["reference_mean_accuracy"] = report.reference_mean_accuracy;
    s["candidate_mean_tokens"] = report.candidate_mean_tokens;
    s["reference_mean_tokens"] = report.reference_mean_tokens;
    s["accuracy_change_pct"] = optional_json(report.accuracy_change_pct);
    s["length_change_pct"] = optional_json(report.length_change_pct);
    j["summary"] = s;
    return j.dump(2) + "\n";
}

// Two lines per model: accuracy row and length row, one column per benchmark
// plus an average column with the relative change in parentheses.
std::string comparative_report_table(const ComparativeReport& report) {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"model", "metric"};
    for (const auto& row : report.rows) header.push_back(row.candidate.benchmark);
    header.push_back("avg");
    cells.push_back(header);

    auto add = [&](const std::string& who, const std::string& metric, bool candidate, bool length) {
        std::vector<std::string> line{who, metric};
        for (const auto& row : report.rows) {
            const EvalResult& r = candidate ? row.candidate : row.reference;
            line.push_back(length ? fmt("%.1f", r.mean_tokens) : fmt("%.2f", 100.0 * r.accuracy));
        }
        if (length) {
            std::string avg = fmt("%.1f", candidate ? report.candidate_mean_tokens : report.reference_mean_tokens);
            if (candidate) avg += " (" + change_cell(report.length_change_pct) + ")";
            line.push_back(avg);
        } else {
            std::string avg =
                fmt("%.2f", 100.0 * (candidate ? report.candidate_mean_accuracy : report.reference_mean_accuracy));
            if (candidate) avg += " (" + change_cell(report.accuracy_change_pct) + ")";
            line.push_back(avg);
        }
        cells.push_back(line);
    };
    add("reference", "acc", false, false);
    add("reference", "len", false, true);
    add("candidate", "acc", true, false);
    add("candidate", "len", true, true);

    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : cells) {
        for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
    }
    std::ostringstream os;
    for (const auto& line : cells) {
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (i) os << "  ";
            if (i < 2) {
                os << line[i] << std::string(width[i] - line[i].size(), ' ');
            } else {
                os << std::string(width[i] - line[i].size(), ' ') << line[i];
            }
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace ramerge
