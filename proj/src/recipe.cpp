// SPDX-License-Identifier: Apache-2.0

#include "ramerge/recipe.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace ramerge {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

const std::map<std::string, MergeMethod> kMethods{
    {"average", MergeMethod::average}, {"task_arithmetic", MergeMethod::task_arithmetic},
    {"ties", MergeMethod::ties},       {"dare_linear", MergeMethod::dare_linear},
    {"rpam", MergeMethod::rpam},
};

std::string read_text(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(std::string("cannot open ") + what + " " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

// Reads optional typed fields, recording a problem instead of throwing.
struct FieldReader {
    const json& obj;
    std::string where;
    std::vector<std::string>& problems;

    std::optional<double> number(const char* key) {
        if (!obj.contains(key)) return std::nullopt;
        if (!obj[key].is_number()) {
            problems.push_back(where + key + ": expected a number");
            return std::nullopt;
        }
        return obj[key].get<double>();
    }
    std::optional<std::uint64_t> count(const char* key) {
        if (!obj.contains(key)) return std::nullopt;
        if (!obj[key].is_number_unsigned()) {
            problems.push_back(where + key + ": expected a non-negative integer");
            return std::nullopt;
        }
        return obj[key].get<std::uint64_t>();
    }
    std::optional<bool> boolean(const char* key) {
        if (!obj.contains(key)) return std::nullopt;
        if (!obj[key].is_boolean()) {
            problems.push_back(where + key + ": expected a boolean");
            return std::nullopt;
        }
        return obj[key].get<bool>();
    }
    std::optional<std::string> string(const char* key) {
        if (!obj.contains(key)) return std::nullopt;
        if (!obj[key].is_string()) {
            problems.push_back(where + key + ": expected a string");
            return std::nullopt;
        }
        return obj[key].get<std::string>();
    }
};

}  // namespace

std::string to_string(MergeMethod method) {
    for (const auto& [name, m] : kMethods) {
        if (m == method) return name;
    }
    return "average";
}

MergeRecipe parse_recipe(const std::string& text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError({std::string("recipe is not valid JSON: ") + e.what()});
    }
    if (!j.is_object()) throw ValidationError({"recipe must be a JSON object"});

    std::vector<std::string> problems;
    MergeRecipe r;
    FieldReader top{j, "", problems};

    if (auto m = top.string("method")) {
        auto it = kMethods.find(*m);
        if (it == kMethods.end()) {
            problems.push_back("method: unknown method '" + *m +
                               "' (expected average, task_arithmetic, ties, dare_linear or rpam)");
        } else {
            r.method = it->second;
        }
    } else if (!j.contains("method")) {
        problems.push_back("method: required");
    }

    if (!j.contains("inputs") || !j["inputs"].is_array()) {
        problems.push_back("inputs: expected an array of {path, role}");
    } else {
        for (std::size_t i = 0; i < j["inputs"].size(); ++i) {
            const json& e = j["inputs"][i];
            const std::string where = "inputs[" + std::to_string(i) + "].";
            if (!e.is_object()) {
                problems.push_back(where.substr(0, where.size() - 1) + ": expected an object");
                continue;
            }
            FieldReader f{e, where, problems};
            RecipeInput in;
            if (auto p = f.string("path")) {
                in.path = resolve(base_dir, *p);
            } else if (!e.contains("path")) {
                problems.push_back(where + "path: required");
            }
            in.role = f.string("role").value_or("model");
            in.scale = f.number("scale");
            r.inputs.push_back(std::move(in));
        }
    }

    const json empty = json::object();
    const json& params = j.contains("parameters") ? j["parameters"] : empty;
    if (!params.is_object()) problems.push_back("parameters: expected an object");
    FieldReader p{params.is_object() ? params : empty, "parameters.", problems};
    r.scale = p.number("scale");
    r.density = p.number("density");
    r.drop_rate = p.number("drop_rate");
    if (auto s = p.count("seed")) r.seed = *s;
    r.calibration.seed = r.seed;
    if (auto v = p.number("tau")) r.calibration.tau = *v;
    if (auto v = p.number("omega")) r.calibration.omega = *v;
    if (auto v = p.number("learning_rate")) r.calibration.learning_rate = *v;
    if (auto v = p.count("epochs")) r.calibration.epochs = *v;
    if (auto v = p.number("fd_step")) r.calibration.fd_step = *v;
    if (auto v = p.boolean("grid")) r.calibration.grid = *v;
    if (params.is_object() && params.contains("init_lambda")) {
        const json& l = params["init_lambda"];
        if (l.is_array() && l.size() == 2 && l[0].is_number() && l[1].is_number()) {
            r.calibration.init_lambda = {l[0].get<double>(), l[1].get<double>()};
        } else {
            problems.push_back("parameters.init_lambda: expected [lambda_long, lambda_short]");
        }
    }

    if (auto v = top.string("pl_dataset")) r.pl_dataset = resolve(base_dir, *v);
    if (auto v = top.string("prompts")) r.prompts = resolve(base_dir, *v);
    if (auto v = top.string("model_config")) r.model_config = resolve(base_dir, *v);
    if (auto v = top.string("output")) r.output = *v;

    if (!problems.empty()) throw ValidationError(problems);
    return r;
}

MergeRecipe read_recipe(const std::filesystem::path& path) {
    return parse_recipe(read_text(path, "recipe"), path.parent_path());
}

void validate_recipe(const MergeRecipe& r) {
    std::vector<std::string> problems;
    auto count_role = [&](const std::string& role) {
        std::size_t n = 0;
        for (const auto& in : r.inputs) n += in.role == role ? 1 : 0;
        return n;
    };
    auto only_roles = [&](std::initializer_list<const char*> allowed) {
        for (std::size_t i = 0; i < r.inputs.size(); ++i) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || r.inputs[i].role == a;
            if (!ok) {
                std::string list;
                for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
                problems.push_back("inputs[" + std::to_string(i) + "].role: '" + r.inputs[i].role + "' not valid for " +
                                   to_string(r.method) + " (expected " + list + ")");
            }
        }
    };
    auto in_unit = [&](const char* field, const std::optional<double>& v, bool zero_ok) {
        if (!v) return;
        const bool ok = zero_ok ? (*v >= 0.0 && *v < 1.0) : (*v > 0.0 && *v <= 1.0);
        if (!ok) problems.push_back(std::string("parameters.") + field + ": must lie in " + (zero_ok ? "[0, 1)" : "(0, 1]"));
    };

    switch (r.method) {
        case MergeMethod::average:
            if (r.inputs.size() < 2) problems.push_back("inputs: average needs at least two checkpoints");
            only_roles({"model"});
            break;
        case MergeMethod::task_arithmetic:
        case MergeMethod::ties:
        case MergeMethod::dare_linear: {
            only_roles({"base", "tuned"});
            if (count_role("base") != 1) problems.push_back("inputs: exactly one input with role 'base' is required");
            if (count_role("tuned") < 1) problems.push_back("inputs: at least one input with role 'tuned' is required");
            bool per_input = true;
            for (const auto& in : r.inputs) {
                if (in.role == "tuned" && !in.scale) per_input = false;
            }
            if (r.method == MergeMethod::ties) {
                if (!r.density) problems.push_back("parameters.density: required for ties");
                if (!r.scale) problems.push_back("parameters.scale: required for ties");
            } else if (!r.scale && !per_input) {
                problems.push_back("parameters.scale: required unless every tuned input carries a scale");
            }
            if (r.method == MergeMethod::dare_linear && !r.drop_rate) {
                problems.push_back("parameters.drop_rate: required for dare_linear");
            }
            in_unit("density", r.density, false);
            in_unit("drop_rate", r.drop_rate, true);
            break;
        }
        case MergeMethod::rpam:
            only_roles({"long", "short"});
            if (count_role("long") != 1) problems.push_back("inputs: exactly one input with role 'long' is required");
            if (count_role("short") != 1) problems.push_back("inputs: exactly one input with role 'short' is required");
            if (!r.pl_dataset) problems.push_back("pl_dataset: required for rpam");
            if (!r.prompts) problems.push_back("prompts: required for rpam");
            try {
                r.calibration.validate();
            } catch (const ConfigError& e) {
                problems.push_back(std::string("parameters: ") + e.what());
            }
            break;
    }
    if (r.output.empty() || r.output.find('/') != std::string::npos) {
        problems.push_back("output: must be a plain file name inside the output directory");
    }
    if (!problems.empty()) throw ValidationError(problems);
}

std::string recipe_to_json(const MergeRecipe& r) {
    ojson j;
    j["method"] = to_string(r.method);
    j["inputs"] = ojson::array();
    for (const auto& in : r.inputs) {
        ojson e;
        e["path"] = in.path.generic_string();
        e["role"] = in.role;
        if (in.scale) e["scale"] = *in.scale;
        j["inputs"].push_back(e);
    }
    ojson p;
    if (r.scale) p["scale"] = *r.scale;
    if (r.density) p["density"] = *r.density;
    if (r.drop_rate) p["drop_rate"] = *r.drop_rate;
    p["seed"] = r.seed;
    if (r.method == MergeMethod::rpam) {
        const auto& c = r.calibration;
        p["tau"] = c.tau;
        p["omega"] = c.omega;
        p["learning_rate"] = c.learning_rate;
        p["epochs"] = c.epochs;
        p["fd_step"] = c.fd_step;
        p["grid"] = c.grid;
        p["init_lambda"] = {c.init_lambda.lambda_long, c.init_lambda.lambda_short};
    }
    j["parameters"] = p;
    if (r.pl_dataset) j["pl_dataset"] = r.pl_dataset->generic_string();
    if (r.prompts) j["prompts"] = r.prompts->generic_string();
    if (r.model_config) j["model_config"] = r.model_config->generic_string();
    j["output"] = r.output;
    return j.dump(2) + "\n";
}

PromptMap parse_prompt_map(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("prompt map is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("prompts") || !j["prompts"].is_object()) {
        throw ConfigError("prompt map needs a \"prompts\" object");
    }
    PromptMap out;
    for (const auto& [id, tokens] : j["prompts"].items()) {
        if (!tokens.is_array()) throw ConfigError("prompt " + id + " must be an array of token ids");
        std::vector<TokenId> seq;
        for (const auto& t : tokens) {
            if (!t.is_number_unsigned()) throw ConfigError("prompt " + id + " has a non-integer token");
            seq.push_back(t.get<TokenId>());
        }
        out.emplace(id, std::move(seq));
    }
    return out;
}

PromptMap read_prompt_map(const std::filesystem::path& path) {
    return parse_prompt_map(read_text(path, "prompt map"));
}

std::string prompt_map_to_json(const PromptMap& prompts) {
    ojson j;
    j["prompts"] = ojson::object();
    for (const auto& [id, tokens] : prompts) j["prompts"][id] = tokens;
    return j.dump() + "\n";
}

}  // namespace ramerge
