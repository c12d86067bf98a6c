// SPDX-License-Identifier: Apache-2.0
//
// Merge recipes: which method, which checkpoints in which roles, and the
// method parameters. Relative paths resolve against the recipe's directory.
//
//   {
//     "method": "ties",
//     "inputs": [{"path": "base.safetensors", "role": "base"},
//                {"path": "a.safetensors", "role": "tuned", "scale": 1.0}],
//     "parameters": {"density": 0.5, "scale": 1.0},
//     "output": "merged.safetensors"
//   }

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ramerge/calibration.hpp"

namespace ramerge {

enum class MergeMethod { average, task_arithmetic, ties, dare_linear, rpam };

std::string to_string(MergeMethod method);

struct RecipeInput {
    std::filesystem::path path;
    std::string role;  // model | base | tuned | long | short
    std::optional<double> scale;
};

struct MergeRecipe {
    MergeMethod method = MergeMethod::average;
    std::vector<RecipeInput> inputs;
    std::optional<double> scale;
    std::optional<double> density;
    std::optional<double> drop_rate;
    std::uint64_t seed = 0;
    CalibrationConfig calibration;
    std::optional<std::filesystem::path> pl_dataset;
    std::optional<std::filesystem::path> prompts;
    std::optional<std::filesystem::path> model_config;
    std::string output = "merged.safetensors";
};

// Throws ValidationError listing every malformed field.
MergeRecipe parse_recipe(const std::string& text, const std::filesystem::path& base_dir);
MergeRecipe read_recipe(const std::filesystem::path& path);

// Method-specific requirements; throws ValidationError listing every problem.
void validate_recipe(const MergeRecipe& recipe);

// Effective recipe, paths as resolved.
std::string recipe_to_json(const MergeRecipe& recipe);

// {"prompts": {"query_id": [token, ...], ...}}
PromptMap parse_prompt_map(const std::string& text);
PromptMap read_prompt_map(const std::filesystem::path& path);
std::string prompt_map_to_json(const PromptMap& prompts);

}  // namespace ramerge
