// SPDX-License-Identifier: Apache-2.0
//
// Data-free merge baselines: weight averaging, task arithmetic, TIES and
// DARE-linear. All of them preserve the name set and shapes of their inputs.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ramerge/tensor.hpp"

namespace ramerge {

// Per-name fine-tuned minus base.
struct TaskVector {
    std::map<std::string, Tensor> deltas;
};

TaskVector task_vector(const Checkpoint& base, const Checkpoint& tuned);

// Per-tensor arithmetic mean of >= 2 shape-compatible checkpoints.
Checkpoint average_merge(const std::vector<Checkpoint>& checkpoints);

// base + scale * sum_i (tuned_i - base)
Checkpoint task_arithmetic_merge(const Checkpoint& base, const std::vector<Checkpoint>& tuned, double scale);

// Same with one scale per tuned model.
Checkpoint task_arithmetic_merge(const Checkpoint& base, const std::vector<Checkpoint>& tuned,
                                 const std::vector<double>& scales);

// Trim each task vector to its top ceil(density * n) magnitudes per tensor,
// elect a sign per entry from the summed trimmed deltas, average the
// sign-agreeing survivors and add scale * that mean to base.
Checkpoint ties_merge(const Checkpoint& base, const std::vector<Checkpoint>& tuned, double density, double scale);

// Indices kept by the TIES trim step for one tensor: the k largest |delta|,
// ties broken toward the lower index.
std::vector<bool> ties_trim_mask(std::span<const double> delta, double density);

// Drop each entry with probability drop_rate and rescale survivors by
// 1 / (1 - drop_rate). The mask depends only on (seed, tensor name, index).
TaskVector dare_transform(const TaskVector& delta, double drop_rate, std::uint64_t seed);

// Mask decision behind dare_transform.
bool dare_keeps(std::uint64_t seed, const std::string& name, std::size_t index, double drop_rate);

// Seed used for the i-th tuned model inside dare_linear_merge.
std::uint64_t dare_model_seed(std::uint64_t seed, std::size_t model_index);

// base + sum_i scales[i] * dare(tuned_i - base)
Checkpoint dare_linear_merge(const Checkpoint& base, const std::vector<Checkpoint>& tuned, double drop_rate,
                             const std::vector<double>& scales, std::uint64_t seed);

}  // namespace ramerge
