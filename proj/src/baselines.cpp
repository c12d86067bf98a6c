// SPDX-License-Identifier: Apache-2.0

#include "ramerge/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ramerge/random.hpp"

namespace ramerge {

namespace {

void require_all_compatible(const Checkpoint& base, const std::vector<Checkpoint>& others, const char* method) {
    for (std::size_t i = 0; i < others.size(); ++i) {
        require_shape_compatible(base, others[i], std::string(method) + " input " + std::to_string(i));
    }
}

// Copies base and applies out = base + update(name, flat index) entrywise.
template <typename Update>
Checkpoint apply_update(const Checkpoint& base, Update update) {
    Checkpoint out;
    for (const auto& [name, t] : base.tensors) {
        Tensor merged(t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) {
            merged[i] = static_cast<float>(static_cast<double>(t[i]) + update(name, i));
        }
        out.tensors.emplace(name, std::move(merged));
    }
    return out;
}

}  // namespace

TaskVector task_vector(const Checkpoint& base, const Checkpoint& tuned) {
    require_shape_compatible(base, tuned, "task_vector");
    TaskVector tv;
    for (const auto& [name, b] : base.tensors) {
        tv.deltas.emplace(name, lerp_tensor(tuned.tensors.at(name), b, 1.0, -1.0));
    }
    return tv;
}

Checkpoint average_merge(const std::vector<Checkpoint>& checkpoints) {
    if (checkpoints.size() < 2) throw ConfigError("average_merge needs at least two checkpoints");
    require_all_compatible(checkpoints.front(), checkpoints, "average_merge");
    const double n = static_cast<double>(checkpoints.size());
    Checkpoint out;
    for (const auto& [name, first] : checkpoints.front().tensors) {
        Tensor mean(first.shape());
        for (std::size_t i = 0; i < first.size(); ++i) {
            double acc = 0.0;
            for (const auto& ck : checkpoints) acc += ck.tensors.at(name)[i];
            mean[i] = static_cast<float>(acc / n);
        }
        out.tensors.emplace(name, std::move(mean));
    }
    return out;
}

Checkpoint task_arithmetic_merge(const Checkpoint& base, const std::vector<Checkpoint>& tuned, double scale) {
    return task_arithmetic_merge(base, tuned, std::vector<double>(tuned.size(), scale));
}

Checkpoint task_arithmetic_merge(const Checkpoint& base, const std::vector<Checkpoint>& tuned,
                                 const std::vector<double>& scales) {
    if (tuned.empty()) throw ConfigError("task_arithmetic_merge needs at least one tuned checkpoint");
    if (scales.size() != tuned.size()) throw ConfigError("task_arithmetic_merge needs one scale per tuned model");
    require_all_compatible(base, tuned, "task_arithmetic_merge");
    return apply_update(base, [&](const std::string& name, std::size_t i) {
        const double b = base.tensors.at(name)[i];
        double acc = 0.0;
        for (std::size_t m = 0; m < tuned.size(); ++m) {
            acc += scales[m] * (static_cast<double>(tuned[m].tensors.at(name)[i]) - b);
        }
        return acc;
    });
}

std::vector<bool> ties_trim_mask(std::span<const double> delta, double density) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw ConfigError("TIES density must lie in (0, 1], got " + std::to_string(density));
    }
    const std::size_t n = delta.size();
    const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(density * static_cast<double>(n))));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::fabs(delta[a]) > std::fabs(delta[b]); });
    std::vector<bool> mask(n, false);
    for (std::size_t i = 0; i < keep; ++i) mask[order[i]] = true;
    return mask;
}

Checkpoint ties_merge(const Checkpoint& base, const std::vector<Checkpoint>& tuned, double density, double scale) {
    if (tuned.empty()) throw ConfigError("ties_merge needs at least one tuned checkpoint");
    if (!(density > 0.0 && density <= 1.0)) {
        throw ConfigError("TIES density must lie in (0, 1], got " + std::to_string(density));
    }
    require_all_compatible(base, tuned, "ties_merge");

    Checkpoint out;
    for (const auto& [name, b] : base.tensors) {
        const std::size_t n = b.size();
        // Trimmed deltas, one row per tuned model; zero where trimmed.
        std::vector<std::vector<double>> trimmed(tuned.size(), std::vector<double>(n, 0.0));
        std::vector<double> delta(n);
        for (std::size_t m = 0; m < tuned.size(); ++m) {
            const Tensor& t = tuned[m].tensors.at(name);
            for (std::size_t i = 0; i < n; ++i) delta[i] = static_cast<double>(t[i]) - b[i];
            const auto mask = ties_trim_mask(delta, density);
            for (std::size_t i = 0; i < n; ++i) {
                if (mask[i]) trimmed[m][i] = delta[i];
            }
        }
        Tensor merged(b.shape());
        for (std::size_t i = 0; i < n; ++i) {
            double total = 0.0;
            for (std::size_t m = 0; m < tuned.size(); ++m) total += trimmed[m][i];
            double agree_sum = 0.0;
            std::size_t agree = 0;
            // A zero total elects no sign, so nothing is merged at this entry.
            if (total != 0.0) {
                for (std::size_t m = 0; m < tuned.size(); ++m) {
                    const double d = trimmed[m][i];
                    if (d != 0.0 && (d > 0.0) == (total > 0.0)) {
                        agree_sum += d;
                        ++agree;
                    }
                }
            }
            const double update = agree ? scale * (agree_sum / static_cast<double>(agree)) : 0.0;
            merged[i] = static_cast<float>(static_cast<double>(b[i]) + update);
        }
        out.tensors.emplace(name, std::move(merged));
    }
    return out;
}

bool dare_keeps(std::uint64_t seed, const std::string& name, std::size_t index, double drop_rate) {
    return !(counter_uniform(seed, name, index) < drop_rate);
}

TaskVector dare_transform(const TaskVector& delta, double drop_rate, std::uint64_t seed) {
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) {
        throw ConfigError("DARE drop_rate must lie in [0, 1), got " + std::to_string(drop_rate));
    }
    const double rescale = 1.0 / (1.0 - drop_rate);
    TaskVector out;
    for (const auto& [name, d] : delta.deltas) {
        Tensor t(d.shape());
        for (std::size_t i = 0; i < d.size(); ++i) {
            t[i] = dare_keeps(seed, name, i, drop_rate) ? static_cast<float>(static_cast<double>(d[i]) * rescale)
                                                        : 0.0f;
        }
        out.deltas.emplace(name, std::move(t));
    }
    return out;
}

std::uint64_t dare_model_seed(std::uint64_t seed, std::size_t model_index) {
    return model_index == 0 ? seed : splitmix64(seed ^ splitmix64(model_index));
}

Checkpoint dare_linear_merge(const Checkpoint& base, const std::vector<Checkpoint>& tuned, double drop_rate,
                             const std::vector<double>& scales, std::uint64_t seed) {
    if (tuned.empty()) throw ConfigError("dare_linear_merge needs at least one tuned checkpoint");
    if (scales.size() != tuned.size()) throw ConfigError("dare_linear_merge needs one scale per tuned model");
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) {
        throw ConfigError("DARE drop_rate must lie in [0, 1), got " + std::to_string(drop_rate));
    }
    require_all_compatible(base, tuned, "dare_linear_merge");
    const double rescale = 1.0 / (1.0 - drop_rate);
    std::vector<std::uint64_t> seeds;
    for (std::size_t m = 0; m < tuned.size(); ++m) seeds.push_back(dare_model_seed(seed, m));
    // Same accumulation as task_arithmetic_merge, so drop_rate = 0 reproduces it bit for bit.
    return apply_update(base, [&](const std::string& name, std::size_t i) {
        const double b = base.tensors.at(name)[i];
        double acc = 0.0;
        for (std::size_t m = 0; m < tuned.size(); ++m) {
            if (dare_keeps(seeds[m], name, i, drop_rate)) {
                acc += scales[m] * ((static_cast<double>(tuned[m].tensors.at(name)[i]) - b) * rescale);
            }
        }
        return acc;
    });
}

}  // namespace ramerge
