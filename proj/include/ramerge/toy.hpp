// SPDX-License-Identifier: Apache-2.0
//
// Copy / reverse toy fixture: two hand-wired specialists sharing one
// architecture. The short model copies a payload, the long model reverses it,
// each fails the other's task.
//
// Prompt layout: [task, a1 .. a4, SEP]; the answer is the payload (copy) or
// the reversed payload, followed by STOP.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ramerge/eval.hpp"
#include "ramerge/labeling.hpp"
#include "ramerge/model.hpp"
#include "ramerge/random.hpp"

namespace ramerge::toy {

inline constexpr std::size_t n_symbols = 8;
inline constexpr std::size_t payload_length = 4;
inline constexpr TokenId copy_token = 8;
inline constexpr TokenId reverse_token = 9;
inline constexpr TokenId sep_token = 10;
inline constexpr TokenId stop_token = 11;
inline constexpr std::size_t max_new_tokens = payload_length + 1;

enum class TaskFamily { copy, reverse };
std::string to_string(TaskFamily task);

ModelConfig toy_model_config();

struct CircuitParams {
    double embed_scale = 0.2;
    double match_score = 10.0;   // attention logit for the target position
    double gate_score = 20.0;    // logit toward the other task's token (disables the head)
    double sink_score = 4.0;     // logit toward position 0
    double value_gain = 2.0;
    double stop_bias = 1.0;
    double base_noise = 0.005;    // shared Gaussian noise on block matrices
};

struct SpecialistPair {
    Checkpoint long_model;   // reverse specialist
    Checkpoint short_model;  // copy specialist
};

SpecialistPair build_specialists(const CircuitParams& params, std::uint64_t seed);

struct Query {
    std::string id;
    TaskFamily task = TaskFamily::copy;
    std::vector<TokenId> payload;

    std::vector<TokenId> prompt() const;
    std::vector<TokenId> answer() const;  // without STOP
};

std::vector<Query> make_queries(TaskFamily task, std::size_t count, Rng& rng, const std::string& id_prefix);

// Greedy continuation of the prompt; STOP is kept when emitted.
std::vector<TokenId> generate(const Checkpoint& weights, const ModelConfig& config, const Query& query);

bool is_correct(const Query& query, const std::vector<TokenId>& generated);

double accuracy(const Checkpoint& weights, const ModelConfig& config, const std::vector<Query>& queries);

struct SpecialistAccuracy {
    double own_task = 0.0;
    double other_task = 0.0;
};

// Everything the end-to-end experiment needs, derived from one seed.
struct Fixture {
    ModelConfig config;
    SpecialistPair models;
    std::vector<Query> calibration;  // labeled through response logs
    std::vector<Query> evaluation;   // held out
    std::vector<ResponseRecord> responses;  // k greedy samples per calibration query and model
    std::vector<GradedResponse> eval_long;
    std::vector<GradedResponse> eval_short;
    SpecialistAccuracy long_accuracy;   // own task = reverse
    SpecialistAccuracy short_accuracy;  // own task = copy
};

struct FixtureOptions {
    std::size_t k = 4;
    std::size_t calibration_per_task = 64;
    std::size_t evaluation_per_task = 50;
    CircuitParams circuit;
};

// Throws Error naming the seed when a specialist misses >= 0.95 on its own
// task or exceeds 0.2 on the other.
Fixture make_fixture(std::uint64_t seed, const FixtureOptions& options);

// Eval-log records for `weights` on `queries`, benchmark = task family.
std::vector<GradedResponse> grade(const Checkpoint& weights, const ModelConfig& config,
                                  const std::vector<Query>& queries);

}  // namespace ramerge::toy
