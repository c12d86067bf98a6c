// SPDX-License-Identifier: Apache-2.0
//
// Layer-wise calibration of merge coefficients between a long-reasoning and a
// short-reasoning checkpoint.
//
// For each layer l = 1..L in order, the merged layer
//
//     theta_M(l) = lambda_long(l) * theta_long(l) + lambda_short(l) * theta_short(l)
//
// is applied to the merged stream carried out of the already-frozen layers
// 1..l-1. Its output z_M is pulled toward the positive model's layer output
// (mean squared distance per position) and, with weight omega, pushed away
// from the negative model's via a two-way softmax over pooled, normalized
// features. The two coefficients of the layer are fitted by gradient descent
// on central finite differences, then frozen before moving to layer l+1.
//
// Non-block tensors follow their neighbours: the embeddings use the first
// layer's pair, final norm and unembedding use the last layer's pair.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ramerge/labeling.hpp"
#include "ramerge/model.hpp"
#include "ramerge/tensor.hpp"

namespace ramerge {

class CalibrationError : public Error {
public:
    using Error::Error;
};

struct CoefficientPair {
    double lambda_long = 0.5;
    double lambda_short = 0.5;

    friend bool operator==(const CoefficientPair&, const CoefficientPair&) = default;
};

struct MergeCoefficients {
    std::vector<CoefficientPair> per_layer;

    const CoefficientPair& embedding_group() const { return per_layer.front(); }
    const CoefficientPair& head_group() const { return per_layer.back(); }
};

enum class Pooling { mean };

struct CalibrationConfig {
    double tau = 0.1;
    double omega = 1000.0;
    double learning_rate = 0.01;
    std::size_t epochs = 50;
    CoefficientPair init_lambda{0.5, 0.5};
    Pooling pooling = Pooling::mean;
    double fd_step = 1e-3;
    std::uint64_t seed = 0;

    // When set, every layer is fitted once per (learning rate, epochs)
    // combination and the lowest final loss is kept.
    bool grid = false;
    std::vector<double> grid_learning_rates{0.1, 0.01, 0.001};
    std::vector<std::size_t> grid_epochs{50, 100};

    void validate() const;  // throws ConfigError
};

struct CalibrationExample {
    std::string query_id;
    std::vector<TokenId> tokens;
    ModelTag positive = ModelTag::long_cot;
    ModelTag negative = ModelTag::short_cot;
};

struct LayerFeatureTriple {
    Tensor z_merged;
    Tensor z_positive;
    Tensor z_negative;
};

// Input of the merged stream to one layer. Layer 1 reads the merged embedding,
// which is itself linear in that layer's pair, so it is kept as the two
// per-model embeddings and combined on demand.
struct MergedInput {
    Tensor carried;
    std::optional<std::pair<Tensor, Tensor>> embedded;  // (long, short)

    Tensor resolve(const CoefficientPair& pair) const;
};

Checkpoint merged_layer_params(const Checkpoint& long_layer, const Checkpoint& short_layer,
                               const CoefficientPair& pair);

// Mean over sequence positions.
std::vector<double> pooled(const Tensor& z);

double alignment_loss(const Tensor& z_merged, const Tensor& z_positive);

// -log softmax_pos over {m.p / tau, m.n / tau} with m, p, n the pooled,
// L2-normalized features. Zero-norm pooled features raise CalibrationError.
double contrastive_loss(const Tensor& z_merged, const Tensor& z_positive, const Tensor& z_negative, double tau);

// alignment + omega * contrastive; omega == 0 returns the alignment term unchanged.
double layer_loss(const LayerFeatureTriple& triple, const CalibrationConfig& config);

// Applies block `layer` (0-based) under merged / positive / negative
// parameters to the respective carried inputs.
struct CarriedInputs {
    MergedInput merged;
    Tensor positive;
    Tensor negative;
};
LayerFeatureTriple layer_feature_triple(const Checkpoint& theta_long, const Checkpoint& theta_short,
                                        const ModelConfig& config, const CalibrationExample& example,
                                        std::size_t layer, const CoefficientPair& pair,
                                        const CarriedInputs& carried);

// One layer's calibration problem, independent of how the layer is computed.
using LayerMap = std::function<Tensor(const Checkpoint& layer_params, const Tensor& input)>;

struct LayerExample {
    MergedInput merged_input;
    Tensor z_positive;
    Tensor z_negative;
};

struct LayerProblem {
    Checkpoint long_params;
    Checkpoint short_params;
    LayerMap apply;
    std::vector<LayerExample> examples;
};

// Mean layer loss over the examples, accumulated in example order.
double batch_loss(const LayerProblem& problem, const CoefficientPair& pair, const CalibrationConfig& config);

// Central finite difference of batch_loss; returned as (d/d lambda_long, d/d lambda_short).
CoefficientPair layer_gradient(const LayerProblem& problem, const CoefficientPair& pair,
                               const CalibrationConfig& config);

struct LayerFit {
    CoefficientPair pair;
    std::vector<double> loss_trace;  // loss before each step, then the final loss
    double learning_rate = 0.0;
    std::size_t epochs = 0;
    bool diverged = false;     // pair is the last state with a finite loss
    bool non_decrease = false; // final loss above the initial loss
    std::string message;

    double initial_loss() const { return loss_trace.front(); }
    double final_loss() const { return loss_trace.back(); }
};

LayerFit optimize_layer(const LayerProblem& problem, const CoefficientPair& init, const CalibrationConfig& config,
                        double learning_rate, std::size_t epochs);

struct LayerReport {
    LayerFit chosen;
    std::vector<LayerFit> candidates;  // every grid run (just the chosen one without grid)
};

// Single run at config.learning_rate / config.epochs, or the grid when enabled.
LayerReport fit_layer(const LayerProblem& problem, const CoefficientPair& init, const CalibrationConfig& config);

// Blocks use their own pair; embeddings the first, final norm and unembedding the last.
Checkpoint assemble_merged(const Checkpoint& theta_long, const Checkpoint& theta_short, const ModelConfig& config,
                           const MergeCoefficients& coefficients);

using PromptMap = std::map<std::string, std::vector<TokenId>>;

std::vector<CalibrationExample> calibration_examples(const PLDataset& dataset, const PromptMap& prompts);

// Builds the layer problem for block `layer` given the merged-stream inputs.
LayerProblem make_layer_problem(const Checkpoint& theta_long, const Checkpoint& theta_short, const ModelConfig& config,
                                const std::vector<CalibrationExample>& examples, std::size_t layer,
                                const std::vector<MergedInput>& merged_inputs,
                                const std::vector<HiddenStates>& long_states,
                                const std::vector<HiddenStates>& short_states);

struct RpamResult {
    Checkpoint merged;
    MergeCoefficients coefficients;
    std::vector<LayerReport> layers;
};

RpamResult rpam_merge(const Checkpoint& theta_long, const Checkpoint& theta_short, const ModelConfig& model_config,
                      const PLDataset& dataset, const PromptMap& prompts, const CalibrationConfig& config);

// Coefficient report: per-layer pairs, loss traces, grid candidates and the config.
std::string coefficient_report_json(const RpamResult& result, const CalibrationConfig& config,
                                    const std::string& pl_dataset_sha256);

std::string calibration_config_json(const CalibrationConfig& config);

}  // namespace ramerge
