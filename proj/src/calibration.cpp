// SPDX-License-Identifier: Apache-2.0

#include "ramerge/calibration.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

namespace ramerge {

namespace {

using ojson = nlohmann::ordered_json;

std::vector<double> normalized_pool(const Tensor& z, const char* which) {
    auto v = pooled(z);
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm == 0.0 || !std::isfinite(norm)) {
        throw CalibrationError(std::string("contrastive_loss: pooled ") + which + " feature has zero or non-finite norm");
    }
    for (double& x : v) x /= norm;
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
    }
}

ojson fit_json(const LayerFit& fit) {
    ojson j;
    j["lambda_long"] = fit.pair.lambda_long;
    j["lambda_short"] = fit.pair.lambda_short;
    j["learning_rate"] = fit.learning_rate;
    j["epochs"] = fit.epochs;
    j["initial_loss"] = fit.initial_loss();
    j["final_loss"] = fit.final_loss();
    j["diverged"] = fit.diverged;
    j["non_decrease_warning"] = fit.non_decrease;
    if (!fit.message.empty()) j["message"] = fit.message;
    return j;
}

ojson config_json(const CalibrationConfig& c) {
    ojson j;
    j["tau"] = c.tau;
    j["omega"] = c.omega;
    j["learning_rate"] = c.learning_rate;
    j["epochs"] = c.epochs;
    j["init_lambda"] = {c.init_lambda.lambda_long, c.init_lambda.lambda_short};
    j["pooling"] = "mean";
    j["fd_step"] = c.fd_step;
    j["seed"] = c.seed;
    j["grid"] = c.grid;
    j["grid_learning_rates"] = c.grid_learning_rates;
    j["grid_epochs"] = c.grid_epochs;
    return j;
}

}  // namespace

void CalibrationConfig::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive");
    if (!(omega >= 0.0) || !std::isfinite(omega)) throw ConfigError("omega must be non-negative");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(fd_step > 0.0) || !std::isfinite(fd_step)) throw ConfigError("fd_step must be positive");
    if (!std::isfinite(init_lambda.lambda_long) || !std::isfinite(init_lambda.lambda_short)) {
        throw ConfigError("init_lambda must be finite");
    }
    if (grid) {
        if (grid_learning_rates.empty() || grid_epochs.empty()) throw ConfigError("grid needs learning rates and epochs");
        for (double lr : grid_learning_rates) {
            if (!(lr > 0.0)) throw ConfigError("grid learning rates must be positive");
        }
        for (auto e : grid_epochs) {
            if (e == 0) throw ConfigError("grid epochs must be positive");
        }
    }
}

Tensor MergedInput::resolve(const CoefficientPair& pair) const {
    if (embedded) return lerp_tensor(embedded->first, embedded->second, pair.lambda_long, pair.lambda_short);
    return carried;
}

Checkpoint merged_layer_params(const Checkpoint& long_layer, const Checkpoint& short_layer,
                               const CoefficientPair& pair) {
    return lerp_checkpoint(long_layer, short_layer, pair.lambda_long, pair.lambda_short);
}

std::vector<double> pooled(const Tensor& z) {
    if (z.rank() != 2 || z.rows() == 0) throw ShapeError("pooled: need a non-empty [seq, d_model] tensor");
    const std::size_t n = z.rows(), d = z.cols();
    std::vector<double> out(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) out[c] += z.at(r, c);
    }
    for (double& v : out) v /= static_cast<double>(n);
    return out;
}

double alignment_loss(const Tensor& z_merged, const Tensor& z_positive) {
    require_same_shape(z_merged, z_positive, "alignment_loss");
    if (z_merged.rank() != 2 || z_merged.rows() == 0) throw ShapeError("alignment_loss: need [seq, d_model]");
    const std::size_t n = z_merged.rows(), d = z_merged.cols();
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = static_cast<double>(z_merged.at(r, c)) - z_positive.at(r, c);
            row += diff * diff;
        }
        total += row;
    }
    return total / static_cast<double>(n);
}

double contrastive_loss(const Tensor& z_merged, const Tensor& z_positive, const Tensor& z_negative, double tau) {
    if (!(tau > 0.0)) throw ConfigError("contrastive_loss: tau must be positive");
    require_same_shape(z_merged, z_positive, "contrastive_loss");
    require_same_shape(z_merged, z_negative, "contrastive_loss");
    const auto m = normalized_pool(z_merged, "merged");
    const auto p = normalized_pool(z_positive, "positive");
    const auto n = normalized_pool(z_negative, "negative");
    // -log(e^a / (e^a + e^b)) = log(1 + e^(b - a))
    const double gap = (dot(m, n) - dot(m, p)) / tau;
    return gap > 0.0 ? gap + std::log1p(std::exp(-gap)) : std::log1p(std::exp(gap));
}

double layer_loss(const LayerFeatureTriple& triple, const CalibrationConfig& config) {
    const double align = alignment_loss(triple.z_merged, triple.z_positive);
    if (config.omega == 0.0) return align;
    return align + config.omega * contrastive_loss(triple.z_merged, triple.z_positive, triple.z_negative, config.tau);
}

LayerFeatureTriple layer_feature_triple(const Checkpoint& theta_long, const Checkpoint& theta_short,
                                        const ModelConfig& config, const CalibrationExample& example,
                                        std::size_t layer, const CoefficientPair& pair,
                                        const CarriedInputs& carried) {
    if (layer >= config.n_layers) {
        throw ConfigError("layer " + std::to_string(layer) + " out of range for " + std::to_string(config.n_layers) +
                          " layers");
    }
    const Checkpoint long_layer = block_params(theta_long, layer);
    const Checkpoint short_layer = block_params(theta_short, layer);
    const Checkpoint& pos = example.positive == ModelTag::long_cot ? long_layer : short_layer;
    const Checkpoint& neg = example.negative == ModelTag::long_cot ? long_layer : short_layer;
    LayerFeatureTriple t;
    t.z_merged = block_forward(merged_layer_params(long_layer, short_layer, pair), "", config,
                               carried.merged.resolve(pair));
    t.z_positive = block_forward(pos, "", config, carried.positive);
    t.z_negative = block_forward(neg, "", config, carried.negative);
    return t;
}

double batch_loss(const LayerProblem& problem, const CoefficientPair& pair, const CalibrationConfig& config) {
    if (problem.examples.empty()) throw CalibrationError("empty calibration batch");
    const Checkpoint merged = merged_layer_params(problem.long_params, problem.short_params, pair);
    double total = 0.0;
    for (const auto& ex : problem.examples) {
        LayerFeatureTriple t{problem.apply(merged, ex.merged_input.resolve(pair)), ex.z_positive, ex.z_negative};
        total += layer_loss(t, config);
    }
    return total / static_cast<double>(problem.examples.size());
}

CoefficientPair layer_gradient(const LayerProblem& problem, const CoefficientPair& pair,
                               const CalibrationConfig& config) {
    const double h = config.fd_step;
    if (!(h > 0.0)) throw ConfigError("fd_step must be positive");
    auto probe = [&](double dl, double ds) {
        const double v = batch_loss(problem, {pair.lambda_long + dl, pair.lambda_short + ds}, config);
        if (!std::isfinite(v)) throw CalibrationError("non-finite loss at finite-difference probe");
        return v;
    };
    CoefficientPair g;
    g.lambda_long = (probe(h, 0.0) - probe(-h, 0.0)) / (2.0 * h);
    g.lambda_short = (probe(0.0, h) - probe(0.0, -h)) / (2.0 * h);
    return g;
}

LayerFit optimize_layer(const LayerProblem& problem, const CoefficientPair& init, const CalibrationConfig& config,
                        double learning_rate, std::size_t epochs) {
    if (problem.examples.empty()) throw CalibrationError("optimize_layer needs a non-empty example batch");
    LayerFit fit;
    fit.learning_rate = learning_rate;
    fit.epochs = epochs;
    fit.pair = init;
    const double first = batch_loss(problem, init, config);
    if (!std::isfinite(first)) throw CalibrationError("non-finite loss at the initial coefficients");
    fit.loss_trace.push_back(first);

    CoefficientPair current = init;
    for (std::size_t e = 0; e < epochs; ++e) {
        CoefficientPair next;
        double loss = std::numeric_limits<double>::quiet_NaN();
        try {
            const auto g = layer_gradient(problem, current, config);
            next = {current.lambda_long - learning_rate * g.lambda_long,
                    current.lambda_short - learning_rate * g.lambda_short};
            if (std::isfinite(next.lambda_long) && std::isfinite(next.lambda_short)) {
                loss = batch_loss(problem, next, config);
            }
        } catch (const CalibrationError& err) {
            fit.message = err.what();
        }
        if (!std::isfinite(loss)) {
            fit.diverged = true;
            if (fit.message.empty()) fit.message = "loss became non-finite at epoch " + std::to_string(e + 1);
            break;
        }
        current = next;
        fit.pair = current;
        fit.loss_trace.push_back(loss);
    }
    if (fit.final_loss() > fit.initial_loss()) {
        fit.non_decrease = true;
        if (fit.message.empty()) fit.message = "final loss exceeds initial loss";
    }
    return fit;
}

LayerReport fit_layer(const LayerProblem& problem, const CoefficientPair& init, const CalibrationConfig& config) {
    LayerReport report;
    if (!config.grid) {
        report.chosen = optimize_layer(problem, init, config, config.learning_rate, config.epochs);
        report.candidates.push_back(report.chosen);
        return report;
    }
    std::size_t best = 0;
    for (double lr : config.grid_learning_rates) {
        for (auto epochs : config.grid_epochs) {
            report.candidates.push_back(optimize_layer(problem, init, config, lr, epochs));
            const auto& c = report.candidates.back();
            if (c.final_loss() < report.candidates[best].final_loss()) best = report.candidates.size() - 1;
        }
    }
    report.chosen = report.candidates[best];
    return report;
}

Checkpoint assemble_merged(const Checkpoint& theta_long, const Checkpoint& theta_short, const ModelConfig& config,
                           const MergeCoefficients& coefficients) {
    require_conforming(theta_long, config);
    require_conforming(theta_short, config);
    if (coefficients.per_layer.size() != config.n_layers) {
        throw ConfigError("expected " + std::to_string(config.n_layers) + " coefficient pairs, got " +
                          std::to_string(coefficients.per_layer.size()));
    }
    Checkpoint out;
    for (const auto& [name, tl] : theta_long.tensors) {
        const CoefficientPair* pair = nullptr;
        if (name.rfind("blocks.", 0) == 0) {
            const auto dot_at = name.find('.', 7);
            pair = &coefficients.per_layer.at(std::stoul(name.substr(7, dot_at - 7)));
        } else if (name == names::tok_embedding || name == names::pos_embedding) {
            pair = &coefficients.embedding_group();
        } else {
            pair = &coefficients.head_group();
        }
        out.tensors.emplace(name, lerp_tensor(tl, theta_short.tensors.at(name), pair->lambda_long, pair->lambda_short));
    }
    return out;
}

std::vector<CalibrationExample> calibration_examples(const PLDataset& dataset, const PromptMap& prompts) {
    std::vector<CalibrationExample> out;
    std::vector<std::string> missing;
    for (const auto& label : dataset.labels) {
        auto it = prompts.find(label.query_id);
        if (it == prompts.end()) {
            missing.push_back(label.query_id);
            continue;
        }
        if (it->second.empty()) throw CalibrationError("prompt for " + label.query_id + " is empty");
        if (label.positive == label.negative) throw CalibrationError("label for " + label.query_id + " is degenerate");
        out.push_back({label.query_id, it->second, label.positive, label.negative});
    }
    if (!missing.empty()) {
        std::string msg = "missing prompts for " + std::to_string(missing.size()) + " PL queries:";
        for (std::size_t i = 0; i < missing.size() && i < 5; ++i) msg += " " + missing[i];
        throw CalibrationError(msg);
    }
    if (out.empty()) throw CalibrationError("no calibration examples");
    return out;
}

LayerProblem make_layer_problem(const Checkpoint& theta_long, const Checkpoint& theta_short, const ModelConfig& config,
                                const std::vector<CalibrationExample>& examples, std::size_t layer,
                                const std::vector<MergedInput>& merged_inputs,
                                const std::vector<HiddenStates>& long_states,
                                const std::vector<HiddenStates>& short_states) {
    LayerProblem p;
    p.long_params = block_params(theta_long, layer);
    p.short_params = block_params(theta_short, layer);
    p.apply = [config](const Checkpoint& params, const Tensor& input) {
        return block_forward(params, "", config, input);
    };
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        const auto& pos = ex.positive == ModelTag::long_cot ? long_states[i] : short_states[i];
        const auto& neg = ex.negative == ModelTag::long_cot ? long_states[i] : short_states[i];
        p.examples.push_back({merged_inputs[i], pos.per_layer[layer], neg.per_layer[layer]});
    }
    return p;
}

RpamResult rpam_merge(const Checkpoint& theta_long, const Checkpoint& theta_short, const ModelConfig& model_config,
                      const PLDataset& dataset, const PromptMap& prompts, const CalibrationConfig& config) {
    config.validate();
    model_config.validate();
    require_conforming(theta_long, model_config);
    require_conforming(theta_short, model_config);
    require_shape_compatible(theta_long, theta_short, "rpam_merge");
    const auto examples = calibration_examples(dataset, prompts);

    std::vector<HiddenStates> long_states, short_states;
    std::vector<MergedInput> merged_inputs;
    for (const auto& ex : examples) {
        long_states.push_back(forward_hidden(theta_long, model_config, ex.tokens));
        short_states.push_back(forward_hidden(theta_short, model_config, ex.tokens));
        MergedInput in;
        in.embedded = std::make_pair(embed(theta_long, model_config, ex.tokens),
                                     embed(theta_short, model_config, ex.tokens));
        merged_inputs.push_back(std::move(in));
    }

    RpamResult result;
    result.coefficients.per_layer.assign(model_config.n_layers, config.init_lambda);
    for (std::size_t l = 0; l < model_config.n_layers; ++l) {
        LayerProblem problem = make_layer_problem(theta_long, theta_short, model_config, examples, l, merged_inputs,
                                                  long_states, short_states);
        LayerReport report = fit_layer(problem, config.init_lambda, config);
        const CoefficientPair pair = report.chosen.pair;
        result.coefficients.per_layer[l] = pair;

        // Freeze the layer and advance the merged stream through it.
        const Checkpoint merged = merged_layer_params(problem.long_params, problem.short_params, pair);
        for (auto& in : merged_inputs) {
            MergedInput next;
            next.carried = problem.apply(merged, in.resolve(pair));
            in = std::move(next);
        }
        result.layers.push_back(std::move(report));
    }
    result.merged = assemble_merged(theta_long, theta_short, model_config, result.coefficients);
    return result;
}

std::string calibration_config_json(const CalibrationConfig& config) {
    return config_json(config).dump(2) + "\n";
}

std::string coefficient_report_json(const RpamResult& result, const CalibrationConfig& config,
                                    const std::string& pl_dataset_sha256) {
    ojson j;
    j["config"] = config_json(config);
    j["pl_dataset_sha256"] = pl_dataset_sha256;
    j["layers"] = ojson::array();
    for (std::size_t l = 0; l < result.layers.size(); ++l) {
        const auto& r = result.layers[l];
        ojson layer;
        layer["layer"] = l;
        layer.update(fit_json(r.chosen));
        layer["loss_trace"] = r.chosen.loss_trace;
        if (config.grid) {
            layer["candidates"] = ojson::array();
            for (const auto& c : r.candidates) layer["candidates"].push_back(fit_json(c));
        }
        j["layers"].push_back(layer);
    }
    return j.dump(2) + "\n";
}

}  // namespace ramerge
