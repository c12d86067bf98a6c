// SPDX-License-Identifier: Apache-2.0

#include "ramerge/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace ramerge {

namespace {

constexpr double kNormEps = 1e-5;

void layer_norm_rows(Tensor& x, const Tensor& gain, const Tensor& bias) {
    const std::size_t d = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        double mean = 0.0;
        for (float v : row) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (float v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        for (std::size_t j = 0; j < d; ++j) {
            row[j] = static_cast<float>((row[j] - mean) * inv * gain[j] + bias[j]);
        }
    }
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    Tensor out = x;
    layer_norm_rows(out, gain, bias);
    return out;
}

double gelu(double v) {
    return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
}

// Causal multi-head attention over already projected q, k, v ([seq, d_model] each).
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads) {
    const std::size_t seq = q.rows(), d = q.cols(), dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out({seq, d});
    std::vector<double> w(seq);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t t = 0; t < seq; ++t) {
            double max_score = -std::numeric_limits<double>::infinity();
            for (std::size_t p = 0; p <= t; ++p) {
                double s = 0.0;
                for (std::size_t j = 0; j < dh; ++j) {
                    s += static_cast<double>(q.at(t, c0 + j)) * k.at(p, c0 + j);
                }
                w[p] = s * scale;
                max_score = std::max(max_score, w[p]);
            }
            double total = 0.0;
            for (std::size_t p = 0; p <= t; ++p) {
                w[p] = std::exp(w[p] - max_score);
                total += w[p];
            }
            for (std::size_t j = 0; j < dh; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p <= t; ++p) {
                    acc += w[p] * v.at(p, c0 + j);
                }
                out.at(t, c0 + j) = static_cast<float>(acc / total);
            }
        }
    }
    return out;
}

void add_in_place(Tensor& x, const Tensor& delta) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = static_cast<float>(static_cast<double>(x[i]) + delta[i]);
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq == 0) {
        throw ConfigError("model config: every dimension must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("model config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
}

std::string model_config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["vocab_size"] = c.vocab_size;
    j["d_model"] = c.d_model;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["d_ff"] = c.d_ff;
    j["max_seq"] = c.max_seq;
    return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    ModelConfig c;
    auto field = [&](const char* key) -> std::size_t {
        if (!j.contains(key) || !j[key].is_number_unsigned()) {
            throw ConfigError(std::string("model config: missing or non-integer field '") + key + "'");
        }
        return j[key].get<std::size_t>();
    };
    c.vocab_size = field("vocab_size");
    c.d_model = field("d_model");
    c.n_layers = field("n_layers");
    c.n_heads = field("n_heads");
    c.d_ff = field("d_ff");
    c.max_seq = field("max_seq");
    c.validate();
    return c;
}

ModelConfig read_model_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return model_config_from_json(ss.str());
}

void write_model_config(const ModelConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write model config " + path.string());
    out << model_config_to_json(config);
}

std::filesystem::path config_sidecar_path(const std::filesystem::path& checkpoint_path) {
    auto p = checkpoint_path;
    p.replace_extension(".config.json");
    return p;
}

std::string names::block_prefix(std::size_t block) {
    return "blocks." + std::to_string(block) + ".";
}

std::map<std::string, Shape> block_shapes(const ModelConfig& c) {
    const std::size_t d = c.d_model;
    return {
        {"ln1.weight", {d}},  {"ln1.bias", {d}},         {"attn.wq", {d, d}},       {"attn.wk", {d, d}},
        {"attn.wv", {d, d}},  {"attn.wo", {d, d}},       {"ln2.weight", {d}},       {"ln2.bias", {d}},
        {"mlp.w1", {d, c.d_ff}}, {"mlp.b1", {c.d_ff}}, {"mlp.w2", {c.d_ff, d}}, {"mlp.b2", {d}},
    };
}

std::map<std::string, Shape> canonical_shapes(const ModelConfig& c) {
    std::map<std::string, Shape> shapes{
        {names::tok_embedding, {c.vocab_size, c.d_model}},
        {names::pos_embedding, {c.max_seq, c.d_model}},
        {names::final_norm_weight, {c.d_model}},
        {names::final_norm_bias, {c.d_model}},
        {names::unembedding, {c.d_model, c.vocab_size}},
    };
    const auto per_block = block_shapes(c);
    for (std::size_t b = 0; b < c.n_layers; ++b) {
        for (const auto& [name, shape] : per_block) {
            shapes.emplace(names::block_prefix(b) + name, shape);
        }
    }
    return shapes;
}

void require_conforming(const Checkpoint& weights, const ModelConfig& config) {
    config.validate();
    const auto expected = canonical_shapes(config);
    for (const auto& [name, shape] : expected) {
        auto it = weights.tensors.find(name);
        if (it == weights.tensors.end()) {
            throw ShapeError("checkpoint does not conform: missing tensor '" + name + "'");
        }
        if (it->second.shape() != shape) {
            throw ShapeError("checkpoint does not conform: tensor '" + name + "' has shape " +
                             shape_string(it->second.shape()) + ", expected " + shape_string(shape));
        }
    }
    for (const auto& [name, t] : weights.tensors) {
        if (!expected.count(name)) {
            throw ShapeError("checkpoint does not conform: unexpected tensor '" + name + "'");
        }
    }
}

Checkpoint block_params(const Checkpoint& weights, std::size_t block) {
    const std::string prefix = names::block_prefix(block);
    Checkpoint out;
    for (auto it = weights.tensors.lower_bound(prefix); it != weights.tensors.end(); ++it) {
        if (it->first.compare(0, prefix.size(), prefix) != 0) break;
        out.tensors.emplace(it->first.substr(prefix.size()), it->second);
    }
    if (out.tensors.empty()) {
        throw ShapeError("checkpoint has no tensors for block " + std::to_string(block));
    }
    return out;
}

Checkpoint random_checkpoint(const ModelConfig& config, Rng& rng, double scale) {
    config.validate();
    Checkpoint ck;
    for (const auto& [name, shape] : canonical_shapes(config)) {
        Tensor t(shape);
        const bool gain = name.ends_with("ln1.weight") || name.ends_with("ln2.weight") ||
                          name == names::final_norm_weight;
        const bool bias = name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2");
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (gain) {
                t[i] = 1.0f;
            } else if (!bias) {
                t[i] = static_cast<float>(scale * rng.normal());
            }
        }
        ck.tensors.emplace(name, std::move(t));
    }
    return ck;
}

void require_valid_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
    if (tokens.empty()) throw ConfigError("token sequence is empty");
    if (tokens.size() > config.max_seq) {
        throw ConfigError("token sequence of length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                          std::to_string(config.max_seq));
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= config.vocab_size) {
            throw ConfigError("token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                              " is out of range for vocab_size " + std::to_string(config.vocab_size));
        }
    }
}

Tensor embed(const Checkpoint& weights, const ModelConfig& config, std::span<const TokenId> tokens) {
    require_valid_tokens(config, tokens);
    const Tensor& tok = weights.get(names::tok_embedding);
    const Tensor& pos = weights.get(names::pos_embedding);
    const std::size_t d = config.d_model;
    Tensor x({tokens.size(), d});
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            x.at(t, j) = static_cast<float>(static_cast<double>(tok.at(tokens[t], j)) + pos.at(t, j));
        }
    }
    return x;
}

Tensor block_forward(const Checkpoint& weights, const std::string& prefix, const ModelConfig& config,
                     const Tensor& x) {
    auto w = [&](const char* name) -> const Tensor& { return weights.get(prefix + name); };
    if (x.rank() != 2 || x.cols() != config.d_model) {
        throw ShapeError("block input has shape " + shape_string(x.shape()) + ", expected [seq, " +
                         std::to_string(config.d_model) + "]");
    }

    Tensor h = layer_norm(x, w("ln1.weight"), w("ln1.bias"));
    const Tensor attn = causal_attention(matmul(h, w("attn.wq")), matmul(h, w("attn.wk")),
                                         matmul(h, w("attn.wv")), config.n_heads);
    Tensor out = x;
    add_in_place(out, matmul(attn, w("attn.wo")));

    h = layer_norm(out, w("ln2.weight"), w("ln2.bias"));
    Tensor hidden = matmul(h, w("mlp.w1"));
    const Tensor& b1 = w("mlp.b1");
    for (std::size_t r = 0; r < hidden.rows(); ++r) {
        auto row = hidden.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] = static_cast<float>(gelu(static_cast<double>(row[j]) + b1[j]));
        }
    }
    Tensor mlp = matmul(hidden, w("mlp.w2"));
    const Tensor& b2 = w("mlp.b2");
    for (std::size_t r = 0; r < mlp.rows(); ++r) {
        auto row = mlp.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] = static_cast<float>(static_cast<double>(row[j]) + b2[j]);
        }
    }
    add_in_place(out, mlp);
    return out;
}

HiddenStates forward_hidden(const Checkpoint& weights, const ModelConfig& config, std::span<const TokenId> tokens) {
    require_conforming(weights, config);
    HiddenStates hs;
    Tensor x = embed(weights, config, tokens);
    for (std::size_t b = 0; b < config.n_layers; ++b) {
        x = block_forward(weights, names::block_prefix(b), config, x);
        hs.per_layer.push_back(x);
    }
    return hs;
}

Tensor logits_from_hidden(const Checkpoint& weights, const ModelConfig& config, const Tensor& hidden) {
    (void)config;
    const Tensor normed = layer_norm(hidden, weights.get(names::final_norm_weight), weights.get(names::final_norm_bias));
    return matmul(normed, weights.get(names::unembedding));
}

Tensor logits(const Checkpoint& weights, const ModelConfig& config, std::span<const TokenId> tokens) {
    const HiddenStates hs = forward_hidden(weights, config, tokens);
    return logits_from_hidden(weights, config, hs.per_layer.back());
}

TokenId argmax(std::span<const float> row) {
    TokenId best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) best = static_cast<TokenId>(i);
    }
    return best;
}

std::vector<TokenId> greedy_decode(const Checkpoint& weights, const ModelConfig& config,
                                   std::span<const TokenId> prompt, std::size_t max_new, TokenId stop_id) {
    require_valid_tokens(config, prompt);
    if (prompt.size() + max_new > config.max_seq) {
        throw ConfigError("prompt length " + std::to_string(prompt.size()) + " plus max_new " +
                          std::to_string(max_new) + " exceeds max_seq " + std::to_string(config.max_seq));
    }
    std::vector<TokenId> seq(prompt.begin(), prompt.end());
    for (std::size_t step = 0; step < max_new; ++step) {
        const Tensor lg = logits(weights, config, seq);
        const TokenId next = argmax(lg.row(lg.rows() - 1));
        seq.push_back(next);
        if (next == stop_id) break;
    }
    return seq;
}

}  // namespace ramerge
