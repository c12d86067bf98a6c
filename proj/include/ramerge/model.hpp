// SPDX-License-Identifier: Apache-2.0
//
// Minimal pre-norm decoder-only transformer used for calibration features and
// end-to-end tests.
//
// Canonical tensor names (x @ W convention, so weights are [in, out]):
//
//   tok_embedding                 [vocab, d_model]
//   pos_embedding                 [max_seq, d_model]
//   blocks.<i>.ln1.weight/.bias   [d_model]
//   blocks.<i>.attn.wq/wk/wv/wo   [d_model, d_model]
//   blocks.<i>.ln2.weight/.bias   [d_model]
//   blocks.<i>.mlp.w1             [d_model, d_ff]
//   blocks.<i>.mlp.b1             [d_ff]
//   blocks.<i>.mlp.w2             [d_ff, d_model]
//   blocks.<i>.mlp.b2             [d_model]
//   final_norm.weight/.bias       [d_model]
//   unembedding                   [d_model, vocab]
//
// Block i (0-based) is layer i+1 of the calibration loop.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ramerge/random.hpp"
#include "ramerge/tensor.hpp"

namespace ramerge {

using TokenId = std::uint32_t;

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 0;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t d_ff = 0;
    std::size_t max_seq = 0;

    std::size_t head_dim() const { return d_model / n_heads; }
    void validate() const;  // throws ConfigError

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);
ModelConfig read_model_config(const std::filesystem::path& path);
void write_model_config(const ModelConfig& config, const std::filesystem::path& path);

// "dir/name.safetensors" -> "dir/name.config.json"
std::filesystem::path config_sidecar_path(const std::filesystem::path& checkpoint_path);

namespace names {
inline constexpr const char* tok_embedding = "tok_embedding";
inline constexpr const char* pos_embedding = "pos_embedding";
inline constexpr const char* final_norm_weight = "final_norm.weight";
inline constexpr const char* final_norm_bias = "final_norm.bias";
inline constexpr const char* unembedding = "unembedding";
std::string block_prefix(std::size_t block);  // "blocks.<i>."
}  // namespace names

// Block-relative names ("ln1.weight", "attn.wq", ...) and their shapes.
std::map<std::string, Shape> block_shapes(const ModelConfig& config);
std::map<std::string, Shape> canonical_shapes(const ModelConfig& config);

// Throws ShapeError naming the first missing, extra or mis-shaped tensor.
void require_conforming(const Checkpoint& weights, const ModelConfig& config);

// Block tensors of `block` with the "blocks.<i>." prefix stripped.
Checkpoint block_params(const Checkpoint& weights, std::size_t block);

// Gaussian weights (stddev `scale`), unit norm gains, zero biases.
Checkpoint random_checkpoint(const ModelConfig& config, Rng& rng, double scale);

struct HiddenStates {
    std::vector<Tensor> per_layer;  // each [seq, d_model], residual stream after block i
};

void require_valid_tokens(const ModelConfig& config, std::span<const TokenId> tokens);

// Token plus learned position embedding, [seq, d_model].
Tensor embed(const Checkpoint& weights, const ModelConfig& config, std::span<const TokenId> tokens);

// One pre-norm block. `prefix` selects the block inside `weights` ("" for block_params output).
Tensor block_forward(const Checkpoint& weights, const std::string& prefix, const ModelConfig& config,
                     const Tensor& x);

HiddenStates forward_hidden(const Checkpoint& weights, const ModelConfig& config, std::span<const TokenId> tokens);

// Final norm + unembedding applied row-wise to a [seq, d_model] residual stream.
Tensor logits_from_hidden(const Checkpoint& weights, const ModelConfig& config, const Tensor& hidden);

Tensor logits(const Checkpoint& weights, const ModelConfig& config, std::span<const TokenId> tokens);

// Lowest index wins ties.
TokenId argmax(std::span<const float> row);

// Appends argmax tokens until stop_id is emitted (it is kept) or max_new tokens were added.
std::vector<TokenId> greedy_decode(const Checkpoint& weights, const ModelConfig& config,
                                   std::span<const TokenId> prompt, std::size_t max_new, TokenId stop_id);

}  // namespace ramerge
