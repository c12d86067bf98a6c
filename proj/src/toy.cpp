// SPDX-License-Identifier: Apache-2.0

#include "ramerge/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>

namespace ramerge::toy {

namespace {

// Residual layout (d_model = 32).
constexpr std::size_t kTok = 0;     // one-hot token, 12 dims
constexpr std::size_t kPos = 12;    // one-hot position, 10 dims
constexpr std::size_t kConst = 22;  // constant 1
constexpr std::size_t kAns = 23;    // answer channels, one per symbol
constexpr std::size_t kBal = 31;    // keeps every row zero-mean
constexpr std::size_t kPositions = 10;

constexpr std::size_t kVocab = 12, kModel = 32, kHeads = 2, kHeadDim = 16, kFF = 32, kMaxSeq = 11;

using TargetFn = std::function<std::optional<std::size_t>(std::size_t)>;

std::optional<std::size_t> copy_target(std::size_t t) {
    if (t >= payload_length + 1 && t <= 2 * payload_length) return t - payload_length;
    return std::nullopt;
}

std::optional<std::size_t> reverse_target(std::size_t t) {
    if (t >= payload_length + 1 && t <= 2 * payload_length) return 2 * payload_length + 1 - t;
    return std::nullopt;
}

Checkpoint skeleton(const CircuitParams& p) {
    const ModelConfig cfg = toy_model_config();
    Checkpoint ck;
    for (const auto& [name, shape] : canonical_shapes(cfg)) ck.tensors.emplace(name, Tensor(shape));
    for (auto& [name, t] : ck.tensors) {
        if (name.ends_with("ln1.weight") || name.ends_with("ln2.weight") || name == names::final_norm_weight) {
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0f;
        }
    }
    const auto e = static_cast<float>(p.embed_scale);
    Tensor& tok = ck.tensors.at(names::tok_embedding);
    for (std::size_t v = 0; v < kVocab; ++v) {
        tok.at(v, kTok + v) = e;
        tok.at(v, kConst) = e;
        tok.at(v, kBal) = -2 * e;
    }
    Tensor& pos = ck.tensors.at(names::pos_embedding);
    for (std::size_t q = 0; q < kPositions; ++q) {
        pos.at(q, kPos + q) = e;
        pos.at(q, kBal) = -e;
    }
    Tensor& u = ck.tensors.at(names::unembedding);
    for (std::size_t s = 0; s < n_symbols; ++s) u.at(kAns + s, s) = 1.0f;
    u.at(kConst, stop_token) = static_cast<float>(p.stop_bias / p.embed_scale);
    return ck;
}

// Head `head` of `block` attends from answer position t to f(t) and writes the
// symbol found there into the answer channels. It is switched off (attends to
// the gate token instead) when the prompt carries `gate_token`.
void wire_head(Checkpoint& ck, std::size_t block, std::size_t head, const TargetFn& f, TokenId gate_token,
               const CircuitParams& p) {
    const std::string pre = names::block_prefix(block);
    Tensor& wq = ck.tensors.at(pre + "attn.wq");
    Tensor& wk = ck.tensors.at(pre + "attn.wk");
    Tensor& wv = ck.tensors.at(pre + "attn.wv");
    Tensor& wo = ck.tensors.at(pre + "attn.wo");
    // After layer norm a unit of embedding reads as e / sigma; queries carry
    // the sqrt(d_head) that attention divides out.
    const double sigma = p.embed_scale * std::sqrt(12.0 / 32.0);
    const double q_unit = sigma * sigma * std::sqrt(static_cast<double>(kHeadDim)) / (p.embed_scale * p.embed_scale);
    const std::size_t c0 = head * kHeadDim;
    for (std::size_t t = 0; t < kPositions; ++t) {
        if (auto target = f(t)) wq.at(kPos + t, c0 + *target) += static_cast<float>(p.match_score * q_unit);
        wk.at(kPos + t, c0 + t) = 1.0f;
    }
    wq.at(kConst, c0 + 10) = static_cast<float>(p.gate_score * q_unit);
    wk.at(kTok + gate_token, c0 + 10) = 1.0f;
    wq.at(kConst, c0 + 11) = static_cast<float>(p.sink_score * q_unit);
    wk.at(kPos, c0 + 11) = 1.0f;
    for (std::size_t s = 0; s < n_symbols; ++s) {
        wv.at(kTok + s, c0 + s) = static_cast<float>(sigma / p.embed_scale);
        wo.at(c0 + s, kAns + s) = static_cast<float>(p.value_gain);
        wo.at(c0 + s, kBal) = static_cast<float>(-p.value_gain);
    }
}

}  // namespace

std::string to_string(TaskFamily task) {
    return task == TaskFamily::copy ? "copy" : "reverse";
}

ModelConfig toy_model_config() {
    ModelConfig c;
    c.vocab_size = kVocab;
    c.d_model = kModel;
    c.n_layers = 2;
    c.n_heads = kHeads;
    c.d_ff = kFF;
    c.max_seq = kMaxSeq;
    return c;
}

SpecialistPair build_specialists(const CircuitParams& params, std::uint64_t seed) {
    if (!(params.embed_scale > 0.0)) throw ConfigError("embed_scale must be positive");
    Checkpoint base = skeleton(params);
    Rng rng(seed);
    for (auto& [name, t] : base.tensors) {
        if (name.find(".attn.w") == std::string::npos && name.find(".mlp.w") == std::string::npos) continue;
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = static_cast<float>(static_cast<double>(t[i]) + params.base_noise * rng.normal());
        }
    }
    SpecialistPair pair{base, base};
    wire_head(pair.short_model, 0, 0, copy_target, reverse_token, params);
    wire_head(pair.long_model, 1, 1, reverse_target, copy_token, params);
    return pair;
}

std::vector<TokenId> Query::prompt() const {
    std::vector<TokenId> p{task == TaskFamily::copy ? copy_token : reverse_token};
    p.insert(p.end(), payload.begin(), payload.end());
    p.push_back(sep_token);
    return p;
}

std::vector<TokenId> Query::answer() const {
    std::vector<TokenId> a = payload;
    if (task == TaskFamily::reverse) std::reverse(a.begin(), a.end());
    return a;
}

std::vector<Query> make_queries(TaskFamily task, std::size_t count, Rng& rng, const std::string& id_prefix) {
    std::vector<Query> out;
    for (std::size_t i = 0; i < count; ++i) {
        Query q;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%04zu", i);
        q.id = id_prefix + buf;
        q.task = task;
        for (std::size_t j = 0; j < payload_length; ++j) q.payload.push_back(static_cast<TokenId>(rng.below(n_symbols)));
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<TokenId> generate(const Checkpoint& weights, const ModelConfig& config, const Query& query) {
    const auto prompt = query.prompt();
    auto seq = greedy_decode(weights, config, prompt, max_new_tokens, stop_token);
    return {seq.begin() + static_cast<std::ptrdiff_t>(prompt.size()), seq.end()};
}

bool is_correct(const Query& query, const std::vector<TokenId>& generated) {
    auto expected = query.answer();
    expected.push_back(stop_token);
    return generated == expected;
}

double accuracy(const Checkpoint& weights, const ModelConfig& config, const std::vector<Query>& queries) {
    if (queries.empty()) throw ConfigError("accuracy over an empty query set");
    std::size_t ok = 0;
    for (const auto& q : queries) ok += is_correct(q, generate(weights, config, q)) ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(queries.size());
}

std::vector<GradedResponse> grade(const Checkpoint& weights, const ModelConfig& config,
                                  const std::vector<Query>& queries) {
    std::vector<GradedResponse> out;
    for (const auto& q : queries) {
        const auto g = generate(weights, config, q);
        out.push_back({to_string(q.task), is_correct(q, g), g.size(), std::nullopt});
    }
    return out;
}

Fixture make_fixture(std::uint64_t seed, const FixtureOptions& options) {
    if (options.k == 0) throw ConfigError("k must be positive");
    Fixture f;
    f.config = toy_model_config();
    f.models = build_specialists(options.circuit, seed);

    Rng rng(splitmix64(seed ^ 0x746f79ULL));
    for (TaskFamily task : {TaskFamily::copy, TaskFamily::reverse}) {
        auto q = make_queries(task, options.calibration_per_task, rng, "cal-" + to_string(task) + "-");
        f.calibration.insert(f.calibration.end(), q.begin(), q.end());
    }
    for (TaskFamily task : {TaskFamily::copy, TaskFamily::reverse}) {
        auto q = make_queries(task, options.evaluation_per_task, rng, "eval-" + to_string(task) + "-");
        f.evaluation.insert(f.evaluation.end(), q.begin(), q.end());
    }

    f.eval_long = grade(f.models.long_model, f.config, f.evaluation);
    f.eval_short = grade(f.models.short_model, f.config, f.evaluation);
    auto per_task = [](const std::vector<GradedResponse>& graded, TaskFamily task) {
        std::size_t ok = 0, n = 0;
        for (const auto& r : graded) {
            if (r.benchmark != to_string(task)) continue;
            ++n;
            ok += r.correct ? 1 : 0;
        }
        return n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0;
    };
    f.long_accuracy = {per_task(f.eval_long, TaskFamily::reverse), per_task(f.eval_long, TaskFamily::copy)};
    f.short_accuracy = {per_task(f.eval_short, TaskFamily::copy), per_task(f.eval_short, TaskFamily::reverse)};
    for (const auto& [who, acc] : {std::pair{"long", f.long_accuracy}, std::pair{"short", f.short_accuracy}}) {
        if (acc.own_task < 0.95 || acc.other_task > 0.2) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s specialist misses thresholds with seed %llu: own %.3f, other %.3f",
                          who, static_cast<unsigned long long>(seed), acc.own_task, acc.other_task);
            throw Error(buf);
        }
    }

    // Greedy decoding is deterministic, so the k samples per model coincide.
    for (const auto& q : f.calibration) {
        for (ModelTag tag : {ModelTag::long_cot, ModelTag::short_cot}) {
            const auto& w = tag == ModelTag::long_cot ? f.models.long_model : f.models.short_model;
            const auto g = generate(w, f.config, q);
            const bool ok = is_correct(q, g);
            for (std::size_t s = 0; s < options.k; ++s) f.responses.push_back({q.id, tag, s, ok, g.size()});
        }
    }
    return f;
}

}  // namespace ramerge::toy
