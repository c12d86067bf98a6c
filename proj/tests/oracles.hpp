// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used as test oracles. They share no
// code with the library beyond the Checkpoint container and tensor names.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ramerge/labeling.hpp"
#include "ramerge/model.hpp"
#include "ramerge/random.hpp"
#include "ramerge/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const ramerge::Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    }
    return m;
}

inline std::vector<double> to_vec(const ramerge::Tensor& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < out[i].size(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
            out[i][j] = s;
        }
    }
    return out;
}

inline std::vector<double> layernorm(const std::vector<double>& x, const std::vector<double>& g,
                                     const std::vector<double>& b) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
    return out;
}

// Scalar re-implementation of the pre-norm decoder: returns the residual
// stream after every block, then the logits as the last entry.
inline std::vector<Mat> forward(const ramerge::Checkpoint& w, const ramerge::ModelConfig& cfg,
                                const std::vector<ramerge::TokenId>& tokens) {
    const std::size_t T = tokens.size(), D = cfg.d_model, H = cfg.n_heads, dh = D / H;
    auto W = [&](const std::string& n) { return to_mat(w.tensors.at(n)); };
    auto V = [&](const std::string& n) { return to_vec(w.tensors.at(n)); };
    const Mat tok = W("tok_embedding"), pos = W("pos_embedding");
    Mat x(T, std::vector<double>(D));
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < D; ++j) x[t][j] = tok[tokens[t]][j] + pos[t][j];
    }
    std::vector<Mat> out;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        Mat h(T);
        for (std::size_t t = 0; t < T; ++t) h[t] = layernorm(x[t], V(p + "ln1.weight"), V(p + "ln1.bias"));
        const Mat q = matmul(h, W(p + "attn.wq")), k = matmul(h, W(p + "attn.wk")), v = matmul(h, W(p + "attn.wv"));
        Mat att(T, std::vector<double>(D, 0.0));
        for (std::size_t hd = 0; hd < H; ++hd) {
            for (std::size_t t = 0; t < T; ++t) {
                std::vector<double> s(t + 1);
                for (std::size_t u = 0; u <= t; ++u) {
                    double d = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) d += q[t][hd * dh + c] * k[u][hd * dh + c];
                    s[u] = d / std::sqrt(static_cast<double>(dh));
                }
                const double mx = *std::max_element(s.begin(), s.end());
                double z = 0.0;
                for (double& e : s) z += (e = std::exp(e - mx));
                for (std::size_t u = 0; u <= t; ++u) {
                    for (std::size_t c = 0; c < dh; ++c) att[t][hd * dh + c] += s[u] / z * v[u][hd * dh + c];
                }
            }
        }
        const Mat o = matmul(att, W(p + "attn.wo"));
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < D; ++j) x[t][j] += o[t][j];
        }
        for (std::size_t t = 0; t < T; ++t) h[t] = layernorm(x[t], V(p + "ln2.weight"), V(p + "ln2.bias"));
        Mat a = matmul(h, W(p + "mlp.w1"));
        const auto b1 = V(p + "mlp.b1"), b2 = V(p + "mlp.b2");
        for (auto& row : a) {
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double u = row[j] + b1[j];
                row[j] = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
            }
        }
        const Mat m = matmul(a, W(p + "mlp.w2"));
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < D; ++j) x[t][j] += m[t][j] + b2[j];
        }
        out.push_back(x);
    }
    Mat n(T);
    for (std::size_t t = 0; t < T; ++t) n[t] = layernorm(x[t], V("final_norm.weight"), V("final_norm.bias"));
    out.push_back(matmul(n, W("unembedding")));
    return out;
}

struct Label {
    ramerge::ModelTag positive;
    std::string reason;
};

// Brute-force labeling: recount everything from the raw records.
inline std::map<std::string, Label> labels(const std::vector<ramerge::ResponseRecord>& records) {
    struct Acc {
        double correct = 0, tokens = 0, n = 0;
    };
    std::map<std::string, std::map<int, Acc>> acc;
    for (const auto& r : records) {
        auto& a = acc[r.query_id][r.model == ramerge::ModelTag::long_cot ? 0 : 1];
        a.correct += r.correct;
        a.tokens += static_cast<double>(r.token_count);
        a.n += 1;
    }
    std::map<std::string, Label> out;
    for (auto& [q, m] : acc) {
        // Compare integer counts so no division rounding enters the decision.
        const double lc = m[0].correct * m[1].n, sc = m[1].correct * m[0].n;
        const double lt = m[0].tokens * m[1].n, st = m[1].tokens * m[0].n;
        if (lc > sc) {
            out[q] = {ramerge::ModelTag::long_cot, "accuracy"};
        } else if (sc > lc) {
            out[q] = {ramerge::ModelTag::short_cot, "accuracy"};
        } else if (lt < st) {
            out[q] = {ramerge::ModelTag::long_cot, "tie_tokens"};
        } else if (st < lt) {
            out[q] = {ramerge::ModelTag::short_cot, "tie_tokens"};
        } else {
            out[q] = {ramerge::ModelTag::short_cot, "tie_default"};
        }
    }
    return out;
}

// Per-entry TIES reference. Entry i of a task vector survives trimming when
// fewer than k entries beat it (larger magnitude, or equal magnitude at a
// lower index).
inline std::vector<double> ties(const std::vector<double>& base, const std::vector<std::vector<double>>& tuned,
                                double density, double scale) {
    const std::size_t n = base.size();
    const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(density * n)));
    std::vector<std::vector<double>> kept;
    for (const auto& t : tuned) {
        std::vector<double> d(n), out(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) d[i] = t[i] - base[i];
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t beaten_by = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (std::fabs(d[j]) > std::fabs(d[i]) || (std::fabs(d[j]) == std::fabs(d[i]) && j < i)) ++beaten_by;
            }
            if (beaten_by < k) out[i] = d[i];
        }
        kept.push_back(out);
    }
    std::vector<double> merged(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (const auto& d : kept) sum += d[i];
        double s = 0.0;
        int c = 0;
        for (const auto& d : kept) {
            if ((sum > 0 && d[i] > 0) || (sum < 0 && d[i] < 0)) {
                s += d[i];
                ++c;
            }
        }
        merged[i] = base[i] + (c ? scale * (s / c) : 0.0);
    }
    return merged;
}

// grep -i -F style scan.
inline bool contains_ci(const std::string& text, const std::string& needle) {
    auto lower = [](unsigned char ch) { return ch < 128 ? static_cast<char>(std::tolower(ch)) : static_cast<char>(ch); };
    for (std::size_t i = 0; i + needle.size() <= text.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < needle.size() && match; ++j) match = lower(text[i + j]) == lower(needle[j]);
        if (match) return true;
    }
    return false;
}

}  // namespace oracle

namespace fixture {

inline ramerge::ModelConfig small_config(std::size_t layers = 2, std::size_t d = 8, std::size_t heads = 2,
                                         std::size_t ff = 16, std::size_t vocab = 11, std::size_t seq = 8) {
    ramerge::ModelConfig c;
    c.vocab_size = vocab;
    c.d_model = d;
    c.n_layers = layers;
    c.n_heads = heads;
    c.d_ff = ff;
    c.max_seq = seq;
    return c;
}

// Random checkpoint with non-trivial norm gains and biases.
inline ramerge::Checkpoint random_model(const ramerge::ModelConfig& cfg, std::uint64_t seed, double scale = 0.5) {
    ramerge::Rng rng(seed);
    auto ck = ramerge::random_checkpoint(cfg, rng, scale);
    for (auto& [name, t] : ck.tensors) {
        if (name.ends_with("weight")) {
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(1.0 + 0.2 * rng.normal());
        } else if (name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2")) {
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(0.1 * rng.normal());
        }
    }
    return ck;
}

inline std::vector<ramerge::TokenId> random_tokens(ramerge::Rng& rng, std::size_t n, std::size_t vocab) {
    std::vector<ramerge::TokenId> t(n);
    for (auto& v : t) v = static_cast<ramerge::TokenId>(rng.below(vocab));
    return t;
}

// Synthetic response log with `ties` engineered accuracy ties: a third of
// them also tie on mean tokens (double tie), the rest differ in length with
// either model the shorter one.
inline std::vector<ramerge::ResponseRecord> synthetic_log(std::uint64_t seed, std::size_t queries, std::size_t k,
                                                          std::size_t ties) {
    ramerge::Rng rng(seed);
    std::vector<ramerge::ResponseRecord> out;
    for (std::size_t q = 0; q < queries; ++q) {
        char id[32];
        std::snprintf(id, sizeof id, "q%04zu", q);
        const std::size_t long_correct = rng.below(k + 1);
        const std::size_t short_correct = q < ties ? long_correct : rng.below(k + 1);
        const bool double_tie = q < ties && q % 3 == 0;
        std::vector<std::uint64_t> long_tokens(k), short_tokens(k);
        for (std::size_t s = 0; s < k; ++s) {
            long_tokens[s] = 200 + rng.below(2000);
            short_tokens[s] = 20 + rng.below(400);
        }
        if (double_tie) short_tokens = long_tokens;
        if (q < ties && q % 3 == 1) std::swap(long_tokens, short_tokens);
        for (int m = 0; m < 2; ++m) {
            const std::size_t correct = m == 0 ? long_correct : short_correct;
            // Correct samples land at random indices so order carries no signal.
            std::vector<bool> flags(k, false);
            for (std::size_t s = 0; s < correct; ++s) flags[s] = true;
            for (std::size_t s = k; s > 1; --s) {
                const std::size_t j = rng.below(s);
                const bool tmp = flags[s - 1];
                flags[s - 1] = flags[j];
                flags[j] = tmp;
            }
            for (std::size_t s = 0; s < k; ++s) {
                ramerge::ResponseRecord r;
                r.query_id = id;
                r.model = m == 0 ? ramerge::ModelTag::long_cot : ramerge::ModelTag::short_cot;
                r.sample_index = s;
                r.correct = flags[s];
                r.token_count = m == 0 ? long_tokens[s] : short_tokens[s];
                out.push_back(r);
            }
        }
    }
    return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ramerge-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace fixture
