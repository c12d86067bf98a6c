// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "calibration_fixtures.hpp"
#include "oracles.hpp"
#include "ramerge/baselines.hpp"
#include "ramerge/calibration.hpp"
#include "ramerge/cli.hpp"
#include "ramerge/eval.hpp"
#include "ramerge/labeling.hpp"
#include "ramerge/safetensors.hpp"
#include "ramerge/toy.hpp"

using namespace ramerge;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

std::string fmt(const char* spec, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, spec, a, b, c, d);
    return buf;
}

// 1: all-(1,0) assembly reproduces the long checkpoint and its outputs.
Outcome endpoint_identity() {
    Outcome o;
    const auto t0 = Clock::now();
    const ModelConfig cfg = toy::toy_model_config();
    const auto pair = toy::build_specialists(toy::CircuitParams{}, 0);
    const MergeCoefficients ones{std::vector<CoefficientPair>(cfg.n_layers, CoefficientPair{1, 0})};
    const Checkpoint merged = assemble_merged(pair.long_model, pair.short_model, cfg, ones);
    o.require(merged.bit_equal(pair.long_model), "assembled checkpoint differs from the long model");
    Rng rng(1);
    for (int i = 0; i < 100 && o.pass; ++i) {
        const auto tokens = fixture::random_tokens(rng, 1 + rng.below(cfg.max_seq), cfg.vocab_size);
        const auto hm = forward_hidden(merged, cfg, tokens), hl = forward_hidden(pair.long_model, cfg, tokens);
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            o.require(hm.per_layer[l].bit_equal(hl.per_layer[l]), "hidden states differ on prompt " + std::to_string(i));
        }
        o.require(logits(merged, cfg, tokens).bit_equal(logits(pair.long_model, cfg, tokens)),
                  "logits differ on prompt " + std::to_string(i));
    }
    const double secs = seconds_since(t0);
    o.require(secs < 5.0, fmt("runtime %.2fs >= 5s", secs));
    if (o.pass) o.detail = fmt("100 prompts bit-identical, d_model=32, %.2fs", secs);
    return o;
}

// 2: omega = 0 reduces the layer loss to the alignment term exactly.
Outcome omega_zero_reduction() {
    Outcome o;
    Rng rng(2);
    CalibrationConfig c;
    c.omega = 0.0;
    for (int i = 0; i < 1000 && o.pass; ++i) {
        const std::size_t n = 1 + rng.below(8), d = 1 + rng.below(16);
        const double scale = std::exp(4.0 * rng.normal());
        LayerFeatureTriple t{fixture::random_matrix(rng, n, d, scale), fixture::random_matrix(rng, n, d, scale),
                             fixture::random_matrix(rng, n, d, scale)};
        const double a = layer_loss(t, c), b = alignment_loss(t.z_merged, t.z_positive);
        o.require(std::memcmp(&a, &b, sizeof a) == 0, "mismatch on triple " + std::to_string(i));
    }
    if (o.pass) o.detail = "1000 random triples bit-identical";
    return o;
}

// 3: coinciding pooled positive/negative features give ln 2.
Outcome contrastive_identity() {
    Outcome o;
    Rng rng(3);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t n = 1 + rng.below(6), d = 2 + rng.below(15);
        const Tensor m = fixture::random_matrix(rng, n, d, 1.0 + 10.0 * rng.uniform());
        const Tensor p = fixture::random_matrix(rng, n, d, 1.0);
        // Same pooled direction: reversed rows scaled by a power of two, exact in float.
        Tensor q({n, d});
        const double k = std::ldexp(1.0, static_cast<int>(rng.below(7)) - 3);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < d; ++j) q.at(r, j) = static_cast<float>(k * p.at(n - 1 - r, j));
        }
        for (double tau : {0.05, 0.1, 1.0}) {
            for (const Tensor* neg : {&p, static_cast<const Tensor*>(&q)}) worst = std::max(worst, std::fabs(contrastive_loss(m, p, *neg, tau) - std::log(2.0)));
        }
    }
    o.require(worst <= 1e-9, fmt("max deviation %.3e > 1e-9", worst));
    if (o.pass) o.detail = fmt("3000 evaluations, max |loss - ln 2| = %.2e", worst);
    return o;
}

// 4: finite differences against the closed-form linear-layer gradient.
Outcome gradient_correctness() {
    Outcome o;
    double worst = 0.0;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        const auto f = fixture::linear_layer(seed, 8, 4, 6, 0.3);
        Rng rng(seed);
        for (int k = 0; k < 4; ++k) {
            const CoefficientPair p{-0.5 + 2.0 * rng.uniform(), -0.5 + 2.0 * rng.uniform()};
            const auto [al, as] = fixture::linear_alignment_gradient(f, p.lambda_long, p.lambda_short);
            for (double h : {1e-2, 1e-3, 1e-4}) {
                CalibrationConfig c;
                c.omega = 0.0;
                c.fd_step = h;
                const auto g = layer_gradient(f.problem, p, c);
                worst = std::max({worst, std::fabs(g.lambda_long - al) / std::fabs(al),
                                  std::fabs(g.lambda_short - as) / std::fabs(as)});
            }
        }
    }
    o.require(worst <= 1e-3, fmt("max relative error %.3e > 1e-3", worst));
    if (o.pass) o.detail = fmt("5 fixtures x 4 points x 3 steps, max relative error %.2e", worst);
    return o;
}

// 5: per-layer descent against the exhaustive grid oracle, all labels long, omega = 0.
Outcome optimizer_convergence() {
    Outcome o;
    const auto t0 = Clock::now();
    double worst_loss = 0.0, worst_coef = 0.0;
    for (std::uint64_t seed : {0, 1, 2}) {
        const auto s = fixture::all_long_setup(seed);
        CalibrationConfig c;
        c.omega = 0.0;
        c.grid = true;
        const auto r = rpam_merge(s.theta_long, s.theta_short, s.config, s.dataset, s.prompts, c);
        const auto problems =
            fixture::replay_layer_problems(s.theta_long, s.theta_short, s.config, s.dataset, s.prompts, r.coefficients);
        for (std::size_t l = 0; l < problems.size(); ++l) {
            const auto oracle = fixture::grid_oracle(problems[l], c);
            const auto& got = r.coefficients.per_layer[l];
            const double dl = std::fabs(r.layers[l].chosen.final_loss() - oracle.min_loss);
            const double dc = std::max(std::fabs(got.lambda_long - oracle.argmin.lambda_long),
                                       std::fabs(got.lambda_short - oracle.argmin.lambda_short));
            worst_loss = std::max(worst_loss, dl);
            worst_coef = std::max(worst_coef, dc);
        }
    }
    const double secs = seconds_since(t0);
    o.require(worst_loss <= 1e-6, fmt("loss gap %.3e > 1e-6", worst_loss));
    o.require(worst_coef <= 0.05, fmt("coefficient gap %.3f > 0.05", worst_coef));
    o.require(secs < 120.0, fmt("runtime %.1fs >= 120s", secs));
    if (o.pass) o.detail = fmt("3 seeds x 2 layers, loss gap %.2e, coef gap %.4f, %.1fs", worst_loss, worst_coef, secs);
    return o;
}

// 6: 128 queries, k = 12, against the brute-force labeler.
Outcome labeling_oracle() {
    Outcome o;
    const auto records = fixture::synthetic_log(6, 128, 12, 15);
    const PLDataset ds = build_pl_dataset(records, 12);
    const auto ref = oracle::labels(records);
    std::size_t ties = 0;
    for (const auto& [q, l] : ref) ties += l.reason != "accuracy";
    o.require(ds.labels.size() == 128, "expected 128 labels");
    o.require(ties >= 10, "fewer than 10 tie cases");
    for (const auto& l : ds.labels) {
        const auto& r = ref.at(l.query_id);
        o.require(l.positive == r.positive && to_string(l.reason) == r.reason, "label mismatch at " + l.query_id);
    }
    if (o.pass) o.detail = "128 labels match, " + std::to_string(ties) + " tie cases";
    return o;
}

// 7: Monte Carlo mean of the DARE transform over 1e5 seeds.
Outcome dare_unbiased() {
    Outcome o;
    Rng rng(7);
    TaskVector tv;
    Tensor d({10});
    for (std::size_t i = 0; i < 10; ++i) d[i] = static_cast<float>(rng.normal());
    tv.deltas.emplace("w", d);
    const int trials = 100000;
    std::string worst_where;
    double worst = 0.0;
    for (double p : {0.3, 0.5, 0.9}) {
        std::vector<double> sum(10, 0.0);
        const double rescale = 1.0 / (1.0 - p);
        for (int s = 0; s < trials; ++s) {
            for (std::size_t i = 0; i < 10; ++i) {
                if (dare_keeps(static_cast<std::uint64_t>(s), "w", i, p)) sum[i] += d[i] * rescale;
            }
        }
        // Spot-check that the mask predicate is what dare_transform applies.
        const auto one = dare_transform(tv, p, 12345).deltas.at("w");
        for (std::size_t i = 0; i < 10; ++i) {
            const float expect = dare_keeps(12345, "w", i, p) ? static_cast<float>(d[i] * rescale) : 0.0f;
            o.require(one[i] == expect, "dare_transform disagrees with dare_keeps");
        }
        for (std::size_t i = 0; i < 10; ++i) {
            const double rel = std::fabs(sum[i] / trials - d[i]) / std::fabs(d[i]);
            if (rel > worst) {
                worst = rel;
                worst_where = fmt("drop %.1f entry %.0f", p, static_cast<double>(i));
            }
        }
    }
    o.require(worst <= 0.02, fmt("max relative error %.4f > 0.02 at ", worst) + worst_where);
    if (o.pass) o.detail = fmt("3 drop rates x 10 entries, max relative error %.4f", worst) + " (" + worst_where + ")";
    return o;
}

// 8: TIES against the per-entry reference on 1000 random three-model fixtures.
Outcome ties_oracle() {
    Outcome o;
    Rng rng(8);
    std::size_t checked = 0;
    for (int trial = 0; trial < 1000 && o.pass; ++trial) {
        const std::size_t n = 1 + rng.below(20);
        std::vector<double> base(n);
        std::vector<std::vector<double>> tuned(3, std::vector<double>(n));
        Tensor tb({n});
        for (std::size_t i = 0; i < n; ++i) base[i] = tb[i] = static_cast<float>(rng.normal());
        Checkpoint cb;
        cb.tensors.emplace("w", tb);
        std::vector<Checkpoint> ct(3);
        for (std::size_t m = 0; m < 3; ++m) {
            Tensor t({n});
            for (std::size_t i = 0; i < n; ++i) {
                // Some exact ties in magnitude and some untouched entries.
                const auto kind = rng.below(10);
                const double v = kind == 0 ? base[i] : kind == 1 ? base[i] + 0.5 : base[i] + rng.normal();
                tuned[m][i] = t[i] = static_cast<float>(v);
            }
            ct[m].tensors.emplace("w", t);
        }
        for (double density : {0.2, 0.5, 1.0}) {
            const double scale = 0.3 + rng.uniform();
            const auto ref = oracle::ties(base, tuned, density, scale);
            const auto got = ties_merge(cb, ct, density, scale).get("w");
            for (std::size_t i = 0; i < n; ++i) {
                o.require(got[i] == static_cast<float>(ref[i]), "mismatch on fixture " + std::to_string(trial));
                ++checked;
            }
        }
    }
    if (o.pass) o.detail = std::to_string(checked) + " entries identical";
    return o;
}

// 9: calibrated merge against the average merge on the copy/reverse fixture.
Outcome end_to_end() {
    Outcome o;
    const auto t0 = Clock::now();
    std::string summary;
    for (std::uint64_t seed : {0, 1, 2}) {
        const toy::Fixture fx = toy::make_fixture(seed, toy::FixtureOptions{});
        const PLDataset ds = build_pl_dataset(fx.responses, toy::FixtureOptions{}.k);
        PromptMap prompts;
        for (const auto& q : fx.calibration) prompts[q.id] = q.prompt();
        CalibrationConfig c;
        c.omega = 1.0;
        c.tau = 0.1;
        c.grid = true;
        const auto r = rpam_merge(fx.models.long_model, fx.models.short_model, fx.config, ds, prompts, c);
        const Checkpoint avg = average_merge({fx.models.long_model, fx.models.short_model});
        const double acc_rpam = toy::accuracy(r.merged, fx.config, fx.evaluation);
        const double acc_avg = toy::accuracy(avg, fx.config, fx.evaluation);

        std::size_t aligned = 0;
        for (const auto& q : fx.calibration) {
            const auto* label = ds.find(q.id);
            const Checkpoint& pos = label->positive == ModelTag::long_cot ? fx.models.long_model : fx.models.short_model;
            aligned += toy::generate(r.merged, fx.config, q) == toy::generate(pos, fx.config, q);
        }
        const double alignment = static_cast<double>(aligned) / static_cast<double>(fx.calibration.size());
        o.require(acc_rpam - acc_avg >= 0.05,
                  fmt("seed %.0f: rpam %.3f vs average %.3f", static_cast<double>(seed), acc_rpam, acc_avg));
        o.require(alignment >= 0.70, fmt("seed %.0f: alignment %.3f < 0.70", static_cast<double>(seed), alignment));
        summary += fmt("seed %.0f: rpam %.2f avg %.2f align %.2f; ", static_cast<double>(seed), acc_rpam, acc_avg,
                       alignment);
    }
    const double secs = seconds_since(t0);
    o.require(secs < 600.0, fmt("runtime %.1fs >= 600s", secs));
    if (o.pass) o.detail = summary + fmt("%.1fs", secs);
    return o;
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        out[fs::relative(e.path(), dir).string()] = ss.str();
    }
    return out;
}

int cli(std::vector<std::string> args, std::string* err = nullptr) {
    args.insert(args.begin(), "ramerge");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, e;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, e);
    if (err) *err = e.str();
    return code;
}

// 10: safetensors round trips and byte-identical CLI reruns.
Outcome format_round_trips() {
    Outcome o;
    Rng rng(10);
    for (int trial = 0; trial < 1000 && o.pass; ++trial) {
        Checkpoint ck;
        const std::size_t n = rng.below(6);
        for (std::size_t i = 0; i < n; ++i) {
            Shape shape;
            for (std::size_t r = 0, rank = rng.below(4); r < rank; ++r) shape.push_back(rng.below(5));
            Tensor t(shape);
            for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<float>(rng.normal() * 100.0);
            ck.tensors.emplace("t." + std::to_string(i), std::move(t));
        }
        ck.metadata["trial"] = std::to_string(trial);
        const auto bytes = serialize_checkpoint(ck);
        const Checkpoint back = parse_checkpoint(bytes);
        o.require(back.bit_equal(ck) && back.metadata == ck.metadata, "round trip differs on trial " + std::to_string(trial));
        o.require(serialize_checkpoint(back) == bytes, "re-serialization differs on trial " + std::to_string(trial));
    }

    setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
    const fs::path root = fs::temp_directory_path() / "ramerge-acceptance-cli";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path toy = root / "toy";
    std::string err;
    o.require(cli({"gen-toy", "--out", toy.string(), "--seed", "0"}, &err) == 0, "gen-toy failed: " + err);
    o.require(cli({"label", (toy / "responses.jsonl").string(), "--k", "4", "--out", (toy / "pl").string()}, &err) == 0,
              "label failed: " + err);
    if (!o.pass) return o;
    auto quick = nlohmann::json::parse(std::ifstream(toy / "recipe_rpam.json"));
    quick["parameters"]["grid"] = false;
    quick["parameters"]["epochs"] = 5;
    std::ofstream(toy / "recipe_quick.json") << quick.dump(2);
    auto baseline = [&](const std::string& method, const nlohmann::json& params) {
        nlohmann::json j{{"method", method},
                         {"inputs",
                          {{{"path", "short.safetensors"}, {"role", "base"}}, {{"path", "long.safetensors"}, {"role", "tuned"}}}},
                         {"parameters", params},
                         {"seed", 3}};
        const fs::path p = toy / ("recipe_" + method + ".json");
        std::ofstream(p) << j.dump(2);
        return p.string();
    };
    const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
        {"gen-toy", {"gen-toy", "--seed", "0"}},
        {"label", {"label", (toy / "responses.jsonl").string(), "--k", "4", "--seed", "0"}},
        {"merge-average", {"merge", "--recipe", (toy / "recipe_average.json").string()}},
        {"merge-ta", {"merge", "--recipe", baseline("task_arithmetic", {{"scale", 0.5}})}},
        {"merge-ties", {"merge", "--recipe", baseline("ties", {{"density", 0.2}, {"scale", 0.5}})}},
        {"merge-dare", {"merge", "--recipe", baseline("dare_linear", {{"drop_rate", 0.5}, {"scale", 0.5}}), "--seed", "9"}},
        {"merge-rpam", {"merge", "--recipe", (toy / "recipe_quick.json").string()}},
        {"calibrate", {"calibrate", "--recipe", (toy / "recipe_quick.json").string()}},
        {"eval", {"eval", (toy / "eval_short.jsonl").string(), "--reference", (toy / "eval_long.jsonl").string()}},
        {"inspect", {"inspect", (toy / "long.safetensors").string()}},
    };
    std::size_t files = 0;
    for (const auto& [name, base_args] : commands) {
        auto args = base_args;
        args.insert(args.end(), {"--out", (root / name).string(), "--force"});
        o.require(cli(args, &err) == 0, name + " failed: " + err);
        if (!o.pass) break;
        const auto first = dir_bytes(root / name);
        o.require(cli(args, &err) == 0, name + " rerun failed: " + err);
        o.require(first == dir_bytes(root / name), name + " rerun produced different bytes");
        files += first.size();
    }
    if (o.pass) {
        o.detail = "1000 checkpoints bit-identical; " + std::to_string(commands.size()) + " commands rerun identically (" +
                   std::to_string(files) + " files)";
    }
    return o;
}

// 11: relative change of the mean length, 11566 -> 5976.
Outcome metric_arithmetic() {
    Outcome o;
    EvalResult ref, cand;
    ref.benchmark = cand.benchmark = "avg";
    ref.mean_tokens = 11566;
    cand.mean_tokens = 5976;
    ref.accuracy = cand.accuracy = 1.0;
    const auto r = compare({cand}, {ref});
    o.require(r.length_change_pct.has_value(), "no length change reported");
    if (!o.pass) return o;
    const double pct = *r.length_change_pct;
    o.require(std::fabs(pct - (-48.33)) <= 0.01, fmt("got %.4f%%, expected -48.33%%", pct));
    if (o.pass) o.detail = fmt("length change %.4f%% (reduction 48.33%% within 0.01 pp)", pct);
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"endpoint identity", endpoint_identity},
        {"omega=0 reduction", omega_zero_reduction},
        {"contrastive identity", contrastive_identity},
        {"gradient correctness", gradient_correctness},
        {"optimizer convergence", optimizer_convergence},
        {"labeling oracle equivalence", labeling_oracle},
        {"DARE unbiasedness", dare_unbiased},
        {"TIES oracle equivalence", ties_oracle},
        {"end-to-end adaptive merge", end_to_end},
        {"format round-trips", format_round_trips},
        {"metric arithmetic", metric_arithmetic},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed ? 1 : 0;
}
