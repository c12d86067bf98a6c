// SPDX-License-Identifier: Apache-2.0

#include "ramerge/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ramerge/baselines.hpp"
#include "ramerge/calibration.hpp"
#include "ramerge/digest.hpp"
#include "ramerge/eval.hpp"
#include "ramerge/labeling.hpp"
#include "ramerge/recipe.hpp"
#include "ramerge/safetensors.hpp"
#include "ramerge/toy.hpp"

namespace ramerge {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string timestamp() {
    std::time_t t = std::time(nullptr);
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
        char* end = nullptr;
        const long long v = std::strtoll(epoch, &end, 10);
        if (end && *end == '\0' && end != epoch) t = static_cast<std::time_t>(v);
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

fs::path resolve_out(const std::string& out) {
    fs::path p(out);
    if (p.is_relative()) {
        if (const char* root = std::getenv(output_root_env); root && *root) return fs::path(root) / p;
    }
    return p;
}

// One command invocation: owns the output directory, records inputs and
// outputs, and finishes with manifest.json + provenance.json.
class Job {
public:
    Job(std::string command, const std::string& out, bool force)
        : command_(std::move(command)), dir_(resolve_out(out)) {
        if (fs::exists(dir_)) {
            if (!fs::is_directory(dir_)) throw Error("output path " + dir_.string() + " is not a directory");
            if (!force && !fs::is_empty(dir_)) {
                throw Error("output directory " + dir_.string() + " is not empty; pass --force to overwrite");
            }
        }
        fs::create_directories(dir_);
        manifest_["command"] = command_;
    }

    const fs::path& dir() const { return dir_; }
    ojson& manifest() { return manifest_; }

    void input(const fs::path& path) { inputs_.push_back(path); }

    void write_text(const std::string& name, const std::string& text) {
        std::ofstream os(dir_ / name, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot write " + (dir_ / name).string());
        os << text;
        if (!os) throw Error("failed writing " + (dir_ / name).string());
        outputs_.push_back(name);
    }

    void write_checkpoint(const std::string& name, const Checkpoint& ck, const std::optional<ModelConfig>& config) {
        ramerge::write_checkpoint(ck, dir_ / name);
        outputs_.push_back(name);
        if (config) {
            const auto sidecar = config_sidecar_path(dir_ / name);
            write_model_config(*config, sidecar);
            outputs_.push_back(sidecar.filename().string());
        }
    }

    void finish() {
        manifest_["outputs"] = outputs_;
        write_text("manifest.json", manifest_.dump(2) + "\n");
        ojson prov;
        prov["tool"] = "ramerge";
        prov["version"] = tool_version;
        prov["created"] = timestamp();
        prov["inputs"] = ojson::array();
        for (const auto& p : inputs_) {
            prov["inputs"].push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}});
        }
        prov["outputs"] = ojson::array();
        for (const auto& name : outputs_) {
            prov["outputs"].push_back({{"path", name}, {"sha256", sha256_file(dir_ / name)}});
        }
        std::ofstream os(dir_ / "provenance.json", std::ios::binary | std::ios::trunc);
        os << prov.dump(2) << "\n";
        if (!os) throw Error("failed writing provenance.json");
    }

private:
    std::string command_;
    fs::path dir_;
    ojson manifest_;
    std::vector<fs::path> inputs_;
    std::vector<std::string> outputs_;
};

std::optional<ModelConfig> config_for(const MergeRecipe& recipe) {
    if (recipe.model_config) return read_model_config(*recipe.model_config);
    const auto sidecar = config_sidecar_path(recipe.inputs.front().path);
    if (fs::exists(sidecar)) return read_model_config(sidecar);
    return std::nullopt;
}

struct MergeFlags {
    std::optional<std::uint64_t> seed;
    std::optional<double> density, drop_rate, scale, tau, omega, lr;
    std::optional<std::size_t> epochs;
    bool grid = false;
};

void apply_flags(MergeRecipe& r, const MergeFlags& f) {
    if (f.seed) {
        r.seed = *f.seed;
        r.calibration.seed = *f.seed;
    }
    if (f.density) r.density = f.density;
    if (f.drop_rate) r.drop_rate = f.drop_rate;
    if (f.scale) r.scale = f.scale;
    if (f.tau) r.calibration.tau = *f.tau;
    if (f.omega) r.calibration.omega = *f.omega;
    if (f.lr) r.calibration.learning_rate = *f.lr;
    if (f.epochs) r.calibration.epochs = *f.epochs;
    if (f.grid) r.calibration.grid = true;
}

void print_pairs(std::ostream& out, const RpamResult& result) {
    for (std::size_t l = 0; l < result.layers.size(); ++l) {
        const auto& fit = result.layers[l].chosen;
        char buf[200];
        std::snprintf(buf, sizeof buf, "layer %zu: lambda_long %.6f lambda_short %.6f loss %.6g -> %.6g (lr %g, %zu epochs)%s",
                      l + 1, fit.pair.lambda_long, fit.pair.lambda_short, fit.initial_loss(), fit.final_loss(),
                      fit.learning_rate, fit.epochs, fit.diverged ? " [diverged]" : fit.non_decrease ? " [no decrease]" : "");
        out << buf << "\n";
    }
}

void run_merge(const fs::path& recipe_path, const std::string& out_dir, bool force, const MergeFlags& flags,
               bool calibrate_only, std::ostream& out) {
    MergeRecipe recipe = read_recipe(recipe_path);
    apply_flags(recipe, flags);
    validate_recipe(recipe);
    if (calibrate_only && recipe.method != MergeMethod::rpam) {
        throw ValidationError({"method: calibrate needs method 'rpam', got '" + to_string(recipe.method) + "'"});
    }

    Job job(calibrate_only ? "calibrate" : "merge", out_dir, force);
    job.input(recipe_path);
    job.manifest()["seed"] = recipe.seed;
    job.manifest()["recipe"] = ojson::parse(recipe_to_json(recipe));

    std::vector<Checkpoint> checkpoints;
    for (const auto& in : recipe.inputs) {
        job.input(in.path);
        checkpoints.push_back(read_checkpoint(in.path));
    }
    const auto config = config_for(recipe);

    auto by_role = [&](const std::string& role) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < recipe.inputs.size(); ++i) {
            if (recipe.inputs[i].role == role) idx.push_back(i);
        }
        return idx;
    };

    Checkpoint merged;
    switch (recipe.method) {
        case MergeMethod::average:
            merged = average_merge(checkpoints);
            break;
        case MergeMethod::task_arithmetic:
        case MergeMethod::ties:
        case MergeMethod::dare_linear: {
            const Checkpoint& base = checkpoints[by_role("base").front()];
            std::vector<Checkpoint> tuned;
            std::vector<double> scales;
            for (auto i : by_role("tuned")) {
                tuned.push_back(checkpoints[i]);
                scales.push_back(recipe.inputs[i].scale.value_or(recipe.scale.value_or(1.0)));
            }
            if (recipe.method == MergeMethod::task_arithmetic) {
                merged = task_arithmetic_merge(base, tuned, scales);
            } else if (recipe.method == MergeMethod::ties) {
                merged = ties_merge(base, tuned, *recipe.density, *recipe.scale);
            } else {
                merged = dare_linear_merge(base, tuned, *recipe.drop_rate, scales, recipe.seed);
            }
            break;
        }
        case MergeMethod::rpam: {
            if (!config) throw ConfigError("rpam needs a model config (recipe model_config or a .config.json sidecar)");
            job.input(*recipe.pl_dataset);
            job.input(*recipe.prompts);
            const std::string pl_text = read_file(*recipe.pl_dataset);
            const PLDataset ds = pl_dataset_from_json(pl_text);
            const PromptMap prompts = read_prompt_map(*recipe.prompts);
            const RpamResult result = rpam_merge(checkpoints[by_role("long").front()],
                                                 checkpoints[by_role("short").front()], *config, ds, prompts,
                                                 recipe.calibration);
            const std::string report = coefficient_report_json(result, recipe.calibration, sha256_hex(pl_text));
            job.write_text("coefficients.json", report);
            merged = result.merged;
            merged.metadata["coefficient_report_sha256"] = sha256_hex(report);
            print_pairs(out, result);
            break;
        }
    }
    merged.metadata["method"] = to_string(recipe.method);
    job.write_checkpoint(recipe.output, merged, config);
    job.finish();
    out << "wrote " << (job.dir() / recipe.output).string() << "\n";
}

void run_label(const fs::path& log, std::size_t k, std::uint64_t seed, const std::string& out_dir, bool force,
               std::ostream& out) {
    const auto records = ingest_response_log(log);
    PLDataset ds = build_pl_dataset(records, k);
    ds.provenance.seed = seed;
    ds.provenance.sources = {"sha256:" + sha256_file(log)};
    Job job("label", out_dir, force);
    job.input(log);
    job.manifest()["seed"] = seed;
    job.manifest()["parameters"] = {{"k", k}};
    job.write_text("pl_dataset.json", pl_dataset_to_json(ds));
    job.finish();
    std::size_t long_pos = 0, ties = 0;
    for (const auto& l : ds.labels) {
        long_pos += l.positive == ModelTag::long_cot ? 1 : 0;
        ties += l.reason != LabelReason::accuracy ? 1 : 0;
    }
    out << ds.labels.size() << " labels (positive long " << long_pos << ", positive short "
        << ds.labels.size() - long_pos << ", tie-broken " << ties << ")\n";
}

void run_eval(const fs::path& log, const fs::path& reference, const std::string& out_dir, bool force,
              std::ostream& out) {
    const auto cand = evaluate_by_benchmark(read_eval_log(log));
    const auto ref = evaluate_by_benchmark(read_eval_log(reference));
    const auto report = compare(cand, ref);
    Job job("eval", out_dir, force);
    job.input(log);
    job.input(reference);
    const std::string table = comparative_report_table(report);
    job.write_text("report.json", comparative_report_json(report));
    job.write_text("report.txt", table);
    job.finish();
    out << table;
}

void run_inspect(const fs::path& path, const std::optional<std::string>& out_dir, bool force, std::ostream& out) {
    const std::string bytes = read_file(path);
    const Checkpoint ck = parse_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    // Stored dtypes come from the raw header; the parsed checkpoint is F32.
    std::uint64_t n = 0;
    for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    const json header = json::parse(bytes.substr(8, n));

    ojson j;
    j["file"] = path.filename().generic_string();
    j["sha256"] = sha256_hex(bytes);
    j["bytes"] = bytes.size();
    j["metadata"] = ck.metadata;
    j["tensors"] = ojson::array();
    std::size_t params = 0;
    for (const auto& [name, t] : ck.tensors) {
        params += t.size();
        j["tensors"].push_back({{"name", name}, {"dtype", header.at(name).at("dtype")}, {"shape", t.shape()}});
        out << name << "  " << header.at(name).at("dtype").get<std::string>() << "  " << shape_string(t.shape())
            << "\n";
    }
    j["parameters"] = params;
    const auto sidecar = config_sidecar_path(path);
    if (fs::exists(sidecar)) {
        const ModelConfig cfg = read_model_config(sidecar);
        try {
            require_conforming(ck, cfg);
            j["conforms_to_config"] = true;
        } catch (const ShapeError& e) {
            j["conforms_to_config"] = false;
            j["conformance_error"] = e.what();
        }
    }
    out << ck.tensors.size() << " tensors, " << params << " parameters, sha256 " << j["sha256"].get<std::string>()
        << "\n";
    if (out_dir) {
        Job job("inspect", *out_dir, force);
        job.input(path);
        job.write_text("inspect.json", j.dump(2) + "\n");
        job.finish();
    }
}

void run_gen_toy(std::uint64_t seed, std::size_t k, const std::string& out_dir, bool force, std::ostream& out) {
    toy::FixtureOptions opt;
    opt.k = k;
    opt.calibration_per_task = defaults::toy_calibration_per_task;
    opt.evaluation_per_task = defaults::toy_evaluation_per_task;
    const toy::Fixture f = toy::make_fixture(seed, opt);

    Job job("gen-toy", out_dir, force);
    job.manifest()["seed"] = seed;
    job.manifest()["parameters"] = {{"k", k},
                                    {"calibration_per_task", opt.calibration_per_task},
                                    {"evaluation_per_task", opt.evaluation_per_task}};

    Checkpoint long_model = f.models.long_model, short_model = f.models.short_model;
    long_model.metadata = {{"role", "long"}, {"task", "reverse"}};
    short_model.metadata = {{"role", "short"}, {"task", "copy"}};
    job.write_checkpoint("long.safetensors", long_model, f.config);
    job.write_checkpoint("short.safetensors", short_model, f.config);

    PromptMap prompts;
    for (const auto& q : f.calibration) prompts.emplace(q.id, q.prompt());
    job.write_text("prompts.json", prompt_map_to_json(prompts));

    std::string tasks;
    for (const auto* split : {&f.calibration, &f.evaluation}) {
        for (const auto& q : *split) {
            ojson e;
            e["query_id"] = q.id;
            e["split"] = split == &f.calibration ? "calibration" : "evaluation";
            e["task"] = toy::to_string(q.task);
            e["prompt"] = q.prompt();
            e["answer"] = q.answer();
            tasks += e.dump() + "\n";
        }
    }
    job.write_text("tasks.jsonl", tasks);

    std::string responses;
    for (const auto& r : f.responses) {
        ojson e;
        e["query_id"] = r.query_id;
        e["model"] = to_string(r.model);
        e["sample_index"] = r.sample_index;
        e["correct"] = r.correct;
        e["token_count"] = r.token_count;
        responses += e.dump() + "\n";
    }
    job.write_text("responses.jsonl", responses);

    auto eval_log = [](const std::vector<GradedResponse>& graded) {
        std::string s;
        for (const auto& r : graded) {
            ojson e;
            e["benchmark"] = r.benchmark;
            e["correct"] = r.correct;
            e["token_count"] = r.token_count;
            s += e.dump() + "\n";
        }
        return s;
    };
    job.write_text("eval_long.jsonl", eval_log(f.eval_long));
    job.write_text("eval_short.jsonl", eval_log(f.eval_short));

    ojson check;
    check["seed"] = seed;
    check["long"] = {{"own_task", "reverse"}, {"own", f.long_accuracy.own_task}, {"other", f.long_accuracy.other_task}};
    check["short"] = {{"own_task", "copy"}, {"own", f.short_accuracy.own_task}, {"other", f.short_accuracy.other_task}};
    check["thresholds"] = {{"own_min", 0.95}, {"other_max", 0.2}};
    job.write_text("specialists.json", check.dump(2) + "\n");

    // Recipes expect the PL dataset from `ramerge label responses.jsonl --out pl`.
    ojson rpam;
    rpam["method"] = "rpam";
    rpam["inputs"] = {{{"path", "long.safetensors"}, {"role", "long"}}, {{"path", "short.safetensors"}, {"role", "short"}}};
    rpam["parameters"] = {{"omega", 1.0}, {"tau", 0.1}, {"grid", true}, {"seed", seed}};
    rpam["pl_dataset"] = "pl/pl_dataset.json";
    rpam["prompts"] = "prompts.json";
    rpam["output"] = "merged.safetensors";
    job.write_text("recipe_rpam.json", rpam.dump(2) + "\n");
    ojson avg;
    avg["method"] = "average";
    avg["inputs"] = {{{"path", "long.safetensors"}, {"role", "model"}}, {{"path", "short.safetensors"}, {"role", "model"}}};
    avg["output"] = "merged.safetensors";
    job.write_text("recipe_average.json", avg.dump(2) + "\n");
    job.finish();

    char buf[200];
    std::snprintf(buf, sizeof buf, "long (reverse) own %.3f other %.3f; short (copy) own %.3f other %.3f\n",
                  f.long_accuracy.own_task, f.long_accuracy.other_task, f.short_accuracy.own_task,
                  f.short_accuracy.other_task);
    out << buf << "wrote fixture to " << job.dir().string() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"ramerge: merge long- and short-reasoning checkpoints"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tool_version);

    std::string out_dir;
    bool force = false;
    std::uint64_t seed = defaults::seed;
    std::size_t k = 0;
    std::string log_path, reference_path, recipe_path, checkpoint_path;
    std::optional<std::string> inspect_out;
    MergeFlags flags;

    auto* label = app.add_subcommand("label", "build a pattern-labeled dataset from a response log");
    label->add_option("log", log_path, "response log (JSONL)")->required();
    label->add_option("--k", k, "samples per query and model")->required();
    label->add_option("--out", out_dir, "output directory")->required();
    label->add_option("--seed", seed, "recorded in the dataset provenance");
    label->add_flag("--force", force, "overwrite a non-empty output directory");

    auto add_merge_options = [&](CLI::App* cmd) {
        cmd->add_option("--recipe", recipe_path, "recipe JSON")->required();
        cmd->add_option("--out", out_dir, "output directory")->required();
        cmd->add_flag("--force", force, "overwrite a non-empty output directory");
        cmd->add_option("--seed", flags.seed, "override the recipe seed");
        cmd->add_option("--tau", flags.tau, "contrastive temperature");
        cmd->add_option("--omega", flags.omega, "contrastive weight");
        cmd->add_option("--lr", flags.lr, "learning rate");
        cmd->add_option("--epochs", flags.epochs, "gradient steps per layer");
        cmd->add_flag("--grid", flags.grid, "sweep learning rates and epochs per layer");
    };
    auto* merge = app.add_subcommand("merge", "merge checkpoints as described by a recipe");
    add_merge_options(merge);
    merge->add_option("--density", flags.density, "TIES density");
    merge->add_option("--drop-rate", flags.drop_rate, "DARE drop rate");
    merge->add_option("--scale", flags.scale, "task-vector scale");

    auto* calibrate = app.add_subcommand("calibrate", "calibrate per-layer coefficients (method rpam)");
    add_merge_options(calibrate);

    auto* eval = app.add_subcommand("eval", "compare an eval log against a reference log");
    eval->add_option("log", log_path, "candidate eval log (JSONL)")->required();
    eval->add_option("--reference", reference_path, "reference eval log (JSONL)")->required();
    eval->add_option("--out", out_dir, "output directory")->required();
    eval->add_flag("--force", force, "overwrite a non-empty output directory");

    auto* inspect = app.add_subcommand("inspect", "list a checkpoint's tensors");
    inspect->add_option("checkpoint", checkpoint_path, "safetensors file")->required();
    inspect->add_option("--out", inspect_out, "also write inspect.json here");
    inspect->add_flag("--force", force, "overwrite a non-empty output directory");

    auto* gen = app.add_subcommand("gen-toy", "generate the copy/reverse specialist fixture");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "fixture seed");
    gen->add_option("--k", k, "samples per query and model in the response log");
    gen->add_flag("--force", force, "overwrite a non-empty output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*label) {
            run_label(log_path, k, seed, out_dir, force, out);
        } else if (*merge) {
            run_merge(recipe_path, out_dir, force, flags, false, out);
        } else if (*calibrate) {
            run_merge(recipe_path, out_dir, force, flags, true, out);
        } else if (*eval) {
            run_eval(log_path, reference_path, out_dir, force, out);
        } else if (*inspect) {
            run_inspect(checkpoint_path, inspect_out, force, out);
        } else if (*gen) {
            run_gen_toy(seed, k ? k : defaults::toy_k, out_dir, force, out);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace ramerge
