// SPDX-License-Identifier: Apache-2.0
//
// hcnqa: command-line entry point for label generation, synthetic data,
// training, evaluation, perturbation probes, ablations, gradient checks and
// FLOPs accounting.
//
// Exit codes: 0 success, 1 invalid input or flags, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "hcn/eval.hpp"
#include "hcn/grad_suite.hpp"
#include "hcn/labelgen.hpp"
#include "hcn/model.hpp"
#include "hcn/synth.hpp"
#include "hcn/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw hcn::ValidationError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw hcn::ParseError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

ojson manifest(const std::string& command, std::uint64_t seed, const ojson& config,
               const ojson& inputs, const std::vector<std::string>& outputs) {
    ojson m;
    m["tool"] = "hcnqa";
    m["version"] = kVersion;
    m["command"] = command;
    m["seed"] = seed;
    m["config_hash"] = hex64(hcn::fnv1a(config.dump()));
    m["config"] = config;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    return m;
}

hcn::TrainConfig load_train_config(const std::optional<std::string>& path) {
    if (!path) return {};
    return hcn::train_config_from_json(read_json_file(*path));
}

// --- subcommand bodies -------------------------------------------------------

struct LabelgenArgs {
    std::string scenes, questions, out, anchor_source = "auto";
    int grid_size = 5;
};

int run_labelgen(const LabelgenArgs& a) {
    hcn::LabelGenConfig cfg;
    cfg.grid_size = a.grid_size;
    cfg.anchor_source = hcn::parse_anchor_source(a.anchor_source);
    if (cfg.grid_size < 1) throw hcn::ValidationError("--grid-size must be >= 1");
    const auto scenes = hcn::load_scene_dir(a.scenes);
    const auto index = hcn::index_scenes(scenes);
    const auto questions = hcn::load_questions(a.questions, &index);
    std::vector<hcn::LabelRecord> labels;
    labels.reserve(questions.size());
    for (const auto& q : questions) {
        const auto& scene = *index.at(q.scene_id);
        labels.push_back(hcn::to_label_record(q, scene, hcn::generate_labels(scene, q, cfg), cfg.grid_size));
    }
    hcn::write_labels(labels, a.out);
    std::cerr << hcn::format_label_stats(hcn::label_stats(labels));
    return 0;
}

struct SynthArgs {
    std::optional<std::string> spec;
    std::string out;
    std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
    hcn::SyntheticSpec spec;
    if (a.spec) spec = hcn::synthetic_spec_from_json(read_json_file(*a.spec));
    if (a.seed) spec.seed = *a.seed;
    spec.validate();
    const hcn::Dataset data = hcn::make_synthetic_dataset(spec);
    hcn::save_dataset(data, a.out);
    write_json(fs::path(a.out) / "spec.json", hcn::to_json(spec));
    write_json(fs::path(a.out) / "manifest.json",
               manifest("synth", spec.seed, hcn::to_json(spec), {{"spec", a.spec ? *a.spec : ""}},
                        {"scenes/", "questions.jsonl", "vocab.txt", "dataset.json", "spec.json"}));
    std::cerr << "synth: " << data.scenes.size() << " scenes, " << data.questions.size()
              << " questions, " << data.vocab.size() << " answers\n";
    return 0;
}

struct TrainArgs {
    std::optional<std::string> config;
    std::string data, out;
    std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
    hcn::TrainConfig cfg = load_train_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    const hcn::Dataset data = hcn::load_dataset(a.data);
    hcn::fit_model_to_data(cfg.model, data);
    cfg.validate();
    const hcn::Split split = hcn::split_examples(hcn::build_examples(data, data.questions));

    hcn::FitResult result;
    try {
        result = hcn::fit(cfg, split.train, split.val);
    } catch (const hcn::TrainingDiverged& e) {
        throw RuntimeFailure(std::string("training diverged: ") + e.what());
    }

    const fs::path out(a.out);
    const ojson config = hcn::to_json(cfg);
    write_json(out / "config.json", config);

    std::string log;
    for (const auto& entry : result.log) log += hcn::to_json(entry).dump() + "\n";
    write_text(out / "log.jsonl", log);

    hcn::Checkpoint ckpt;
    ckpt.params = result.best_params;
    ckpt.meta["model"] = hcn::to_json(cfg.model);
    ckpt.meta["train"] = config;
    ckpt.meta["best_epoch"] = result.best_epoch;
    ckpt.meta["best_val_em1"] = result.best_val_em1;
    hcn::save_checkpoint(ckpt, out / "checkpoint.json");

    ojson metrics = hcn::to_json(hcn::evaluate(cfg.model, result.best_params, data.vocab, split.val));
    metrics["split"] = "val";
    metrics["best_epoch"] = result.best_epoch;
    write_json(out / "metrics.json", metrics);

    write_json(out / "manifest.json",
               manifest("train", cfg.seed, config,
                        {{"config", a.config ? *a.config : ""}, {"data", a.data}},
                        {"config.json", "log.jsonl", "checkpoint.json", "metrics.json"}));
    std::cerr << "train: best val EM@1 " << result.best_val_em1 << " at epoch " << result.best_epoch
              << "\n";
    return 0;
}

std::vector<hcn::QuestionRecord> select_split(const std::vector<hcn::QuestionRecord>& qs,
                                              const std::string& split) {
    if (split == "all") return qs;
    std::vector<hcn::QuestionRecord> out;
    for (const auto& q : qs)
        if (hcn::is_validation(q.question_id) == (split == "val")) out.push_back(q);
    return out;
}

hcn::ModelConfig model_from_checkpoint(const hcn::Checkpoint& ckpt) {
    if (!ckpt.meta.contains("model")) throw hcn::ValidationError("checkpoint has no model config");
    hcn::ModelConfig cfg = hcn::model_config_from_json(json::parse(ckpt.meta["model"].dump()));
    hcn::check_params(cfg, ckpt.params);
    return cfg;
}

struct EvalArgs {
    std::string ckpt, data, split = "val";
    std::optional<std::string> out;
};

int run_eval(const EvalArgs& a) {
    const hcn::Checkpoint ckpt = hcn::load_checkpoint(a.ckpt);
    const hcn::ModelConfig cfg = model_from_checkpoint(ckpt);
    const hcn::Dataset data = hcn::load_dataset(a.data);
    if (data.vocab.size() != cfg.vocab_size)
        throw hcn::ValidationError("checkpoint vocabulary size does not match the dataset");
    const auto questions = select_split(data.questions, a.split);
    const auto examples = hcn::build_examples(data, questions);
    ojson report = hcn::to_json(hcn::evaluate(cfg, ckpt.params, data.vocab, examples));
    report["split"] = a.split;
    if (a.out)
        write_json(*a.out, report);
    else
        std::cout << report.dump(2) << "\n";
    return 0;
}

struct PerturbArgs {
    std::string lexicon;
    std::optional<std::string> questions, data, out, ckpt, report;
    std::string split = "val";
    std::uint64_t seed = 0;
};

int run_perturb(const PerturbArgs& a) {
    const hcn::PerturbationLexicon lex = hcn::load_lexicon(a.lexicon, a.seed);
    if (!a.questions && !a.data) throw hcn::ValidationError("perturb needs --questions or --data");
    if (a.ckpt && !a.data) throw hcn::ValidationError("--ckpt requires --data");

    std::optional<hcn::Dataset> data;
    if (a.data) data = hcn::load_dataset(*a.data);
    const auto questions = a.questions ? hcn::load_questions(*a.questions) : data->questions;

    if (a.out) hcn::save_questions(hcn::perturb_questions(questions, lex), *a.out);
    if (a.ckpt) {
        const hcn::Checkpoint ckpt = hcn::load_checkpoint(*a.ckpt);
        const hcn::ModelConfig cfg = model_from_checkpoint(ckpt);
        const auto probe = hcn::shortcut_degradation(cfg, ckpt.params, *data,
                                                     select_split(questions, a.split), lex);
        ojson report = hcn::to_json(probe);
        report["split"] = a.split;
        if (a.report)
            write_json(*a.report, report);
        else
            std::cout << report.dump(2) << "\n";
    }
    if (!a.out && !a.ckpt) std::cout << "perturb: nothing to do (give --out and/or --ckpt)\n";
    return 0;
}

struct AblateArgs {
    std::optional<std::string> config, rows;
    std::string data, out;
    std::optional<std::uint64_t> seed;
};

int run_ablate(const AblateArgs& a) {
    hcn::TrainConfig cfg = load_train_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    const hcn::Dataset data = hcn::load_dataset(a.data);
    hcn::fit_model_to_data(cfg.model, data);
    const auto rows = a.rows ? hcn::ablation_rows_from_json(read_json_file(*a.rows))
                             : hcn::standard_ablation_rows();
    const hcn::AblationTable table = hcn::run_ablation(cfg, data, rows);
    const fs::path out(a.out);
    write_text(out / "ablation.csv", table.to_csv());
    write_json(out / "ablation.json", table.to_json());
    write_json(out / "manifest.json",
               manifest("ablate", cfg.seed, hcn::to_json(cfg),
                        {{"config", a.config ? *a.config : ""}, {"rows", a.rows ? *a.rows : ""}, {"data", a.data}},
                        {"ablation.csv", "ablation.json"}));
    std::cout << table.to_csv();
    return 0;
}

struct GradcheckArgs {
    double tol = 1e-4, step = 1e-5;
    std::size_t objects = 6;
    std::uint64_t seed = 0;
};

int run_gradcheck(const GradcheckArgs& a) {
    hcn::GradcheckOptions opts;
    opts.tol = a.tol;
    opts.step = a.step;
    bool ok = true;
    for (const auto& r : hcn::run_gradcheck_suite(a.seed, opts, a.objects)) {
        ok = ok && r.report.passed;
        std::cout << std::left << std::setw(16) << r.name << (r.report.passed ? "PASS" : "FAIL")
                  << "  max_rel_error=" << r.report.max_rel_error << "\n";
    }
    std::cout << (ok ? "gradcheck: PASS" : "gradcheck: FAIL") << " (tol " << a.tol << ", step " << a.step
              << ")\n";
    return ok ? 0 : 2;
}

struct FlopsArgs {
    std::optional<std::string> config;
    double backbone = 0;
    std::size_t objects = 6, text_tokens = 10;
};

int run_flops(const FlopsArgs& a) {
    hcn::ModelConfig cfg;
    if (a.config) {
        const json j = read_json_file(*a.config);
        cfg = hcn::model_config_from_json(j.contains("model") ? j["model"] : j);
    }
    if (!(a.backbone > 0)) throw hcn::ValidationError("--backbone-flops must be positive");
    std::cout << hcn::to_json(hcn::count_flops(cfg, a.objects, a.text_tokens, a.backbone)).dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hcnqa: hierarchical mask supervision for 3D question answering"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    int code = 0;

    LabelgenArgs lg;
    auto* cmd_lg = app.add_subcommand("labelgen", "Derive BoI/OoI/OoT object masks for each question");
    cmd_lg->add_option("--scenes", lg.scenes, "Directory of scene JSON files")->required()->check(CLI::ExistingDirectory);
    cmd_lg->add_option("--questions", lg.questions, "Questions JSONL")->required()->check(CLI::ExistingFile);
    cmd_lg->add_option("--grid-size", lg.grid_size, "Grid cells per axis")->capture_default_str();
    cmd_lg->add_option("--anchor-source", lg.anchor_source, "auto, annotation, label_match or union")
        ->capture_default_str();
    cmd_lg->add_option("--out", lg.out, "Output labels JSONL")->required();
    cmd_lg->callback([&] { code = run_labelgen(lg); });

    SynthArgs sy;
    auto* cmd_sy = app.add_subcommand("synth", "Generate a synthetic scene/question dataset");
    cmd_sy->add_option("--spec", sy.spec, "Synthetic spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
    cmd_sy->add_option("--out", sy.out, "Output dataset directory")->required();
    cmd_sy->add_option("--seed", sy.seed, "Overrides the spec seed");
    cmd_sy->callback([&] { code = run_synth(sy); });

    TrainArgs tr;
    auto* cmd_tr = app.add_subcommand("train", "Train a model on a dataset directory");
    cmd_tr->add_option("--config", tr.config, "Training config JSON (defaults when omitted)")->check(CLI::ExistingFile);
    cmd_tr->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd_tr->add_option("--out", tr.out, "Output run directory")->required();
    cmd_tr->add_option("--seed", tr.seed, "Overrides the config seed");
    cmd_tr->callback([&] { code = run_train(tr); });

    EvalArgs ev;
    auto* cmd_ev = app.add_subcommand("eval", "Score a checkpoint (EM@1, EM@10, BLEU-1..4, ROUGE-L)");
    cmd_ev->add_option("--ckpt", ev.ckpt, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
    cmd_ev->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd_ev->add_option("--split", ev.split, "val, train or all")
        ->check(CLI::IsMember({"val", "train", "all"}))
        ->capture_default_str();
    cmd_ev->add_option("--out", ev.out, "Write the report here instead of stdout");
    cmd_ev->callback([&] { code = run_eval(ev); });

    PerturbArgs pt;
    auto* cmd_pt = app.add_subcommand("perturb", "Synonym-substitute questions; optionally measure EM@1 degradation");
    cmd_pt->add_option("--lexicon", pt.lexicon, "Lexicon JSON {token: [synonyms]}")->required()->check(CLI::ExistingFile);
    cmd_pt->add_option("--questions", pt.questions, "Questions JSONL to perturb")->check(CLI::ExistingFile);
    cmd_pt->add_option("--data", pt.data, "Dataset directory")->check(CLI::ExistingDirectory);
    cmd_pt->add_option("--out", pt.out, "Output perturbed questions JSONL");
    cmd_pt->add_option("--ckpt", pt.ckpt, "Checkpoint for the shortcut probe")->check(CLI::ExistingFile);
    cmd_pt->add_option("--split", pt.split, "Probe split: val, train or all")
        ->check(CLI::IsMember({"val", "train", "all"}))
        ->capture_default_str();
    cmd_pt->add_option("--report", pt.report, "Write the probe report here instead of stdout");
    cmd_pt->add_option("--seed", pt.seed, "Synonym choice seed")->capture_default_str();
    cmd_pt->callback([&] { code = run_perturb(pt); });

    AblateArgs ab;
    auto* cmd_ab = app.add_subcommand("ablate", "Train one model per supervision row and tabulate metrics");
    cmd_ab->add_option("--config", ab.config, "Base training config JSON")->check(CLI::ExistingFile);
    cmd_ab->add_option("--rows", ab.rows, "JSON array of {cg, fg, if, vqa} rows")->check(CLI::ExistingFile);
    cmd_ab->add_option("--data", ab.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd_ab->add_option("--out", ab.out, "Output directory")->required();
    cmd_ab->add_option("--seed", ab.seed, "Overrides the config seed");
    cmd_ab->callback([&] { code = run_ablate(ab); });

    GradcheckArgs gc;
    auto* cmd_gc = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and the full loss");
    cmd_gc->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str();
    cmd_gc->add_option("--step", gc.step, "Central difference step")->capture_default_str();
    cmd_gc->add_option("--objects", gc.objects, "Objects in the toy batch")->capture_default_str();
    cmd_gc->add_option("--seed", gc.seed, "Input seed")->capture_default_str();
    cmd_gc->callback([&] { code = run_gradcheck(gc); });

    FlopsArgs fl;
    auto* cmd_fl = app.add_subcommand("flops", "Per-layer FLOPs and the HSM/backbone ratio");
    cmd_fl->add_option("--config", fl.config, "Model or training config JSON")->check(CLI::ExistingFile);
    cmd_fl->add_option("--backbone-flops", fl.backbone, "Backbone FLOPs per question")->required();
    cmd_fl->add_option("--objects", fl.objects, "Objects per scene")->capture_default_str();
    cmd_fl->add_option("--text-tokens", fl.text_tokens, "Question tokens")->capture_default_str();
    cmd_fl->callback([&] { code = run_flops(fl); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const hcn::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const hcn::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return code;
}
