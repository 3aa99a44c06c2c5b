// encbridge: experiment workflows, evaluation, weight analysis and gradient
// checking for the bridged encoder-decoder.
//
// Exit codes: 0 success, 1 runtime or numeric failure, 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "encbridge/analysis.hpp"
#include "encbridge/checkpoint.hpp"
#include "encbridge/data.hpp"
#include "encbridge/eval.hpp"
#include "encbridge/gradcheck.hpp"
#include "encbridge/train.hpp"

namespace fs = std::filesystem;
using namespace encbridge;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataOptions {
    std::string data = "subst";
    std::size_t pairs = 5000;
    std::size_t eval_pairs = 500;
    std::string eval_data;
    std::uint64_t data_seed = 7;
    std::size_t min_len = 3;
    std::size_t max_len = 8;
    std::uint64_t map_seed = kDefaultMappingSeed;
};

struct TrainOptions {
    std::optional<std::size_t> steps;
    std::optional<std::size_t> epochs;
    std::size_t batch_size = 16;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-9;
    double grad_clip = 1.0;
    std::size_t warmup = 0;
    std::uint64_t seed = 1;
    std::string bridge_init = "none";
    std::uint64_t bridge_seed = 1;
    std::string body_init = "xavier";
    bool freeze_base = false;
    std::size_t log_every = 100;
};

struct ModelOptions {
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t d_ff = 128;
    std::size_t enc_layers = 4;
    std::size_t dec_layers = 4;
    std::size_t max_seq_len = 32;
};

struct OutputOptions {
    std::string out_root;
    std::string name;
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
    cmd->add_option("--data", d.data, "Synthetic task (copy|reverse|subst) or a TSV file")->capture_default_str();
    cmd->add_option("--pairs", d.pairs, "Synthetic training pairs")->capture_default_str();
    cmd->add_option("--eval-pairs", d.eval_pairs, "Held-out pairs (synthetic, or tail of the TSV)")
        ->capture_default_str();
    cmd->add_option("--eval-data", d.eval_data, "Held-out TSV file");
    cmd->add_option("--data-seed", d.data_seed, "Seed of the synthetic generator")->capture_default_str();
    cmd->add_option("--min-len", d.min_len)->capture_default_str();
    cmd->add_option("--max-len", d.max_len)->capture_default_str();
    cmd->add_option("--map-seed", d.map_seed, "Seed of the subst bijection")->capture_default_str();
}

void add_train_options(CLI::App* cmd, TrainOptions& t, bool with_bridge) {
    auto* steps = cmd->add_option("--steps", t.steps, "Optimizer steps (default 2000; 0 saves the initial model)");
    auto* epochs = cmd->add_option("--epochs", t.epochs, "Epochs over the training pairs");
    steps->excludes(epochs);
    cmd->add_option("--batch-size", t.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--lr", t.lr)->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--beta1", t.beta1)->capture_default_str();
    cmd->add_option("--beta2", t.beta2)->capture_default_str();
    cmd->add_option("--adam-eps", t.adam_eps)->capture_default_str();
    cmd->add_option("--grad-clip", t.grad_clip, "Global gradient norm cap (0 disables)")->capture_default_str();
    cmd->add_option("--warmup", t.warmup, "Linear warmup steps")->capture_default_str();
    cmd->add_option("--seed", t.seed)->capture_default_str();
    if (with_bridge)
        cmd->add_option("--bridge-init", t.bridge_init, "Bridge initialization")
            ->capture_default_str()
            ->check(CLI::IsMember({"none", "original", "gca", "ones", "xavier"}));
    cmd->add_option("--bridge-seed", t.bridge_seed, "Seed of the xavier bridge")->capture_default_str();
    cmd->add_option("--body-init", t.body_init, "Initialization of non-bridge weights when retraining")
        ->capture_default_str()
        ->check(CLI::IsMember({"xavier", "ones"}));
    cmd->add_flag("--freeze-base", t.freeze_base, "Train only the bridge");
    cmd->add_option("--log-every", t.log_every, "Log loss to stderr every N steps (0 = quiet)")->capture_default_str();
}

void add_model_options(CLI::App* cmd, ModelOptions& m) {
    cmd->add_option("--d-model", m.d_model)->capture_default_str();
    cmd->add_option("--heads", m.heads)->capture_default_str();
    cmd->add_option("--d-ff", m.d_ff)->capture_default_str();
    cmd->add_option("--enc-layers", m.enc_layers)->capture_default_str();
    cmd->add_option("--dec-layers", m.dec_layers)->capture_default_str();
    cmd->add_option("--max-seq-len", m.max_seq_len)->capture_default_str();
}

void add_output_options(CLI::App* cmd, OutputOptions& o) {
    cmd->add_option("--out-root", o.out_root, "Output root (default $ENCBRIDGE_RUN_ROOT or ./run)");
    cmd->add_option("--name", o.name, "Run name; outputs go to <out-root>/<name>/");
}

ModelConfig model_config(const ModelOptions& m) {
    ModelConfig c;
    c.d_model = m.d_model;
    c.n_heads = m.heads;
    c.d_ff = m.d_ff;
    c.n_enc_layers = m.enc_layers;
    c.n_dec_layers = m.dec_layers;
    c.max_seq_len = m.max_seq_len;
    return c;
}

TrainConfig train_config(const TrainOptions& t) {
    TrainConfig c;
    if (t.epochs)
        c.epochs = t.epochs;
    else
        c.steps = t.steps.value_or(2000);
    c.batch_size = t.batch_size;
    c.lr = t.lr;
    c.adam = {t.beta1, t.beta2, t.adam_eps};
    c.grad_clip = t.grad_clip;
    c.warmup_steps = t.warmup;
    c.seed = t.seed;
    if (t.bridge_init != "none") c.bridge_init = InitScheme{*parse_init_variant(t.bridge_init), t.bridge_seed};
    c.body_init = t.body_init == "ones" ? BodyInit::ConstantOne : BodyInit::Xavier;
    c.freeze_base = t.freeze_base;
    c.log_every = t.log_every;
    return c;
}

ExperimentData load_data(const DataOptions& d) {
    ExperimentData out;
    if (auto task = parse_task(d.data)) {
        const auto all = gen_synthetic(*task, d.pairs + d.eval_pairs, d.data_seed, {d.min_len, d.max_len},
                                       make_subst_mapping(d.map_seed));
        out.vocab = synthetic_vocab();
        out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(d.pairs));
        out.eval.assign(all.begin() + static_cast<std::ptrdiff_t>(d.pairs), all.end());
    } else {
        if (!fs::exists(d.data)) throw UsageError("--data: no such task or file: " + d.data);
        out.train = load_tsv(d.data);
        if (!d.eval_data.empty()) {
            out.eval = load_tsv(d.eval_data);
        } else {
            const std::size_t held = std::min(d.eval_pairs, out.train.size() / 2);
            out.eval.assign(out.train.end() - static_cast<std::ptrdiff_t>(held), out.train.end());
            out.train.resize(out.train.size() - held);
        }
        out.vocab = Vocab::from_pairs(out.train);
    }
    if (out.train.empty()) throw std::invalid_argument("training data is empty");
    if (out.eval.empty()) throw std::invalid_argument("evaluation data is empty");
    return out;
}

fs::path run_dir(const OutputOptions& o, const std::string& fallback_name) {
    fs::path root = o.out_root;
    if (root.empty()) {
        const char* env = std::getenv("ENCBRIDGE_RUN_ROOT");
        root = env && *env ? env : "run";
    }
    fs::path dir = root / (o.name.empty() ? fallback_name : o.name);
    fs::create_directories(dir / "ckpt");
    fs::create_directories(dir / "heatmaps");
    return dir;
}

std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string command_line(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
    return s;
}

// Written before any long computation. The body is a config file for the
// same subcommand: `encbridge <cmd> --config <manifest>` reruns it.
void write_manifest(const fs::path& dir, const CLI::App& app, const CLI::App* cmd, const std::string& cmdline) {
    std::ofstream os(dir / "manifest", std::ios::binary);
    if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
    os << "# encbridge run manifest\n"
       << "# command: " << cmdline << '\n'
       << "# subcommand: " << cmd->get_name() << '\n'
       << "# started: " << now_utc() << '\n'
       << "# outputs: " << (dir / "loss.csv").string() << ' ' << (dir / "report.csv").string() << ' '
       << (dir / "ckpt").string() << ' ' << (dir / "heatmaps").string() << '\n';
    std::istringstream all(app.config_to_str(true, false));
    const std::string prefix = cmd->get_name() + ".";
    for (std::string line; std::getline(all, line);)
        // Unset options come out as key="" and would count as given on reload.
        if (line.rfind(prefix, 0) == 0 && !line.ends_with("=\"\"")) os << line << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

void write_heatmaps(const fs::path& dir, const std::string& stem, const BlockNormMatrix& m, std::size_t upscale) {
    const fs::path sub = dir / stem;
    fs::create_directories(sub);
    export_heatmap(m, sub / "grid.csv", HeatmapFormat::Csv);
    export_heatmap(m, sub / "grid.pgm", HeatmapFormat::Pgm, upscale);
}

void write_run_outputs(const fs::path& dir, const std::string& label, const ExperimentReport& r) {
    write_text(dir / "loss.csv", loss_csv(r.losses));
    write_text(dir / "report.csv", ExperimentReport::csv_header() + "\n" + label + r.csv_row().substr(r.csv_row().find(',')) + "\n");
    write_text(dir / "bleu.csv", BleuReport::csv_header() + "\n" + r.bleu.csv_row() + "\n");
    r.checkpoint.save(dir / "ckpt" / "model.ckpt");
    write_text(dir / "ckpt" / "vocab.txt", r.checkpoint.vocab_text);
    if (r.initial_norms) write_heatmaps(dir / "heatmaps", "initial", *r.initial_norms, 16);
    if (r.final_norms) write_heatmaps(dir / "heatmaps", "final", *r.final_norms, 16);
    if (r.drift) write_heatmaps(dir / "heatmaps", "drift", *r.drift, 16);
    std::cout << ExperimentReport::csv_header() << '\n'
              << label << r.csv_row().substr(r.csv_row().find(',')) << '\n';
}

// --config belongs to the root app; accept it anywhere on the command line.
std::vector<std::string> hoist_config(int argc, char** argv) {
    std::vector<std::string> front, rest;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) {
            front.push_back(a);
            front.push_back(argv[++i]);
        } else if (a.rfind("--config=", 0) == 0) {
            front.push_back(a);
        } else {
            rest.push_back(a);
        }
    }
    front.insert(front.end(), rest.begin(), rest.end());
    // CLI11 consumes the vector from the back.
    std::reverse(front.begin(), front.end());
    return front;
}

Checkpoint load_checkpoint_arg(const std::string& path, const char* flag) {
    if (!fs::exists(path)) throw UsageError(std::string(flag) + ": no such file: " + path);
    return Checkpoint::load(path);
}

// On a non-finite step the diagnostic checkpoint and partial loss curve are
// kept before the error propagates.
template <class F>
ExperimentReport keep_diagnostics(const fs::path& dir, F&& run) {
    try {
        return run();
    } catch (const TrainingHalted& h) {
        h.diagnostic().save(dir / "ckpt" / "diagnostic.ckpt");
        write_text(dir / "loss.csv", loss_csv(h.losses()));
        throw;
    }
}

ExperimentReport run_halting(int id, const ExperimentData& data, const Checkpoint* base,
                             const ExperimentOptions& opts, const fs::path& dir) {
    return keep_diagnostics(dir, [&] { return run_experiment(id, data, base, opts); });
}

ExperimentReport run_halting_workflow(const TrainConfig& cfg, const ExperimentData& data, const Checkpoint* base,
                                      const ExperimentOptions& opts, const fs::path& dir) {
    return keep_diagnostics(dir, [&] { return run_workflow(cfg, data, base, opts); });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Encoder-decoder bridge experiments"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Options file, e.g. a run manifest; command-line flags win");
    const std::string cmdline = command_line(argc, argv);

    // ---- train: retrain from scratch
    DataOptions train_data;
    TrainOptions train_opts;
    ModelOptions train_model;
    OutputOptions train_out;
    auto* train = app.add_subcommand("train", "Train a model from scratch (stock or bridged)");
    add_data_options(train, train_data);
    add_train_options(train, train_opts, true);
    add_model_options(train, train_model);
    add_output_options(train, train_out);

    // ---- finetune
    DataOptions ft_data;
    TrainOptions ft_opts;
    OutputOptions ft_out;
    std::string ft_base;
    auto* finetune = app.add_subcommand("finetune", "Attach a bridge to a base checkpoint and keep training");
    finetune->add_option("--base", ft_base, "Base checkpoint")->required();
    add_data_options(finetune, ft_data);
    add_train_options(finetune, ft_opts, true);
    add_output_options(finetune, ft_out);

    // ---- experiment
    DataOptions ex_data;
    TrainOptions ex_opts;
    ModelOptions ex_model;
    OutputOptions ex_out;
    int ex_id = -1;
    std::string ex_base;
    auto* experiment = app.add_subcommand("experiment", "Run experiment 0-4");
    experiment->add_option("--id", ex_id, "0 stock retrain, 1 original-init finetune, 2 direct finetune, "
                                          "3 GCA finetune, 4 bridged retrain")
        ->required()
        ->check(CLI::Range(0, 4));
    experiment->add_option("--base", ex_base, "Base checkpoint (experiments 1-3)");
    add_data_options(experiment, ex_data);
    add_train_options(experiment, ex_opts, false);
    add_model_options(experiment, ex_model);
    add_output_options(experiment, ex_out);

    // ---- eval
    DataOptions ev_data;
    std::string ev_ckpt;
    std::size_t ev_batch = 64;
    auto* eval = app.add_subcommand("eval", "Print evaluate loss and BLEU of a checkpoint");
    eval->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
    eval->add_option("--batch-size", ev_batch)->capture_default_str()->check(CLI::PositiveNumber);
    add_data_options(eval, ev_data);

    // ---- analyze
    std::string an_ckpt, an_baseline, an_out;
    std::size_t an_upscale = 16;
    bool an_raw = false;
    auto* analyze = app.add_subcommand("analyze", "Export bridge block-norm heatmaps");
    analyze->add_option("--ckpt", an_ckpt, "Checkpoint with bridge weights")->required();
    analyze->add_option("--baseline", an_baseline, "Earlier checkpoint for the drift grid");
    analyze->add_option("--out", an_out, "Output directory (default <ckpt dir>/../heatmaps)");
    analyze->add_option("--upscale", an_upscale, "Pixels per grid cell")->capture_default_str()->check(CLI::PositiveNumber);
    analyze->add_flag("--raw", an_raw, "Also write every raw bridge matrix as PGM");

    // ---- gradcheck
    std::uint64_t gc_seed = 1;
    double gc_threshold = 1e-4;
    double gc_step = 1e-5;
    ModelOptions gc_model{8, 2, 16, 2, 2, 16};
    std::size_t gc_vocab = 12;
    auto* gradcheck = app.add_subcommand("gradcheck", "Autograd vs finite differences on a tiny bridged model");
    gradcheck->add_option("--seed", gc_seed)->capture_default_str();
    gradcheck->add_option("--threshold", gc_threshold, "Pass when max relative error is below this")->capture_default_str();
    gradcheck->add_option("--step", gc_step, "Central difference step")->capture_default_str();
    gradcheck->add_option("--vocab", gc_vocab)->capture_default_str();
    add_model_options(gradcheck, gc_model);

    // ---- gen-data
    std::string gd_task = "subst", gd_out;
    std::size_t gd_pairs = 1000, gd_min = 3, gd_max = 8;
    std::uint64_t gd_seed = 7, gd_map_seed = kDefaultMappingSeed;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic task as TSV");
    gen->add_option("--task", gd_task)->capture_default_str()->check(CLI::IsMember({"copy", "reverse", "subst"}));
    gen->add_option("--pairs", gd_pairs)->capture_default_str();
    gen->add_option("--seed", gd_seed)->capture_default_str();
    gen->add_option("--min-len", gd_min)->capture_default_str();
    gen->add_option("--max-len", gd_max)->capture_default_str();
    gen->add_option("--map-seed", gd_map_seed)->capture_default_str();
    gen->add_option("--out", gd_out, "Output TSV")->required();

    try {
        app.parse(hoist_config(argc, argv));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (*train || *finetune || *experiment) {
            const bool is_train = train->parsed();
            const bool is_ft = finetune->parsed();
            CLI::App* cmd = is_train ? train : is_ft ? finetune : experiment;
            const DataOptions& dopts = is_train ? train_data : is_ft ? ft_data : ex_data;
            const TrainOptions& topts = is_train ? train_opts : is_ft ? ft_opts : ex_opts;
            const OutputOptions& oopts = is_train ? train_out : is_ft ? ft_out : ex_out;
            const std::string base_path = is_ft ? ft_base : ex_base;

            if (experiment->parsed() && experiment_needs_base(ex_id) && ex_base.empty())
                throw UsageError("experiment " + std::to_string(ex_id) + " requires --base");

            std::optional<Checkpoint> base;
            if (!base_path.empty()) base = load_checkpoint_arg(base_path, "--base");
            const ExperimentData data = load_data(dopts);

            const std::string fallback =
                is_train ? "train" : is_ft ? "finetune" : "experiment-" + std::to_string(ex_id);
            const fs::path dir = run_dir(oopts, fallback);
            write_manifest(dir, app, cmd, cmdline);

            ExperimentOptions opts;
            opts.train = train_config(topts);
            opts.model = model_config(is_train ? train_model : ex_model);
            ExperimentReport report;
            std::string label;
            if (experiment->parsed()) {
                report = run_halting(ex_id, data, base ? &*base : nullptr, opts, dir);
                label = std::to_string(ex_id);
            } else {
                opts.train.mode = is_train ? TrainMode::Retrain : TrainMode::Finetune;
                report = run_halting_workflow(opts.train, data, base ? &*base : nullptr, opts, dir);
                label = cmd->get_name();
            }
            write_run_outputs(dir, label, report);
            return 0;
        }

        if (*eval) {
            const Checkpoint ckpt = load_checkpoint_arg(ev_ckpt, "--ckpt");
            const Model<float> model = ckpt.to_model();
            const Vocab vocab = Vocab::from_text(ckpt.vocab_text);
            ExperimentData data = load_data(ev_data);
            const EvalResult ev = evaluate(model, vocab, data.eval, ev_batch);
            std::cout << "evaluate_loss,bleu\n" << std::fixed << std::setprecision(6) << ev.evaluate_loss << ','
                      << std::setprecision(4) << ev.bleu.bleu << '\n';
            return 0;
        }

        if (*analyze) {
            const Checkpoint ckpt = load_checkpoint_arg(an_ckpt, "--ckpt");
            const Model<float> model = ckpt.to_model();
            const auto bridge = model.bridge();
            if (!bridge) throw std::runtime_error(an_ckpt + " has no bridge weights");
            const fs::path out = an_out.empty() ? fs::path(an_ckpt).parent_path() / ".." / "heatmaps" : fs::path(an_out);
            auto norms = block_norms(*bridge, model.config());
            norms.step = ckpt.step;
            write_heatmaps(out, "block_norms", norms, an_upscale);
            if (!an_baseline.empty()) {
                const Checkpoint base = load_checkpoint_arg(an_baseline, "--baseline");
                const auto base_bridge = base.to_model().bridge();
                if (!base_bridge) throw std::runtime_error(an_baseline + " has no bridge weights");
                write_heatmaps(out, "drift", weight_drift(*base_bridge, *bridge), an_upscale);
            }
            if (an_raw)
                for (std::size_t i = 0; i < bridge->per_decoder_layer.size(); ++i) {
                    const fs::path sub = out / ("raw_dec" + std::to_string(i));
                    fs::create_directories(sub);
                    export_matrix_pgm(bridge->per_decoder_layer[i], sub / "matrix.pgm");
                }
            std::cout << "wrote " << out.string() << '\n';
            return 0;
        }

        if (*gradcheck) {
            GradCheckOptions o;
            o.config = model_config(gc_model);
            o.config.vocab_size = gc_vocab;
            o.seed = gc_seed;
            o.step = gc_step;
            const auto report = gradcheck_model(o);
            for (const auto& p : report.params)
                std::cout << std::left << std::setw(28) << p.name << " n=" << std::setw(6) << p.count
                          << " max_rel_err=" << std::scientific << std::setprecision(3) << p.max_rel_err << '\n';
            const bool pass = report.max_rel_err < gc_threshold;
            std::cout << "max_rel_err " << std::scientific << std::setprecision(3) << report.max_rel_err << " ("
                      << report.worst_param << ") threshold " << gc_threshold << ' ' << (pass ? "PASS" : "FAIL")
                      << '\n';
            return pass ? 0 : kRuntimeFailure;
        }

        if (*gen) {
            save_tsv(gd_out, gen_synthetic(*parse_task(gd_task), gd_pairs, gd_seed, {gd_min, gd_max},
                                           make_subst_mapping(gd_map_seed)));
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    }
    return 0;
}
