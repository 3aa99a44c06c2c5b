#include "encbridge/train.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "encbridge/random.hpp"

namespace encbridge {

namespace {

std::string format9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string_view mode_name(TrainMode m) { return m == TrainMode::Finetune ? "finetune" : "retrain"; }

}  // namespace

void TrainConfig::validate() const {
    if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
    if (steps.has_value() == epochs.has_value())
        throw std::invalid_argument("set exactly one of steps and epochs");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1))
        throw std::invalid_argument("adam betas must lie in [0, 1)");
}

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os << "mode=" << mode_name(mode) << '\n';
    if (steps) os << "steps=" << *steps << '\n';
    if (epochs) os << "epochs=" << *epochs << '\n';
    os << "batch_size=" << batch_size << '\n'
       << "lr=" << format9(lr) << '\n'
       << "beta1=" << format9(adam.beta1) << '\n'
       << "beta2=" << format9(adam.beta2) << '\n'
       << "adam_eps=" << format9(adam.eps) << '\n'
       << "grad_clip=" << format9(grad_clip) << '\n'
       << "warmup_steps=" << warmup_steps << '\n'
       << "seed=" << seed << '\n'
       << "bridge_init=" << (bridge_init ? init_variant_name(bridge_init->variant) : "none") << '\n'
       << "bridge_seed=" << (bridge_init ? bridge_init->seed : 0) << '\n'
       << "body_init=" << (body_init == BodyInit::ConstantOne ? "ones" : "xavier") << '\n'
       << "freeze_base=" << (freeze_base ? 1 : 0) << '\n';
    return os.str();
}

std::size_t total_steps(const TrainConfig& cfg, std::size_t n_pairs) {
    if (cfg.steps) return *cfg.steps;
    const std::size_t per_epoch = (n_pairs + cfg.batch_size - 1) / cfg.batch_size;
    return per_epoch * cfg.epochs.value_or(0);
}

// ---- optimizer ------------------------------------------------------------

double clip_grad_norm(std::map<std::string, Tensor<float>>& params, double max_norm) {
    double ss = 0;
    for (auto& [_, t] : params) {
        if (!t.requires_grad()) continue;
        for (float g : t.grad()) ss += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(ss);
    if (max_norm > 0 && norm > max_norm && std::isfinite(norm)) {
        const float factor = static_cast<float>(max_norm / norm);
        for (auto& [_, t] : params)
            if (t.requires_grad())
                for (float& g : t.mutable_grad()) g *= factor;
    }
    return norm;
}

void adam_step(std::map<std::string, Tensor<float>>& params, AdamState& state, double lr,
               const AdamSettings& s) {
    for (auto& [name, t] : params) {
        if (!t.requires_grad()) continue;
        for (float g : t.grad())
            if (!std::isfinite(g))
                throw NonFiniteError("non-finite gradient in '" + name + "' at step " + std::to_string(state.step),
                                     state.step);
    }
    ++state.step;
    const double t_step = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(s.beta1, t_step);
    const double c2 = 1.0 - std::pow(s.beta2, t_step);
    for (auto& [name, t] : params) {
        if (!t.requires_grad()) continue;
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != t.numel()) m.assign(t.numel(), 0.0f);
        if (v.size() != t.numel()) v.assign(t.numel(), 0.0f);
        const auto g = t.grad();
        auto w = t.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = static_cast<float>(s.beta1 * m[i] + (1.0 - s.beta1) * g[i]);
            v[i] = static_cast<float>(s.beta2 * v[i] + (1.0 - s.beta2) * static_cast<double>(g[i]) * g[i]);
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + s.eps));
        }
    }
}

// ---- models for the workflows ----------------------------------------------

Model<float> retrain_model(ModelConfig config, const TrainConfig& cfg) {
    config.bridge_enabled = false;
    Model<float> model(config);
    model.init_body(cfg.body_init, cfg.seed);
    if (cfg.bridge_init)
        model.set_bridge(make_bridge<float>(*cfg.bridge_init, config.n_enc_layers, config.n_dec_layers,
                                            config.d_model));
    return model;
}

Model<float> finetune_model(const Checkpoint& base, const TrainConfig& cfg) {
    Model<float> model = base.to_model();
    const auto& c = model.config();
    if (cfg.bridge_init)
        model.set_bridge(make_bridge<float>(*cfg.bridge_init, c.n_enc_layers, c.n_dec_layers, c.d_model));
    if (cfg.freeze_base) {
        if (!model.config().bridge_enabled)
            throw std::invalid_argument("freeze_base needs a bridge to train");
        for (auto& [name, t] : model.params()) t.set_requires_grad(name.rfind("bridge.", 0) == 0);
    }
    return model;
}

std::vector<ParallelBatch> epoch_batches(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                                         const TrainConfig& cfg, std::size_t epoch) {
    return make_batches(pairs, vocab, cfg.batch_size, mix_seed(cfg.seed, epoch));
}

namespace {

Checkpoint snapshot(const Model<float>& model, const AdamState& adam, const std::vector<double>& losses,
                    const Vocab& vocab, const TrainConfig& cfg) {
    Checkpoint c = Checkpoint::from_model(model);
    c.train_config = cfg.to_text();
    c.vocab_text = vocab.to_text();
    c.step = adam.step;
    for (const auto& [name, m] : adam.m) c.adam_m.emplace(name, Tensor<float>({m.size()}, m));
    for (const auto& [name, v] : adam.v) c.adam_v.emplace(name, Tensor<float>({v.size()}, v));
    c.loss_history.assign(losses.begin(), losses.end());
    return c;
}

}  // namespace

TrainResult train_run(Model<float> model, const std::vector<SentencePair>& pairs, const Vocab& vocab,
                      const TrainConfig& cfg) {
    cfg.validate();
    if (pairs.empty()) throw std::invalid_argument("training data is empty");
    if (vocab.size() != model.config().vocab_size)
        throw std::invalid_argument("vocabulary has " + std::to_string(vocab.size()) + " entries, model expects " +
                                    std::to_string(model.config().vocab_size));
    const std::size_t steps = total_steps(cfg, pairs.size());
    AdamState adam;
    std::vector<double> losses;
    losses.reserve(steps);
    std::vector<ParallelBatch> batches;
    std::size_t epoch = 0, cursor = 0;
    for (std::size_t step = 0; step < steps; ++step) {
        if (cursor == batches.size()) {
            batches = epoch_batches(pairs, vocab, cfg, epoch++);
            cursor = 0;
        }
        const ParallelBatch& batch = batches[cursor++];
        model.zero_grad();
        GraphScope<float> scope;
        const auto logits = model.forward(batch.src, batch.tgt_in);
        const auto loss = cross_entropy(logits, batch.tgt_out.ids, model.config().pad_id);
        const double value = loss.item();
        losses.push_back(value);
        if (!std::isfinite(value))
            throw TrainingHalted("non-finite loss at step " + std::to_string(step),
                                 snapshot(model, adam, losses, vocab, cfg), losses);
        scope.graph().backward(loss);
        if (cfg.grad_clip > 0) clip_grad_norm(model.params(), cfg.grad_clip);
        double lr = cfg.lr;
        if (cfg.warmup_steps > 0)
            lr *= std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps));
        try {
            adam_step(model.params(), adam, lr, cfg.adam);
        } catch (const NonFiniteError& e) {
            throw TrainingHalted(e.what(), snapshot(model, adam, losses, vocab, cfg), losses);
        }
        if (cfg.log_every && (step % cfg.log_every == 0 || step + 1 == steps))
            std::cerr << "step " << step << " loss " << format9(value) << '\n';
    }
    model.zero_grad();
    Checkpoint ckpt = snapshot(model, adam, losses, vocab, cfg);
    return {std::move(model), std::move(ckpt), std::move(losses)};
}

std::string loss_csv(const std::vector<double>& losses) {
    std::string out = "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) out += std::to_string(i) + "," + format9(losses[i]) + "\n";
    return out;
}

// ---- experiments ------------------------------------------------------------

std::string ExperimentReport::csv_row() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.4f", id, evaluate_loss, bleu.bleu);
    return buf;
}

bool experiment_needs_base(int id) { return id >= 1 && id <= 3; }

TrainConfig experiment_config(int id, TrainConfig cfg) {
    switch (id) {
        case 0:
            cfg.mode = TrainMode::Retrain;
            cfg.bridge_init.reset();
            break;
        case 1:
            cfg.mode = TrainMode::Finetune;
            cfg.bridge_init = InitScheme{InitVariant::OriginalConnection, cfg.seed};
            break;
        case 2:
            cfg.mode = TrainMode::Finetune;
            cfg.bridge_init.reset();
            break;
        case 3:
            cfg.mode = TrainMode::Finetune;
            cfg.bridge_init = InitScheme{InitVariant::Gca, cfg.seed};
            break;
        case 4:
            cfg.mode = TrainMode::Retrain;
            cfg.bridge_init = InitScheme{InitVariant::OriginalConnection, cfg.seed};
            break;
        default:
            throw std::invalid_argument("experiment id must be in 0..4, got " + std::to_string(id));
    }
    return cfg;
}

ExperimentReport run_experiment(int id, const ExperimentData& data, const Checkpoint* base,
                                const ExperimentOptions& options) {
    const TrainConfig cfg = experiment_config(id, options.train);
    if (experiment_needs_base(id) && !base)
        throw std::invalid_argument("experiment " + std::to_string(id) + " requires a base checkpoint (--base)");
    ExperimentReport report = run_workflow(cfg, data, base, options);
    report.id = id;
    return report;
}

ExperimentReport run_workflow(const TrainConfig& cfg, const ExperimentData& data, const Checkpoint* base,
                              const ExperimentOptions& options) {
    if (cfg.mode == TrainMode::Finetune && !base)
        throw std::invalid_argument("fine-tuning requires a base checkpoint (--base)");

    Vocab vocab = data.vocab;
    std::optional<Model<float>> model;
    if (cfg.mode == TrainMode::Finetune) {
        vocab = Vocab::from_text(base->vocab_text);
        model.emplace(finetune_model(*base, cfg));
    } else {
        ModelConfig mc = options.model;
        mc.vocab_size = vocab.size();
        model.emplace(retrain_model(mc, cfg));
    }

    ExperimentReport report;
    std::optional<BridgeWeights<float>> before;
    if (auto b = model->bridge()) {
        before = BridgeWeights<float>{b->n_enc_layers, b->d_model, {}};
        for (const auto& m : b->per_decoder_layer) before->per_decoder_layer.push_back(m.clone());
        report.initial_norms = block_norms(*before, model->config());
        report.initial_norms->init_scheme = cfg.bridge_init ? init_variant_name(cfg.bridge_init->variant) : "checkpoint";
    }

    TrainResult run = train_run(std::move(*model), data.train, vocab, cfg);
    const EvalResult ev = evaluate(run.model, vocab, data.eval, options.eval_batch);
    report.evaluate_loss = ev.evaluate_loss;
    report.bleu = ev.bleu;
    report.losses = std::move(run.losses);
    if (auto after = run.model.bridge()) {
        report.final_norms = block_norms(*after, run.model.config());
        report.final_norms->step = run.checkpoint.step;
        report.final_norms->init_scheme = report.initial_norms->init_scheme;
        report.drift = weight_drift(*before, *after);
        report.drift->step = run.checkpoint.step;
    }
    report.checkpoint = std::move(run.checkpoint);
    return report;
}

}  // namespace encbridge
