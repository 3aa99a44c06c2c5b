#include "encbridge/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "encbridge/bridge_init.hpp"
#include "encbridge/random.hpp"

namespace encbridge {

ModelConfig GradCheckOptions::tiny_config() {
    ModelConfig c;
    c.vocab_size = 12;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 16;
    c.n_enc_layers = 2;
    c.n_dec_layers = 2;
    c.max_seq_len = 16;
    return c;
}

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

TokenMatrix random_tokens(Rng& rng, const ModelConfig& c, std::size_t rows, std::size_t cols, bool pad_tail) {
    TokenMatrix m{rows, cols, std::vector<TokenId>(rows * cols)};
    const TokenId first = 3;  // above pad/bos/eos
    for (auto& id : m.ids) id = first + static_cast<TokenId>(rng.below(c.vocab_size - first));
    // Pad the tail of the last row so masking paths are exercised.
    if (pad_tail && rows > 1 && cols > 2) m.ids[rows * cols - 1] = c.pad_id;
    return m;
}

}  // namespace

GradCheckReport gradcheck_model(const GradCheckOptions& o) {
    ModelConfig cfg = o.config;
    cfg.bridge_enabled = false;
    Model<double> model(cfg);
    model.init_body(BodyInit::Xavier, o.seed);
    model.set_bridge(make_bridge<double>({InitVariant::RandomXavier, mix_seed(o.seed, 1)}, cfg.n_enc_layers,
                                         cfg.n_dec_layers, cfg.d_model));
    // Move every scalar (biases, gains, offsets included) off its init value.
    Rng rng(mix_seed(o.seed, 2));
    for (auto& [_, t] : model.params())
        for (auto& v : t.data()) v += rng.uniform(-0.1, 0.1);

    const TokenMatrix src = random_tokens(rng, cfg, o.batch, o.src_len, true);
    const TokenMatrix tgt_in = random_tokens(rng, cfg, o.batch, o.tgt_len, true);
    TokenMatrix tgt_out = random_tokens(rng, cfg, o.batch, o.tgt_len, true);

    auto loss_value = [&]() {
        NoGradGuard no_grad;
        return cross_entropy(model.forward(src, tgt_in), tgt_out.ids, cfg.pad_id).item();
    };

    model.zero_grad();
    {
        GraphScope<double> scope;
        const auto loss = cross_entropy(model.forward(src, tgt_in), tgt_out.ids, cfg.pad_id);
        scope.graph().backward(loss);
    }

    GradCheckReport report;
    for (auto& [name, t] : model.params()) {
        ParamCheck pc{name, t.numel(), 0, 0};
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        auto data = t.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + o.step;
            const double up = loss_value();
            data[i] = orig - o.step;
            const double down = loss_value();
            data[i] = orig;
            const double numeric = (up - down) / (2 * o.step);
            pc.max_rel_err = std::max(pc.max_rel_err, relative_error(analytic[i], numeric, o.floor));
            pc.max_abs_grad = std::max(pc.max_abs_grad, std::abs(analytic[i]));
        }
        if (pc.max_rel_err >= report.max_rel_err) {
            report.max_rel_err = pc.max_rel_err;
            report.worst_param = name;
        }
        report.params.push_back(std::move(pc));
    }
    return report;
}

}  // namespace encbridge
