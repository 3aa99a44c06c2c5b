// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 2 7 9      run a subset

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "bleu_oracle.hpp"
#include "encbridge/analysis.hpp"
#include "encbridge/bridge_init.hpp"
#include "encbridge/gradcheck.hpp"
#include "encbridge/random.hpp"
#include "encbridge/train.hpp"

using namespace encbridge;
using namespace encbridge::testing;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

TokenMatrix random_tokens(Rng& rng, std::size_t rows, std::size_t cols, const ModelConfig& c) {
    TokenMatrix m{rows, cols, std::vector<TokenId>(rows * cols)};
    for (auto& id : m.ids) id = 3 + static_cast<TokenId>(rng.below(c.vocab_size - 3));
    // ragged tail so padding masks are live
    for (std::size_t r = 0; r + 1 < rows; r += 2) m.ids[r * cols + cols - 1] = c.pad_id;
    return m;
}

Model<float> seeded_base(const ModelConfig& c, std::uint64_t seed) {
    Model<float> m(c);
    m.init_body(BodyInit::Xavier, seed);
    Rng rng(mix_seed(seed, 17));
    for (auto& [_, t] : m.params())
        for (auto& v : t.data()) v += static_cast<float>(rng.uniform(-0.05, 0.05));
    return m;
}

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// ---- criterion 1 -------------------------------------------------------------

Outcome identity_equivalence() {
    const auto t0 = Clock::now();
    ModelConfig c;  // d_model 64, 4/4 layers
    double worst = 0;
    for (std::uint64_t b = 0; b < 50; ++b) {
        const Model<float> stock = seeded_base(c, b);
        Model<float> bridged = stock.clone();
        bridged.set_bridge(init_original_connection<float>(c.n_enc_layers, c.n_dec_layers, c.d_model));
        Rng rng(mix_seed(b, 3));
        const std::size_t rows = 1 + rng.below(4);
        const auto src = random_tokens(rng, rows, 2 + rng.below(12), c);
        const auto tgt = random_tokens(rng, rows, 2 + rng.below(12), c);
        NoGradGuard ng;
        const auto x = stock.forward(src, tgt);
        const auto y = bridged.forward(src, tgt);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double a = x.data()[i], v = y.data()[i];
            worst = std::max(worst, std::abs(a - v) / std::max({std::abs(a), std::abs(v), 1e-6}));
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-5 && secs < 60,
            "50 batches, max rel err " + fmt("%.3g", worst) + ", " + fmt("%.1f", secs) + " s"};
}

// ---- criterion 2 -------------------------------------------------------------

Outcome gca_routing() {
    std::ostringstream detail;
    bool pass = true;
    for (std::size_t L : {6u, 4u}) {
        ModelConfig c;
        c.n_enc_layers = c.n_dec_layers = L;
        Model<float> m = seeded_base(c, L);
        m.set_bridge(init_gca<float>(L, L, c.d_model));
        Rng rng(L);
        const auto src = random_tokens(rng, 3, 9, c);
        NoGradGuard ng;
        const auto enc = m.encode(src);
        const auto bridge = m.bridge();
        std::size_t ok = 0;
        for (std::size_t i = 0; i < L; ++i) ok += bitwise_equal(bridge_forward(enc, *bridge, i), enc.layers[L - 1 - i]);
        pass = pass && ok == L;
        detail << L << "/" << L << ": " << ok << " of " << L << " layers bitwise equal; ";
    }
    return {pass, detail.str()};
}

// ---- criterion 3 -------------------------------------------------------------

Outcome paper_scale_shapes() {
    const auto t0 = Clock::now();
    ModelConfig c;
    c.d_model = 512;
    c.n_heads = 8;
    c.d_ff = 2048;
    c.n_enc_layers = c.n_dec_layers = 6;
    c.bridge_enabled = true;
    const Model<float> m(c);
    std::size_t matrices = 0, right_shape = 0, bridge_biases = 0;
    for (const auto& [name, t] : m.params()) {
        if (name.rfind("bridge.", 0) != 0) continue;
        if (t.rank() == 2) {
            ++matrices;
            right_shape += t.shape() == Shape{3072, 512};
        } else {
            ++bridge_biases;
        }
    }
    const double secs = seconds_since(t0);
    return {matrices == 6 && right_shape == 6 && bridge_biases == 0 && secs < 10,
            std::to_string(matrices) + " bridge matrices, " + std::to_string(right_shape) + " of shape 3072x512, " +
                std::to_string(bridge_biases) + " bridge bias tensors, " + fmt("%.2f", secs) + " s"};
}

// ---- criterion 4 -------------------------------------------------------------

Outcome gradient_check() {
    const auto t0 = Clock::now();
    const auto r = gradcheck_model({});
    const double secs = seconds_since(t0);
    std::size_t scalars = 0;
    for (const auto& p : r.params) scalars += p.count;
    return {r.max_rel_err < 1e-4 && secs < 120,
            std::to_string(scalars) + " scalars, max rel err " + fmt("%.3g", r.max_rel_err) + " (" + r.worst_param +
                "), " + fmt("%.1f", secs) + " s"};
}

// ---- criteria 5, 6 and 8 share the experiment battery ------------------------

ExperimentData battery_data() {
    const auto all = gen_synthetic(SyntheticTask::Subst, 5500, 7, {3, 8});
    ExperimentData d;
    d.vocab = synthetic_vocab();
    d.train.assign(all.begin(), all.begin() + 5000);
    d.eval.assign(all.begin() + 5000, all.end());
    return d;
}

ExperimentOptions battery_options(std::size_t steps) {
    ExperimentOptions o;
    o.train.steps = steps;
    o.train.seed = 1;
    return o;
}

struct Battery {
    ExperimentData data = battery_data();
    std::optional<ExperimentReport> exp0;
    std::optional<ExperimentReport> exp3;

    const ExperimentReport& base() {
        if (!exp0) exp0 = run_experiment(0, data, nullptr, battery_options(2000));
        return *exp0;
    }
    const ExperimentReport& gca() {
        if (!exp3) {
            const Checkpoint& b = base().checkpoint;
            exp3 = run_experiment(3, data, &b, battery_options(2000));
        }
        return *exp3;
    }
};

Outcome experiment_battery(Battery& battery) {
    const auto t0 = Clock::now();
    std::ostringstream detail;
    const auto& e0 = battery.base();
    const bool a = e0.bleu.bleu > 90;
    detail << "(a) exp0 BLEU " << fmt("%.2f", e0.bleu.bleu) << " loss " << fmt("%.4f", e0.evaluate_loss);

    // (b) the base checkpoint scored on the batch the fine-tune run starts with
    const Checkpoint& base = e0.checkpoint;
    const auto opts = battery_options(2000);
    const TrainConfig cfg1 = experiment_config(1, opts.train);
    const auto first_batch = epoch_batches(battery.data.train, battery.data.vocab, cfg1, 0).front();
    const double base_loss = evaluate_loss(base.to_model(), {first_batch});
    const auto e1 = run_experiment(1, battery.data, &base, opts);
    const double gap = std::abs(e1.losses.front() - base_loss);
    const bool b = gap < 1e-5;
    detail << "; (b) exp1 step-0 loss " << fmt("%.7f", e1.losses.front()) << " vs base " << fmt("%.7f", base_loss)
           << " (|diff| " << fmt("%.2g", gap) << "), exp1 BLEU " << fmt("%.2f", e1.bleu.bleu);

    ExperimentOptions o4 = opts;
    o4.train.body_init = BodyInit::Xavier;
    const auto e4 = run_experiment(4, battery.data, nullptr, o4);
    const bool c = e4.bleu.bleu > 80;
    detail << "; (c) exp4 BLEU " << fmt("%.2f", e4.bleu.bleu) << " loss " << fmt("%.4f", e4.evaluate_loss);

    const double secs = seconds_since(t0);
    detail << "; " << fmt("%.0f", secs) << " s";
    return {a && b && c && secs < 1200, detail.str()};
}

Outcome drift_direction(Battery& battery) {
    const auto& e3 = battery.gca();
    const auto& init = *e3.initial_norms;
    const auto& fin = *e3.final_norms;
    const std::size_t L = init.cols;
    double anti = 0, off = 0;
    std::size_t row = 0, col = 0;
    for (std::size_t i = 0; i < init.rows; ++i) {
        anti = std::max(anti, init.at(i, gca_source_layer(L, i)));
        for (std::size_t j = 0; j < L; ++j)
            if (j != gca_source_layer(L, i) && fin.at(i, j) > off) {
                off = fin.at(i, j);
                row = i;
                col = j;
            }
    }
    return {off > 0.05 * anti, "largest off-pattern block (dec " + std::to_string(row) + ", enc " +
                                   std::to_string(col) + ") norm " + fmt("%.4f", off) + " vs 5% of " +
                                   fmt("%.4f", anti) + " = " + fmt("%.4f", 0.05 * anti) + "; exp3 BLEU " +
                                   fmt("%.2f", e3.bleu.bleu)};
}

// ---- criterion 7 -------------------------------------------------------------

Outcome bleu_oracle() {
    Rng rng(2024);
    std::size_t agree = 0;
    for (int i = 0; i < 200; ++i) {
        const auto [h, r] = random_corpus(rng);
        agree += corpus_bleu(h, r).bleu == oracle_bleu(h, r);
    }
    const std::vector<Sentence> refs{{"a", "b", "c", "d", "e"}, {"f", "g", "h", "i"}};
    const double perfect = corpus_bleu(refs, refs).bleu;
    const double disjoint = corpus_bleu({{"p", "q", "r", "s"}, {"t", "u", "v", "w"}}, refs).bleu;
    return {agree == 200 && perfect == 100.0 && disjoint == 0.0,
            std::to_string(agree) + "/200 corpora exact, perfect " + fmt("%g", perfect) + ", disjoint " +
                fmt("%g", disjoint)};
}

// ---- criterion 8 -------------------------------------------------------------

Outcome determinism(Battery& battery) {
    std::ostringstream detail;
    bool pass = true;
    const Checkpoint& base = battery.base().checkpoint;
    for (int id : {0, 3, 4}) {
        const auto o = battery_options(150);
        const Checkpoint* b = experiment_needs_base(id) ? &base : nullptr;
        const auto x = run_experiment(id, battery.data, b, o);
        const auto y = run_experiment(id, battery.data, b, o);
        const bool same_loss = loss_csv(x.losses) == loss_csv(y.losses);
        const bool same_ckpt = x.checkpoint.serialize() == y.checkpoint.serialize();
        pass = pass && same_loss && same_ckpt;
        detail << "exp" << id << " loss csv " << (same_loss ? "identical" : "DIFFERS") << ", checkpoint "
               << (same_ckpt ? "identical" : "DIFFERS") << "; ";
    }
    detail << "exp0 full run reproduced: ";
    const auto again = run_experiment(0, battery.data, nullptr, battery_options(2000));
    const bool full = again.checkpoint.serialize() == base.serialize() &&
                      loss_csv(again.losses) == loss_csv(battery.base().losses);
    detail << (full ? "yes" : "NO");
    return {pass && full, detail.str()};
}

// ---- criterion 9 -------------------------------------------------------------

Outcome analysis_identities() {
    double worst = 0;
    for (int s = 0; s < 100; ++s) {
        Rng rng(s);
        const std::size_t enc = 1 + rng.below(6), dec = 1 + rng.below(6), d = 1 + rng.below(16);
        BridgeWeights<double> b{enc, d, {}};
        for (std::size_t i = 0; i < dec; ++i) {
            std::vector<double> v(enc * d * d);
            for (auto& x : v) x = rng.uniform(-2, 2);
            b.per_decoder_layer.emplace_back(Shape{enc * d, d}, v);
        }
        ModelConfig c;
        c.n_enc_layers = enc;
        c.n_dec_layers = dec;
        c.d_model = d;
        c.n_heads = 1;
        const auto m = block_norms(b, c);
        double blocks = 0, total = 0;
        for (double v : m.values) blocks += v * v;
        for (const auto& t : b.per_decoder_layer)
            for (double v : t.data()) total += v * v;
        worst = std::max(worst, std::abs(blocks - total) / std::max(1.0, total));
    }
    ModelConfig c;
    const auto ident = block_norms(init_original_connection<double>(4, 4, 64), c);
    bool exact = true;
    for (std::size_t i = 0; i < 4; ++i) exact = exact && ident.at(i, 3) == std::sqrt(64.0);
    ModelConfig big;
    big.d_model = 512;
    big.n_heads = 8;
    big.n_enc_layers = big.n_dec_layers = 6;
    const auto ident512 = block_norms(init_original_connection<double>(6, 6, 512), big);
    for (std::size_t i = 0; i < 6; ++i) exact = exact && ident512.at(i, 5) == std::sqrt(512.0);
    return {worst < 1e-5 && exact, "100 random bridges, max rel Pythagoras gap " + fmt("%.3g", worst) +
                                       ", identity block norm == sqrt(d_model) exactly: " + (exact ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
    auto selected = [&](int id) { return wanted.empty() || wanted.count(id); };

    Battery battery;
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, identity_equivalence},
        {2, gca_routing},
        {3, paper_scale_shapes},
        {4, gradient_check},
        {5, [&] { return experiment_battery(battery); }},
        {6, [&] { return drift_direction(battery); }},
        {7, bleu_oracle},
        {8, [&] { return determinism(battery); }},
        {9, analysis_identities},
    };

    int failures = 0;
    for (const auto& [id, run] : criteria) {
        if (!selected(id)) continue;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
