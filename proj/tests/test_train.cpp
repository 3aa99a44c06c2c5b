#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "encbridge/train.hpp"

using namespace encbridge;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 32;
    c.n_enc_layers = 2;
    c.n_dec_layers = 2;
    c.max_seq_len = 16;
    return c;
}

TrainConfig short_run(std::size_t steps) {
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch_size = 8;
    cfg.lr = 1e-3;
    return cfg;
}

ExperimentData small_data() {
    const auto all = gen_synthetic(SyntheticTask::Subst, 96, 3, {2, 5});
    ExperimentData d;
    d.vocab = synthetic_vocab();
    d.train.assign(all.begin(), all.begin() + 80);
    d.eval.assign(all.begin() + 80, all.end());
    return d;
}

Checkpoint base_checkpoint() {
    ExperimentOptions o;
    o.model = tiny();
    o.train = short_run(20);
    return run_experiment(0, small_data(), nullptr, o).checkpoint;
}

std::map<std::string, Tensor<float>> one_param(float value, float grad) {
    std::map<std::string, Tensor<float>> p;
    p.emplace("w", Tensor<float>({1}, {value}, true));
    p.at("w").mutable_grad()[0] = grad;
    return p;
}

}  // namespace

TEST_SUITE("train") {
    TEST_CASE("train config validation") {
        TrainConfig c;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);  // neither steps nor epochs
        c.steps = 10;
        c.validate();
        c.epochs = 1;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c.epochs.reset();
        c.lr = 0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    }

    TEST_CASE("epoch accounting uses ceil division") {
        TrainConfig c;
        c.epochs = 1;
        c.batch_size = 16;
        CHECK(total_steps(c, 1000) == 63);
        c.epochs = 3;
        CHECK(total_steps(c, 32) == 6);
    }

    TEST_CASE("adam first step moves by lr") {
        for (float g : {0.3f, -5.0f, 1e-3f}) {
            auto p = one_param(2.0f, g);
            AdamState s;
            adam_step(p, s, 0.01, {});
            CHECK(p.at("w").data()[0] == doctest::Approx(2.0 - 0.01 * (g > 0 ? 1 : -1)).epsilon(1e-5));
            CHECK(s.step == 1);
        }
    }

    TEST_CASE("adam with zero gradient is a fixed point") {
        auto p = one_param(1.5f, 0.0f);
        p.emplace("frozen", Tensor<float>({2}, {1, 2}, false));
        AdamState s;
        for (int i = 0; i < 5; ++i) adam_step(p, s, 0.1, {});
        CHECK(p.at("w").data()[0] == 1.5f);
        CHECK(p.at("frozen").data()[1] == 2.0f);
    }

    TEST_CASE("adam rejects non-finite gradients without touching params") {
        auto p = one_param(1.0f, std::numeric_limits<float>::quiet_NaN());
        AdamState s;
        CHECK_THROWS_AS(adam_step(p, s, 0.1, {}), NonFiniteError);
        CHECK(p.at("w").data()[0] == 1.0f);
        CHECK(s.step == 0);
    }

    TEST_CASE("gradient clipping") {
        std::map<std::string, Tensor<float>> p;
        p.emplace("a", Tensor<float>({2}, {0, 0}, true));
        p.at("a").mutable_grad()[0] = 3;
        p.at("a").mutable_grad()[1] = 4;
        CHECK(clip_grad_norm(p, 1.0) == doctest::Approx(5.0));
        CHECK(p.at("a").grad()[0] == doctest::Approx(0.6));
        CHECK(p.at("a").grad()[1] == doctest::Approx(0.8));
        CHECK(clip_grad_norm(p, 10.0) == doctest::Approx(1.0));
        CHECK(p.at("a").grad()[0] == doctest::Approx(0.6));
    }

    TEST_CASE("training is deterministic and decreases loss") {
        const auto d = small_data();
        auto run = [&] {
            ModelConfig c = tiny();
            return train_run(retrain_model(c, short_run(30)), d.train, d.vocab, short_run(30));
        };
        const auto a = run();
        const auto b = run();
        CHECK(a.losses.size() == 30);
        CHECK(a.losses == b.losses);
        CHECK(a.checkpoint.serialize() == b.checkpoint.serialize());
        CHECK(a.losses.back() < a.losses.front());
        CHECK(a.checkpoint.step == 30);
    }

    TEST_CASE("epochs drive the step count") {
        const auto d = small_data();
        TrainConfig cfg = short_run(1);
        cfg.steps.reset();
        cfg.epochs = 2;
        const auto r = train_run(retrain_model(tiny(), cfg), d.train, d.vocab, cfg);
        CHECK(r.losses.size() == 20);  // 80 pairs / 8 per batch, twice
    }

    TEST_CASE("training input errors") {
        const auto d = small_data();
        CHECK_THROWS_AS((void)train_run(retrain_model(tiny(), short_run(1)), {}, d.vocab, short_run(1)),
                        std::invalid_argument);
        ModelConfig other = tiny();
        other.vocab_size = 30;
        CHECK_THROWS_AS((void)train_run(retrain_model(other, short_run(1)), d.train, d.vocab, short_run(1)),
                        std::invalid_argument);
    }

    TEST_CASE("non-finite loss halts with a diagnostic checkpoint") {
        const auto d = small_data();
        Model<float> m = retrain_model(tiny(), short_run(3));
        m.param("out.bias").data()[5] = std::numeric_limits<float>::infinity();
        try {
            (void)train_run(std::move(m), d.train, d.vocab, short_run(3));
            FAIL("expected TrainingHalted");
        } catch (const TrainingHalted& h) {
            CHECK(std::string(h.what()).find("step 0") != std::string::npos);
            CHECK(h.losses().size() == 1);
            CHECK(h.diagnostic().params.count("out.bias") == 1);
        }
    }

    TEST_CASE("checkpoint round trip is bit-identical") {
        const auto d = small_data();
        ModelConfig c = tiny();
        TrainConfig cfg = short_run(5);
        cfg.bridge_init = InitScheme{InitVariant::RandomXavier, 3};
        auto r = train_run(retrain_model(c, cfg), d.train, d.vocab, cfg);
        const auto path = fs::temp_directory_path() / "encbridge_tests" / "rt.ckpt";
        fs::create_directories(path.parent_path());
        r.checkpoint.save(path);
        const Checkpoint back = Checkpoint::load(path);
        CHECK(back.serialize() == r.checkpoint.serialize());
        CHECK(back.loss_history.size() == 5);
        CHECK(back.adam_m.size() == r.model.params().size());
        CHECK(Vocab::from_text(back.vocab_text) == d.vocab);

        const Model<float> reloaded = back.to_model();
        const auto batch = make_ordered_batches(d.eval, d.vocab, 16)[0];
        const auto x = r.model.forward(batch.src, batch.tgt_in);
        const auto y = reloaded.forward(batch.src, batch.tgt_in);
        CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
    }

    TEST_CASE("corrupt checkpoints name the offending record") {
        Model<float> m(tiny());
        Checkpoint ck = Checkpoint::from_model(m);
        auto bytes = ck.serialize();

        CHECK_THROWS_AS((void)Checkpoint::deserialize({bytes.begin(), bytes.begin() + 40}), CheckpointError);
        auto bad_magic = bytes;
        bad_magic[0] = 'X';
        CHECK_THROWS_AS((void)Checkpoint::deserialize(bad_magic), CheckpointError);

        Checkpoint missing = ck;
        missing.params.erase("dec.1.ffn.w2");
        try {
            (void)missing.to_model();
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("dec.1.ffn.w2") != std::string::npos);
        }

        Checkpoint reshaped = ck;
        reshaped.params.at("enc.0.ln1.gain") = Tensor<float>::zeros({3});
        try {
            (void)Checkpoint::deserialize(reshaped.serialize()).to_model();
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("enc.0.ln1.gain") != std::string::npos);
        }

        // Point one record past the payload.
        const std::string name = "out.bias";
        auto corrupt = bytes;
        const auto it = std::search(corrupt.begin(), corrupt.end(), name.begin(), name.end());
        REQUIRE(it != corrupt.end());
        // name, u32 rank (1), u64 dim, u64 offset
        const std::size_t offset_at = static_cast<std::size_t>(it - corrupt.begin()) + name.size() + 4 + 8;
        for (std::size_t i = 0; i < 8; ++i) corrupt[offset_at + i] = 0x7f;
        try {
            (void)Checkpoint::deserialize(corrupt);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find(name) != std::string::npos);
        }
    }

    TEST_CASE("experiment configs") {
        TrainConfig base;
        base.steps = 1;
        CHECK(experiment_config(0, base).mode == TrainMode::Retrain);
        CHECK_FALSE(experiment_config(0, base).bridge_init.has_value());
        CHECK(experiment_config(1, base).bridge_init->variant == InitVariant::OriginalConnection);
        CHECK(experiment_config(1, base).mode == TrainMode::Finetune);
        CHECK_FALSE(experiment_config(2, base).bridge_init.has_value());
        CHECK(experiment_config(3, base).bridge_init->variant == InitVariant::Gca);
        CHECK(experiment_config(4, base).mode == TrainMode::Retrain);
        CHECK(experiment_config(4, base).bridge_init->variant == InitVariant::OriginalConnection);
        CHECK_THROWS_AS((void)experiment_config(5, base), std::invalid_argument);
        for (int id : {1, 2, 3}) CHECK(experiment_needs_base(id));
        for (int id : {0, 4}) CHECK_FALSE(experiment_needs_base(id));
    }

    TEST_CASE("fine-tune experiments need a base") {
        ExperimentOptions o;
        o.model = tiny();
        o.train = short_run(1);
        for (int id : {1, 2, 3}) {
            try {
                (void)run_experiment(id, small_data(), nullptr, o);
                FAIL("expected invalid_argument");
            } catch (const std::invalid_argument& e) {
                CHECK(std::string(e.what()).find("--base") != std::string::npos);
            }
        }
    }

    TEST_CASE("identity-bridge fine-tune starts at the base loss") {
        const Checkpoint base = base_checkpoint();
        const auto d = small_data();
        TrainConfig cfg = experiment_config(1, short_run(1));
        const Model<float> bridged = finetune_model(base, cfg);
        CHECK(bridged.config().bridge_enabled);
        const Model<float> stock = base.to_model();
        const auto batch = epoch_batches(d.train, d.vocab, cfg, 0)[0];
        const double stock_loss = evaluate_loss(stock, {batch});
        const auto r = train_run(bridged.clone(), d.train, d.vocab, cfg);
        CHECK(std::abs(r.losses[0] - stock_loss) < 1e-5);
    }

    TEST_CASE("freeze-base trains only the bridge") {
        const Checkpoint base = base_checkpoint();
        const auto d = small_data();
        TrainConfig cfg = experiment_config(3, short_run(3));
        cfg.freeze_base = true;
        const auto r = train_run(finetune_model(base, cfg), d.train, d.vocab, cfg);
        const Model<float> before = base.to_model();
        for (const auto& [name, t] : before.params()) {
            const auto& after = r.model.param(name);
            CHECK_MESSAGE(std::equal(t.data().begin(), t.data().end(), after.data().begin()), name);
        }
        const auto gca = init_gca<float>(2, 2, 16);
        CHECK_FALSE(std::equal(gca.per_decoder_layer[0].data().begin(), gca.per_decoder_layer[0].data().end(),
                               r.model.param("bridge.0").data().begin()));

        TrainConfig no_bridge = short_run(1);
        no_bridge.freeze_base = true;
        CHECK_THROWS_AS((void)finetune_model(base, no_bridge), std::invalid_argument);
    }

    TEST_CASE("experiment report") {
        const Checkpoint base = base_checkpoint();
        ExperimentOptions o;
        o.model = tiny();
        o.train = short_run(4);
        const auto r = run_experiment(3, small_data(), &base, o);
        CHECK(r.id == 3);
        CHECK(r.losses.size() == 4);
        REQUIRE(r.initial_norms);
        REQUIRE(r.final_norms);
        REQUIRE(r.drift);
        CHECK(r.initial_norms->init_scheme == "gca");
        CHECK(r.initial_norms->at(0, 1) == doctest::Approx(4.0));  // sqrt(16)
        CHECK(r.final_norms->step == 4);
        CHECK(ExperimentReport::csv_header() == "experiment,evaluate_loss,bleu");
        CHECK(r.csv_row().rfind("3,", 0) == 0);

        const auto csv = loss_csv(r.losses);
        CHECK(csv.rfind("step,loss\n0,", 0) == 0);
    }
}
