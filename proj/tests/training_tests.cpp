// Desk-scale training runs. Slow: a few minutes on one core.

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "encbridge/train.hpp"

using namespace encbridge;

namespace {

ExperimentData task_data(SyntheticTask task) {
    const auto all = gen_synthetic(task, 5500, 7, {3, 8});
    ExperimentData d;
    d.vocab = synthetic_vocab();
    d.train.assign(all.begin(), all.begin() + 5000);
    d.eval.assign(all.begin() + 5000, all.end());
    return d;
}

ExperimentOptions defaults(std::size_t steps) {
    ExperimentOptions o;
    o.train.steps = steps;
    return o;
}

double tail_mean(const std::vector<double>& v, std::size_t n) {
    return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(n), v.end(), 0.0) / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("training") {
    TEST_CASE("copy task converges and decodes") {
        const auto data = task_data(SyntheticTask::Copy);
        const auto r = run_experiment(0, data, nullptr, defaults(2000));
        for (double l : r.losses) REQUIRE(std::isfinite(l));
        // single-batch losses are noisy; average the last ten steps
        const double final_loss = tail_mean(r.losses, 10);
        MESSAGE("copy: final loss " << final_loss << ", BLEU " << r.bleu.bleu);
        CHECK(final_loss < 0.1);

        const Model<float> model = r.checkpoint.to_model();
        const auto batch = make_ordered_batches({{{"a", "b", "c"}, {"a", "b", "c"}}}, data.vocab, 1)[0];
        const auto out = greedy_decode(model, batch.src, 10);
        CHECK(detokenize(data.vocab.decode(out[0])) == "a b c");
    }

    TEST_CASE("direct fine-tuning on the base task does not degrade it") {
        const auto data = task_data(SyntheticTask::Subst);
        const auto base = run_experiment(0, data, nullptr, defaults(2000));
        const auto tuned = run_experiment(2, data, &base.checkpoint, defaults(500));
        MESSAGE("base BLEU " << base.bleu.bleu << ", fine-tuned BLEU " << tuned.bleu.bleu);
        CHECK(base.bleu.bleu > 90);
        CHECK(tuned.bleu.bleu >= base.bleu.bleu - 1.0);
    }
}
