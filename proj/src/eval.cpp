#include "encbridge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

namespace encbridge {

namespace {

using NGramCounts = std::map<std::vector<std::string>, std::size_t>;

NGramCounts count_ngrams(const Sentence& s, std::size_t n) {
    NGramCounts counts;
    if (s.size() < n) return counts;
    for (std::size_t i = 0; i + n <= s.size(); ++i)
        ++counts[std::vector<std::string>(s.begin() + i, s.begin() + i + n)];
    return counts;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string BleuReport::csv_header(std::size_t max_order) {
    std::string h = "bleu";
    for (std::size_t n = 1; n <= max_order; ++n) h += ",p" + std::to_string(n);
    return h + ",bp";
}

std::string BleuReport::csv_row() const {
    std::string row = fmt(bleu);
    for (double p : precisions) row += "," + fmt(p);
    return row + "," + fmt(brevity_penalty);
}

BleuReport corpus_bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
                       std::size_t max_order) {
    if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
    if (hypotheses.size() != references.size())
        throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                                    std::to_string(references.size()) + " references");
    if (max_order == 0) throw std::invalid_argument("corpus_bleu: max_order must be positive");

    std::vector<std::size_t> matched(max_order, 0), possible(max_order, 0);
    BleuReport r;
    for (std::size_t s = 0; s < hypotheses.size(); ++s) {
        r.hyp_length += hypotheses[s].size();
        r.ref_length += references[s].size();
        for (std::size_t n = 1; n <= max_order; ++n) {
            const auto hyp = count_ngrams(hypotheses[s], n);
            const auto ref = count_ngrams(references[s], n);
            for (const auto& [gram, c] : hyp) {
                possible[n - 1] += c;
                auto it = ref.find(gram);
                if (it != ref.end()) matched[n - 1] += std::min(c, it->second);
            }
        }
    }
    double log_sum = 0;
    bool any_zero = false;
    for (std::size_t n = 0; n < max_order; ++n) {
        const double p = possible[n] ? static_cast<double>(matched[n]) / static_cast<double>(possible[n]) : 0.0;
        r.precisions.push_back(p);
        if (p == 0) any_zero = true;
        else log_sum += std::log(p);
    }
    if (r.hyp_length == 0)
        r.brevity_penalty = 0;
    else if (r.hyp_length < r.ref_length)
        r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length));
    r.bleu = any_zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / static_cast<double>(max_order));
    // exp(mean log) can overshoot 1 by an ulp when every precision is 1.
    r.bleu = std::clamp(r.bleu, 0.0, 100.0);
    return r;
}

template <typename T>
double evaluate_loss(const Model<T>& model, const std::vector<ParallelBatch>& batches) {
    if (batches.empty()) throw std::invalid_argument("evaluate_loss: no batches");
    NoGradGuard no_grad;
    double total = 0;
    std::size_t count = 0;
    for (const auto& b : batches) {
        const auto logits = model.forward(b.src, b.tgt_in);
        const auto nll = nll_total(logits, b.tgt_out.ids, model.config().pad_id);
        total += nll.sum;
        count += nll.count;
    }
    if (count == 0) throw std::domain_error("evaluate_loss: every target is padding");
    return total / static_cast<double>(count);
}

EvalResult evaluate(const Model<float>& model, const Vocab& vocab, const std::vector<SentencePair>& pairs,
                    std::size_t batch_size) {
    if (pairs.empty()) throw std::invalid_argument("evaluate: no pairs");
    EvalResult out;
    const auto batches = make_ordered_batches(pairs, vocab, batch_size);
    out.evaluate_loss = evaluate_loss(model, batches);
    std::vector<Sentence> refs;
    for (const auto& b : batches) {
        const auto decoded = greedy_decode(model, b.src, 2 * b.src.cols + 4);
        for (const auto& ids : decoded) out.hypotheses.push_back(vocab.decode(ids));
    }
    for (const auto& p : pairs) refs.push_back(p.tgt);
    out.bleu = corpus_bleu(out.hypotheses, refs);
    return out;
}

template double evaluate_loss<float>(const Model<float>&, const std::vector<ParallelBatch>&);
template double evaluate_loss<double>(const Model<double>&, const std::vector<ParallelBatch>&);

}  // namespace encbridge
