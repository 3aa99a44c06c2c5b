#pragma once

#include <string>
#include <vector>

#include "encbridge/data.hpp"
#include "encbridge/model.hpp"

namespace encbridge {

struct BleuReport {
    double bleu = 0;  // percent, 0..100
    std::vector<double> precisions;  // p1..pN
    double brevity_penalty = 1;
    std::size_t hyp_length = 0;
    std::size_t ref_length = 0;

    /// "bleu,p1,p2,p3,p4,bp" header and the matching row.
    static std::string csv_header(std::size_t max_order = 4);
    std::string csv_row() const;
};

/// Corpus BLEU with clipped n-gram counts summed over the corpus. No
/// smoothing: any zero precision yields 0. Throws std::invalid_argument for
/// an empty corpus or mismatched list lengths.
BleuReport corpus_bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
                       std::size_t max_order = 4);

/// Token-weighted mean cross-entropy over all non-pad targets; records no
/// graph and leaves parameter gradients untouched.
template <typename T>
double evaluate_loss(const Model<T>& model, const std::vector<ParallelBatch>& batches);

struct EvalResult {
    double evaluate_loss = 0;
    BleuReport bleu;
    std::vector<Sentence> hypotheses;
};

/// Loss over the pairs plus greedy-decoded corpus BLEU against their targets.
/// Decoding allows up to 2 * source length + 4 tokens.
EvalResult evaluate(const Model<float>& model, const Vocab& vocab, const std::vector<SentencePair>& pairs,
                    std::size_t batch_size = 64);

}  // namespace encbridge
