#pragma once

// Vocabulary, synthetic parallel tasks, TSV corpora and batching.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "encbridge/model.hpp"

namespace encbridge {

using Sentence = std::vector<std::string>;

struct SentencePair {
    Sentence src;
    Sentence tgt;
    bool operator==(const SentencePair&) const = default;
};

/// Splits on runs of ASCII whitespace.
Sentence tokenize(std::string_view text);
/// Joins tokens with single spaces.
std::string detokenize(const Sentence& tokens);

/// Token <-> id map. Ids 0..3 are reserved for pad, bos, eos and unk; regular
/// tokens follow in insertion order.
class Vocab {
   public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kBos = 1;
    static constexpr TokenId kEos = 2;
    static constexpr TokenId kUnk = 3;
    static constexpr std::array<std::string_view, 4> kReserved{"<pad>", "<s>", "</s>", "<unk>"};

    Vocab();
    /// Adds tokens in order of first appearance.
    static Vocab from_pairs(const std::vector<SentencePair>& pairs);

    /// Returns the existing id when the token is already present.
    TokenId add(const std::string& token);
    TokenId id(const std::string& token) const;  // kUnk when absent
    const std::string& token(TokenId id) const;
    std::size_t size() const { return tokens_.size(); }
    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    std::vector<TokenId> encode(const Sentence& s) const;
    /// Drops reserved ids.
    Sentence decode(const std::vector<TokenId>& ids) const;

    /// One regular token per line; line i holds id i + 4.
    std::string to_text() const;
    static Vocab from_text(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

   private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

enum class SyntheticTask { Copy, Reverse, Subst };

std::string_view task_name(SyntheticTask t);
std::optional<SyntheticTask> parse_task(std::string_view name);

/// Source alphabet a..z; the subst task maps onto the disjoint alphabet A..Z.
const std::vector<std::string>& source_alphabet();
const std::vector<std::string>& target_alphabet();

/// Bijection from the source alphabet onto the target alphabet.
using SubstMapping = std::map<std::string, std::string>;

inline constexpr std::uint64_t kDefaultMappingSeed = 20240229;

SubstMapping make_subst_mapping(std::uint64_t mapping_seed = kDefaultMappingSeed);
/// Throws std::out_of_range for tokens outside the mapping.
Sentence apply_mapping(const SubstMapping& mapping, const Sentence& src);

/// Reserved ids + source alphabet + target alphabet, identical for every task.
Vocab synthetic_vocab();

struct LengthRange {
    std::size_t min = 3;
    std::size_t max = 8;
};

/// Pure function of its arguments. Sources are uniform over the source
/// alphabet with lengths uniform in the range.
std::vector<SentencePair> gen_synthetic(SyntheticTask task, std::size_t n_pairs, std::uint64_t seed,
                                        LengthRange lengths,
                                        const SubstMapping& mapping = make_subst_mapping());

/// Two-column tab separated corpus. Blank lines are skipped; any other line
/// without exactly two columns throws std::runtime_error naming the line.
std::vector<SentencePair> load_tsv(const std::filesystem::path& path);
std::vector<SentencePair> parse_tsv(std::string_view text);
void save_tsv(const std::filesystem::path& path, const std::vector<SentencePair>& pairs);

struct ParallelBatch {
    TokenMatrix src;
    TokenMatrix tgt_in;   // bos + target
    TokenMatrix tgt_out;  // target + eos
    std::size_t target_tokens = 0;  // non-pad entries of tgt_out
};

/// Builds one padded batch from the pairs in the given order.
ParallelBatch make_batch(const std::vector<const SentencePair*>& pairs, const Vocab& vocab);

/// Shuffles with the seed, cuts batches of batch_size (last may be short) and
/// pads each to its own maximum lengths. Unknown tokens map to unk.
std::vector<ParallelBatch> make_batches(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                                        std::size_t batch_size, std::uint64_t seed);

/// Same as make_batches but keeps corpus order.
std::vector<ParallelBatch> make_ordered_batches(const std::vector<SentencePair>& pairs,
                                                const Vocab& vocab, std::size_t batch_size);

}  // namespace encbridge
