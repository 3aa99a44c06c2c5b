#include "encbridge/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "encbridge/random.hpp"

namespace encbridge {

Sentence tokenize(std::string_view text) {
    Sentence out;
    std::size_t i = 0;
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

std::string detokenize(const Sentence& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

// ---- Vocab ----------------------------------------------------------------

Vocab::Vocab() {
    for (auto r : kReserved) {
        index_.emplace(std::string(r), static_cast<TokenId>(tokens_.size()));
        tokens_.emplace_back(r);
    }
}

Vocab Vocab::from_pairs(const std::vector<SentencePair>& pairs) {
    Vocab v;
    for (const auto& p : pairs) {
        for (const auto& t : p.src) v.add(t);
        for (const auto& t : p.tgt) v.add(t);
    }
    return v;
}

TokenId Vocab::add(const std::string& token) {
    auto [it, inserted] = index_.emplace(token, static_cast<TokenId>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
}

TokenId Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[id];
}

std::vector<TokenId> Vocab::encode(const Sentence& s) const {
    std::vector<TokenId> ids;
    ids.reserve(s.size());
    for (const auto& t : s) ids.push_back(id(t));
    return ids;
}

Sentence Vocab::decode(const std::vector<TokenId>& ids) const {
    Sentence out;
    for (TokenId i : ids)
        if (i >= static_cast<TokenId>(kReserved.size())) out.push_back(token(i));
    return out;
}

std::string Vocab::to_text() const {
    std::string out;
    for (std::size_t i = kReserved.size(); i < tokens_.size(); ++i) out += tokens_[i] + '\n';
    return out;
}

Vocab Vocab::from_text(const std::string& text) {
    Vocab v;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || v.contains(line))
            throw std::runtime_error("vocab line " + std::to_string(lineno) + ": empty or duplicate token");
        v.add(line);
    }
    return v;
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << to_text();
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_text(ss.str());
}

// ---- synthetic tasks ------------------------------------------------------

std::string_view task_name(SyntheticTask t) {
    switch (t) {
        case SyntheticTask::Copy: return "copy";
        case SyntheticTask::Reverse: return "reverse";
        case SyntheticTask::Subst: return "subst";
    }
    return "unknown";
}

std::optional<SyntheticTask> parse_task(std::string_view name) {
    for (auto t : {SyntheticTask::Copy, SyntheticTask::Reverse, SyntheticTask::Subst})
        if (task_name(t) == name) return t;
    return std::nullopt;
}

namespace {
std::vector<std::string> letters(char first) {
    std::vector<std::string> out;
    for (char c = first; c < first + 26; ++c) out.emplace_back(1, c);
    return out;
}
}  // namespace

const std::vector<std::string>& source_alphabet() {
    static const auto a = letters('a');
    return a;
}

const std::vector<std::string>& target_alphabet() {
    static const auto a = letters('A');
    return a;
}

SubstMapping make_subst_mapping(std::uint64_t mapping_seed) {
    std::vector<std::string> targets = target_alphabet();
    Rng rng(mapping_seed);
    rng.shuffle(std::span<std::string>(targets));
    SubstMapping m;
    for (std::size_t i = 0; i < targets.size(); ++i) m.emplace(source_alphabet()[i], targets[i]);
    return m;
}

Sentence apply_mapping(const SubstMapping& mapping, const Sentence& src) {
    Sentence out;
    out.reserve(src.size());
    for (const auto& t : src) {
        auto it = mapping.find(t);
        if (it == mapping.end()) throw std::out_of_range("no substitution for token '" + t + "'");
        out.push_back(it->second);
    }
    return out;
}

Vocab synthetic_vocab() {
    Vocab v;
    for (const auto& t : source_alphabet()) v.add(t);
    for (const auto& t : target_alphabet()) v.add(t);
    return v;
}

std::vector<SentencePair> gen_synthetic(SyntheticTask task, std::size_t n_pairs, std::uint64_t seed,
                                        LengthRange lengths, const SubstMapping& mapping) {
    if (lengths.min == 0 || lengths.min > lengths.max)
        throw std::invalid_argument("invalid length range");
    const auto& alphabet = source_alphabet();
    Rng rng(seed);
    std::vector<SentencePair> out;
    out.reserve(n_pairs);
    for (std::size_t i = 0; i < n_pairs; ++i) {
        const std::size_t len = lengths.min + rng.below(lengths.max - lengths.min + 1);
        SentencePair p;
        for (std::size_t j = 0; j < len; ++j) p.src.push_back(alphabet[rng.below(alphabet.size())]);
        switch (task) {
            case SyntheticTask::Copy: p.tgt = p.src; break;
            case SyntheticTask::Reverse: p.tgt.assign(p.src.rbegin(), p.src.rend()); break;
            case SyntheticTask::Subst: p.tgt = apply_mapping(mapping, p.src); break;
        }
        out.push_back(std::move(p));
    }
    return out;
}

// ---- TSV ------------------------------------------------------------------

std::vector<SentencePair> parse_tsv(std::string_view text) {
    std::vector<SentencePair> out;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos)
            throw std::runtime_error("tsv line " + std::to_string(lineno) + ": expected 2 tab-separated columns");
        out.push_back({tokenize(line.substr(0, tab)), tokenize(line.substr(tab + 1))});
    }
    return out;
}

std::vector<SentencePair> load_tsv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_tsv(ss.str());
}

void save_tsv(const std::filesystem::path& path, const std::vector<SentencePair>& pairs) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (const auto& p : pairs) os << detokenize(p.src) << '\t' << detokenize(p.tgt) << '\n';
}

// ---- batching -------------------------------------------------------------

ParallelBatch make_batch(const std::vector<const SentencePair*>& pairs, const Vocab& vocab) {
    ParallelBatch b;
    std::size_t src_len = 1, tgt_len = 1;
    for (const auto* p : pairs) {
        src_len = std::max(src_len, p->src.size());
        tgt_len = std::max(tgt_len, p->tgt.size() + 1);
    }
    const std::size_t n = pairs.size();
    b.src = {n, src_len, std::vector<TokenId>(n * src_len, Vocab::kPad)};
    b.tgt_in = {n, tgt_len, std::vector<TokenId>(n * tgt_len, Vocab::kPad)};
    b.tgt_out = {n, tgt_len, std::vector<TokenId>(n * tgt_len, Vocab::kPad)};
    for (std::size_t r = 0; r < n; ++r) {
        const auto src = vocab.encode(pairs[r]->src);
        const auto tgt = vocab.encode(pairs[r]->tgt);
        std::copy(src.begin(), src.end(), b.src.ids.begin() + r * src_len);
        b.tgt_in.ids[r * tgt_len] = Vocab::kBos;
        std::copy(tgt.begin(), tgt.end(), b.tgt_in.ids.begin() + r * tgt_len + 1);
        std::copy(tgt.begin(), tgt.end(), b.tgt_out.ids.begin() + r * tgt_len);
        b.tgt_out.ids[r * tgt_len + tgt.size()] = Vocab::kEos;
        b.target_tokens += tgt.size() + 1;
    }
    return b;
}

namespace {
std::vector<ParallelBatch> cut_batches(const std::vector<SentencePair>& pairs,
                                       const std::vector<std::size_t>& order, const Vocab& vocab,
                                       std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
    std::vector<ParallelBatch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::vector<const SentencePair*> chunk;
        for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i)
            chunk.push_back(&pairs[order[i]]);
        out.push_back(make_batch(chunk, vocab));
    }
    return out;
}
}  // namespace

std::vector<ParallelBatch> make_batches(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                                        std::size_t batch_size, std::uint64_t seed) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    return cut_batches(pairs, order, vocab, batch_size);
}

std::vector<ParallelBatch> make_ordered_batches(const std::vector<SentencePair>& pairs,
                                                const Vocab& vocab, std::size_t batch_size) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    return cut_batches(pairs, order, vocab, batch_size);
}

}  // namespace encbridge
