#include "encbridge/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "encbridge/bridge_init.hpp"
#include "encbridge/random.hpp"

namespace encbridge {

namespace {

constexpr double kNormEps = 1e-5;

std::uint64_t name_hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string layer_prefix(const char* side, std::size_t i) {
    return std::string(side) + "." + std::to_string(i) + ".";
}

std::string bridge_name(std::size_t i) { return "bridge." + std::to_string(i); }

bool is_bridge(const std::string& name) { return name.rfind("bridge.", 0) == 0; }

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

// ---- ModelConfig ----------------------------------------------------------

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (vocab_size == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0)
        fail("sizes must be positive");
    if (n_enc_layers == 0 || n_dec_layers == 0) fail("layer counts must be positive");
    if (d_model % n_heads != 0)
        fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
    for (TokenId id : {pad_id, bos_id, eos_id})
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) fail("special token id out of range");
    if (pad_id == bos_id || pad_id == eos_id || bos_id == eos_id) fail("pad/bos/eos ids must differ");
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "vocab_size=" << vocab_size << '\n'
       << "d_model=" << d_model << '\n'
       << "n_heads=" << n_heads << '\n'
       << "d_ff=" << d_ff << '\n'
       << "n_enc_layers=" << n_enc_layers << '\n'
       << "n_dec_layers=" << n_dec_layers << '\n'
       << "max_seq_len=" << max_seq_len << '\n'
       << "pad_id=" << pad_id << '\n'
       << "bos_id=" << bos_id << '\n'
       << "eos_id=" << eos_id << '\n'
       << "bridge_enabled=" << (bridge_enabled ? 1 : 0) << '\n';
    return os.str();
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    const auto kv = parse_key_values(text);
    ModelConfig c;
    auto get = [&](const char* key, auto& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        std::istringstream is(it->second);
        long long v = 0;
        if (!(is >> v)) throw std::invalid_argument(std::string("model config: bad value for ") + key);
        field = static_cast<std::remove_reference_t<decltype(field)>>(v);
    };
    get("vocab_size", c.vocab_size);
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("d_ff", c.d_ff);
    get("n_enc_layers", c.n_enc_layers);
    get("n_dec_layers", c.n_dec_layers);
    get("max_seq_len", c.max_seq_len);
    get("pad_id", c.pad_id);
    get("bos_id", c.bos_id);
    get("eos_id", c.eos_id);
    get("bridge_enabled", c.bridge_enabled);
    return c;
}

std::vector<std::uint8_t> TokenMatrix::valid_mask(TokenId pad_id) const {
    std::vector<std::uint8_t> m(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) m[i] = ids[i] != pad_id;
    return m;
}

template <typename T>
std::vector<T> positional_encoding(std::size_t max_len, std::size_t d_model) {
    std::vector<T> pe(max_len * d_model);
    for (std::size_t pos = 0; pos < max_len; ++pos)
        for (std::size_t i = 0; i < d_model; i += 2) {
            const double angle =
                static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / d_model);
            pe[pos * d_model + i] = static_cast<T>(std::sin(angle));
            if (i + 1 < d_model) pe[pos * d_model + i + 1] = static_cast<T>(std::cos(angle));
        }
    return pe;
}

// ---- bridge ---------------------------------------------------------------

namespace {

template <typename T>
void check_bridge(const BridgeWeights<T>& bridge, std::size_t n_enc_layers, std::size_t d_model) {
    if (bridge.n_enc_layers != n_enc_layers || bridge.d_model != d_model)
        throw DimensionError("bridge built for " + std::to_string(bridge.n_enc_layers) + " layers x " +
                             std::to_string(bridge.d_model) + " wide, encoder has " +
                             std::to_string(n_enc_layers) + " x " + std::to_string(d_model));
    const Shape want{n_enc_layers * d_model, d_model};
    for (const auto& m : bridge.per_decoder_layer)
        if (m.shape() != want)
            throw DimensionError("bridge matrix " + shape_str(m.shape()) + ", expected " + shape_str(want));
}

}  // namespace

template <typename T>
Tensor<T> bridge_forward(const EncoderOutputs<T>& enc, const BridgeWeights<T>& bridge,
                         std::size_t dec_layer) {
    if (enc.layers.empty()) throw DimensionError("bridge_forward: no encoder layers");
    check_bridge(bridge, enc.layers.size(), enc.layers[0].shape().back());
    if (dec_layer >= bridge.per_decoder_layer.size())
        throw std::out_of_range("bridge_forward: decoder layer " + std::to_string(dec_layer) +
                                " of " + std::to_string(bridge.per_decoder_layer.size()));
    return matmul(concat_last(enc.layers), bridge.per_decoder_layer[dec_layer]);
}

// ---- Model ----------------------------------------------------------------

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.d_model;
    const std::size_t ff = config_.d_ff;
    auto add = [&](const std::string& name, Shape shape) {
        params_.emplace(name, Tensor<T>::zeros(std::move(shape), true));
    };
    auto add_attention = [&](const std::string& p) {
        for (const char* w : {"wq", "wk", "wv", "wo"}) add(p + w, {d, d});
        for (const char* b : {"bq", "bk", "bv", "bo"}) add(p + b, {d});
    };
    auto add_norm = [&](const std::string& p) {
        add(p + "gain", {d});
        add(p + "offset", {d});
    };
    auto add_ffn = [&](const std::string& p) {
        add(p + "w1", {d, ff});
        add(p + "b1", {ff});
        add(p + "w2", {ff, d});
        add(p + "b2", {d});
    };
    add("embed.weight", {config_.vocab_size, d});
    for (std::size_t l = 0; l < config_.n_enc_layers; ++l) {
        const auto p = layer_prefix("enc", l);
        add_attention(p + "self_attn.");
        add_norm(p + "ln1.");
        add_ffn(p + "ffn.");
        add_norm(p + "ln2.");
    }
    for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
        const auto p = layer_prefix("dec", l);
        add_attention(p + "self_attn.");
        add_norm(p + "ln1.");
        add_attention(p + "cross_attn.");
        add_norm(p + "ln2.");
        add_ffn(p + "ffn.");
        add_norm(p + "ln3.");
    }
    add("out.weight", {d, config_.vocab_size});
    add("out.bias", {config_.vocab_size});
    if (config_.bridge_enabled)
        for (std::size_t i = 0; i < config_.n_dec_layers; ++i)
            add(bridge_name(i), {config_.n_enc_layers * d, d});
    for (auto& [name, t] : params_)
        if (ends_with(name, "gain")) std::fill(t.data().begin(), t.data().end(), T(1));
}

template <typename T>
const Tensor<T>& Model<T>::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
}

template <typename T>
Tensor<T>& Model<T>::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
}

template <typename T>
void Model<T>::init_body(BodyInit scheme, std::uint64_t seed) {
    for (auto& [name, t] : params_) {
        if (is_bridge(name)) continue;
        auto data = t.data();
        if (t.rank() == 2) {
            const Tensor<T> init = scheme == BodyInit::ConstantOne
                                       ? init_constant_one<T>(t.shape())
                                       : init_random_xavier<T>(t.shape(), mix_seed(seed, name_hash(name)));
            std::copy(init.data().begin(), init.data().end(), data.begin());
        } else {
            std::fill(data.begin(), data.end(), ends_with(name, "gain") ? T(1) : T(0));
        }
    }
}

template <typename T>
void Model<T>::set_bridge(const BridgeWeights<T>& bridge) {
    check_bridge(bridge, config_.n_enc_layers, config_.d_model);
    if (bridge.per_decoder_layer.size() != config_.n_dec_layers)
        throw DimensionError("bridge has " + std::to_string(bridge.per_decoder_layer.size()) +
                             " matrices for " + std::to_string(config_.n_dec_layers) + " decoder layers");
    config_.bridge_enabled = true;
    for (std::size_t i = 0; i < config_.n_dec_layers; ++i) {
        auto copy = bridge.per_decoder_layer[i].clone();
        copy.set_requires_grad(true);
        params_.insert_or_assign(bridge_name(i), copy);
    }
}

template <typename T>
void Model<T>::remove_bridge() {
    config_.bridge_enabled = false;
    for (std::size_t i = 0; i < config_.n_dec_layers; ++i) params_.erase(bridge_name(i));
}

template <typename T>
std::optional<BridgeWeights<T>> Model<T>::bridge() const {
    if (!config_.bridge_enabled) return std::nullopt;
    BridgeWeights<T> b{config_.n_enc_layers, config_.d_model, {}};
    for (std::size_t i = 0; i < config_.n_dec_layers; ++i) b.per_decoder_layer.push_back(param(bridge_name(i)));
    return b;
}

template <typename T>
Tensor<T> Model<T>::embed(const TokenMatrix& tokens) const {
    if (tokens.cols > config_.max_seq_len)
        throw std::length_error("sequence length " + std::to_string(tokens.cols) + " exceeds max_seq_len " +
                                std::to_string(config_.max_seq_len));
    if (tokens.ids.size() != tokens.rows * tokens.cols)
        throw DimensionError("token matrix size does not match its shape");
    const std::size_t d = config_.d_model;
    auto x = scale(embedding(param("embed.weight"), tokens.ids, {tokens.rows, tokens.cols}),
                   static_cast<T>(std::sqrt(static_cast<double>(d))));
    const auto table = positional_encoding<T>(tokens.cols, d);
    std::vector<T> pe(tokens.rows * tokens.cols * d);
    for (std::size_t r = 0; r < tokens.rows; ++r)
        std::copy(table.begin(), table.end(), pe.begin() + r * table.size());
    return add(x, Tensor<T>({tokens.rows, tokens.cols, d}, std::move(pe)));
}

template <typename T>
Tensor<T> Model<T>::linear(const Tensor<T>& x, const std::string& prefix, const std::string& w,
                           const std::string& b) const {
    return add_bias(matmul(x, param(prefix + w)), param(prefix + b));
}

template <typename T>
Tensor<T> Model<T>::attention_block(const Tensor<T>& query, const Tensor<T>& memory,
                                    const std::string& prefix, std::span<const std::uint8_t> key_valid,
                                    bool causal) const {
    auto q = linear(query, prefix, "wq", "bq");
    auto k = linear(memory, prefix, "wk", "bk");
    auto v = linear(memory, prefix, "wv", "bv");
    auto a = attention(q, k, v, config_.n_heads, key_valid, causal);
    return linear(a, prefix, "wo", "bo");
}

template <typename T>
Tensor<T> Model<T>::feed_forward(const Tensor<T>& x, const std::string& prefix) const {
    return linear(relu(linear(x, prefix, "w1", "b1")), prefix, "w2", "b2");
}

template <typename T>
Tensor<T> Model<T>::norm(const Tensor<T>& x, const std::string& prefix) const {
    return layer_norm(x, param(prefix + "gain"), param(prefix + "offset"), static_cast<T>(kNormEps));
}

template <typename T>
EncoderOutputs<T> Model<T>::encode(const TokenMatrix& src) const {
    EncoderOutputs<T> out;
    out.src_valid = src.valid_mask(config_.pad_id);
    auto x = embed(src);
    for (std::size_t l = 0; l < config_.n_enc_layers; ++l) {
        const auto p = layer_prefix("enc", l);
        x = norm(add(x, attention_block(x, x, p + "self_attn.", out.src_valid, false)), p + "ln1.");
        x = norm(add(x, feed_forward(x, p + "ffn.")), p + "ln2.");
        out.layers.push_back(x);
    }
    return out;
}

template <typename T>
Tensor<T> Model<T>::decode(const TokenMatrix& tgt_in, const EncoderOutputs<T>& enc,
                           const BridgeWeights<T>* bridge) const {
    if (enc.layers.size() != config_.n_enc_layers)
        throw DimensionError("decoder expects " + std::to_string(config_.n_enc_layers) +
                             " encoder layers, got " + std::to_string(enc.layers.size()));
    Tensor<T> concat;
    if (bridge) {
        check_bridge(*bridge, config_.n_enc_layers, config_.d_model);
        if (bridge->per_decoder_layer.size() != config_.n_dec_layers)
            throw DimensionError("bridge has " + std::to_string(bridge->per_decoder_layer.size()) +
                                 " matrices for " + std::to_string(config_.n_dec_layers) + " decoder layers");
        concat = concat_last(enc.layers);
    }
    const auto tgt_valid = tgt_in.valid_mask(config_.pad_id);
    auto x = embed(tgt_in);
    for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
        const auto p = layer_prefix("dec", l);
        x = norm(add(x, attention_block(x, x, p + "self_attn.", tgt_valid, true)), p + "ln1.");
        const Tensor<T> memory = bridge ? matmul(concat, bridge->per_decoder_layer[l]) : enc.last();
        x = norm(add(x, attention_block(x, memory, p + "cross_attn.", enc.src_valid, false)), p + "ln2.");
        x = norm(add(x, feed_forward(x, p + "ffn.")), p + "ln3.");
    }
    return linear(x, "out.", "weight", "bias");
}

template <typename T>
Tensor<T> Model<T>::decode(const TokenMatrix& tgt_in, const EncoderOutputs<T>& enc) const {
    const auto b = bridge();
    return decode(tgt_in, enc, b ? &*b : nullptr);
}

template <typename T>
void Model<T>::set_requires_grad(bool on) {
    for (auto& [_, t] : params_) t.set_requires_grad(on);
}

template <typename T>
void Model<T>::zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
}

template <typename T>
Model<T> Model<T>::clone() const {
    Model out(config_);
    for (const auto& [name, t] : params_) {
        auto c = t.clone();
        out.params_.insert_or_assign(name, c);
    }
    return out;
}

template <typename T>
std::vector<std::vector<TokenId>> greedy_decode(const Model<T>& model, const TokenMatrix& src,
                                                std::size_t max_len) {
    NoGradGuard no_grad;
    const auto& cfg = model.config();
    max_len = std::min(max_len, cfg.max_seq_len);
    const auto enc = model.encode(src);
    std::vector<std::vector<TokenId>> out(src.rows);
    std::vector<bool> done(src.rows, false);
    TokenMatrix tgt{src.rows, 1, std::vector<TokenId>(src.rows, cfg.bos_id)};
    for (std::size_t step = 0; step < max_len; ++step) {
        const auto logits = model.decode(tgt, enc);
        const std::size_t vocab = cfg.vocab_size;
        TokenMatrix next{src.rows, tgt.cols + 1, {}};
        next.ids.reserve(next.rows * next.cols);
        bool all_done = true;
        for (std::size_t r = 0; r < src.rows; ++r) {
            const T* row = logits.data().data() + (r * tgt.cols + tgt.cols - 1) * vocab;
            TokenId best = 0;
            for (std::size_t j = 1; j < vocab; ++j)
                if (row[j] > row[best]) best = static_cast<TokenId>(j);
            if (!done[r]) {
                if (best == cfg.eos_id)
                    done[r] = true;
                else
                    out[r].push_back(best);
            }
            all_done = all_done && done[r];
            next.ids.insert(next.ids.end(), tgt.ids.begin() + r * tgt.cols,
                            tgt.ids.begin() + (r + 1) * tgt.cols);
            next.ids.push_back(done[r] ? cfg.pad_id : best);
        }
        if (all_done) break;
        tgt = std::move(next);
    }
    return out;
}

#define ENCBRIDGE_INSTANTIATE(T)                                                                       \
    template class Model<T>;                                                                           \
    template Tensor<T> bridge_forward<T>(const EncoderOutputs<T>&, const BridgeWeights<T>&, std::size_t); \
    template std::vector<std::vector<TokenId>> greedy_decode<T>(const Model<T>&, const TokenMatrix&,   \
                                                                std::size_t);                          \
    template std::vector<T> positional_encoding<T>(std::size_t, std::size_t);

ENCBRIDGE_INSTANTIATE(float)
ENCBRIDGE_INSTANTIATE(double)

}  // namespace encbridge
