#pragma once

// Encoder-decoder transformer whose encoder keeps every layer's output and
// whose decoder layers read their cross-attention memory through a bias-free
// bridge matrix applied to the concatenation of those outputs.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "encbridge/tensor.hpp"

namespace encbridge {

struct ModelConfig {
    std::size_t vocab_size = 56;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t n_enc_layers = 4;
    std::size_t n_dec_layers = 4;
    std::size_t max_seq_len = 32;
    TokenId pad_id = 0;
    TokenId bos_id = 1;
    TokenId eos_id = 2;
    bool bridge_enabled = false;

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;

    /// key=value lines, one per field, in a fixed order.
    std::string to_text() const;
    /// Reads the keys written by to_text; unknown keys are ignored.
    static ModelConfig from_text(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

/// Parses "key=value" lines; '#' starts a comment line.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Row-major id matrix, rows = batch entries.
struct TokenMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<TokenId> ids;

    TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
    std::vector<std::uint8_t> valid_mask(TokenId pad_id) const;
};

template <typename T>
struct EncoderOutputs {
    /// One [batch, src_len, d_model] tensor per encoder layer, lowest first.
    std::vector<Tensor<T>> layers;
    /// batch x src_len, 1 where the source token is not padding.
    std::vector<std::uint8_t> src_valid;

    const Tensor<T>& last() const { return layers.back(); }
};

template <typename T>
struct BridgeWeights {
    std::size_t n_enc_layers = 0;
    std::size_t d_model = 0;
    /// One (n_enc_layers * d_model) x d_model matrix per decoder layer.
    std::vector<Tensor<T>> per_decoder_layer;

    std::size_t scalar_count() const {
        return per_decoder_layer.size() * n_enc_layers * d_model * d_model;
    }
};

/// Memory for one decoder layer: every source position's per-layer states are
/// concatenated lowest layer first and multiplied by that layer's matrix.
template <typename T>
Tensor<T> bridge_forward(const EncoderOutputs<T>& enc, const BridgeWeights<T>& bridge,
                         std::size_t dec_layer);

enum class BodyInit { Xavier, ConstantOne };

template <typename T>
class Model {
   public:
    using ParamMap = std::map<std::string, Tensor<T>>;

    /// Allocates every parameter (bridge included when enabled) as zeros.
    explicit Model(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }
    const Tensor<T>& param(const std::string& name) const;
    Tensor<T>& param(const std::string& name);

    /// Initializes every non-bridge parameter. Matrices follow the scheme,
    /// biases and norm offsets are zero, norm gains are one.
    void init_body(BodyInit scheme, std::uint64_t seed);

    /// Installs bridge matrices (enabling the bridge) after shape checks.
    void set_bridge(const BridgeWeights<T>& bridge);
    void remove_bridge();
    /// Handles sharing storage with the model's bridge parameters.
    std::optional<BridgeWeights<T>> bridge() const;

    EncoderOutputs<T> encode(const TokenMatrix& src) const;
    /// Logits [batch, tgt_len, vocab]. A null bridge routes the last encoder
    /// layer to every decoder layer.
    Tensor<T> decode(const TokenMatrix& tgt_in, const EncoderOutputs<T>& enc,
                     const BridgeWeights<T>* bridge) const;
    Tensor<T> decode(const TokenMatrix& tgt_in, const EncoderOutputs<T>& enc) const;
    Tensor<T> forward(const TokenMatrix& src, const TokenMatrix& tgt_in) const {
        return decode(tgt_in, encode(src));
    }

    void set_requires_grad(bool on);
    void zero_grad();
    std::size_t parameter_count() const;

    /// Deep copy of all parameters.
    Model clone() const;

    template <typename U>
    Model<U> cast() const {
        Model<U> out(config_);
        for (const auto& [name, t] : params_) {
            auto dst = out.param(name).data();
            const auto src = t.data();
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
        }
        return out;
    }

   private:
    Tensor<T> embed(const TokenMatrix& tokens) const;
    Tensor<T> linear(const Tensor<T>& x, const std::string& prefix, const std::string& w,
                     const std::string& b) const;
    Tensor<T> attention_block(const Tensor<T>& query, const Tensor<T>& memory,
                              const std::string& prefix, std::span<const std::uint8_t> key_valid,
                              bool causal) const;
    Tensor<T> feed_forward(const Tensor<T>& x, const std::string& prefix) const;
    Tensor<T> norm(const Tensor<T>& x, const std::string& prefix) const;

    ModelConfig config_;
    ParamMap params_;
};

/// Greedy decoding: starts from bos and appends the highest-scoring token
/// (lowest id on ties) until eos or max_len tokens. Returned sequences exclude
/// bos and eos.
template <typename T>
std::vector<std::vector<TokenId>> greedy_decode(const Model<T>& model, const TokenMatrix& src,
                                                std::size_t max_len);

/// Sinusoidal position table [max_len, d_model].
template <typename T>
std::vector<T> positional_encoding(std::size_t max_len, std::size_t d_model);

}  // namespace encbridge
