#include "encbridge/bridge_init.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "encbridge/random.hpp"

namespace encbridge {

std::string_view init_variant_name(InitVariant v) {
    switch (v) {
        case InitVariant::OriginalConnection: return "original";
        case InitVariant::Gca: return "gca";
        case InitVariant::ConstantOne: return "ones";
        case InitVariant::RandomXavier: return "xavier";
    }
    return "unknown";
}

std::optional<InitVariant> parse_init_variant(std::string_view name) {
    for (auto v : {InitVariant::OriginalConnection, InitVariant::Gca, InitVariant::ConstantOne,
                   InitVariant::RandomXavier})
        if (init_variant_name(v) == name) return v;
    return std::nullopt;
}

std::size_t gca_source_layer(std::size_t n_enc_layers, std::size_t dec_layer) {
    return dec_layer + 1 >= n_enc_layers ? 0 : n_enc_layers - 1 - dec_layer;
}

namespace {

void require_positive(std::size_t n_enc_layers, std::size_t n_dec_layers, std::size_t d_model) {
    if (n_enc_layers == 0 || n_dec_layers == 0 || d_model == 0)
        throw std::invalid_argument("bridge dimensions must be positive");
}

// Zero matrix with a d_model identity at encoder layer `source`'s row slice.
template <typename T>
Tensor<T> identity_block(std::size_t n_enc_layers, std::size_t d_model, std::size_t source) {
    auto m = Tensor<T>::zeros({n_enc_layers * d_model, d_model});
    auto data = m.data();
    for (std::size_t j = 0; j < d_model; ++j) data[(source * d_model + j) * d_model + j] = T(1);
    return m;
}

}  // namespace

template <typename T>
BridgeWeights<T> init_original_connection(std::size_t n_enc_layers, std::size_t n_dec_layers,
                                          std::size_t d_model) {
    require_positive(n_enc_layers, n_dec_layers, d_model);
    BridgeWeights<T> b{n_enc_layers, d_model, {}};
    for (std::size_t i = 0; i < n_dec_layers; ++i)
        b.per_decoder_layer.push_back(identity_block<T>(n_enc_layers, d_model, n_enc_layers - 1));
    return b;
}

template <typename T>
BridgeWeights<T> init_gca(std::size_t n_enc_layers, std::size_t n_dec_layers, std::size_t d_model) {
    require_positive(n_enc_layers, n_dec_layers, d_model);
    BridgeWeights<T> b{n_enc_layers, d_model, {}};
    for (std::size_t i = 0; i < n_dec_layers; ++i)
        b.per_decoder_layer.push_back(
            identity_block<T>(n_enc_layers, d_model, gca_source_layer(n_enc_layers, i)));
    return b;
}

template <typename T>
Tensor<T> init_constant_one(const Shape& shape) {
    return Tensor<T>::full(shape, T(1));
}

template <typename T>
Tensor<T> init_random_xavier(const Shape& shape, std::uint64_t seed) {
    if (shape.empty()) throw std::invalid_argument("xavier init needs at least one dimension");
    const std::size_t fan_in = shape[0];
    const std::size_t fan_out = shape.size() > 1 ? shape_numel(shape) / shape[0] : shape[0];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    auto t = Tensor<T>::zeros(shape);
    Rng rng(seed);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <typename T>
BridgeWeights<T> make_bridge(const InitScheme& scheme, std::size_t n_enc_layers,
                             std::size_t n_dec_layers, std::size_t d_model) {
    switch (scheme.variant) {
        case InitVariant::OriginalConnection:
            return init_original_connection<T>(n_enc_layers, n_dec_layers, d_model);
        case InitVariant::Gca:
            return init_gca<T>(n_enc_layers, n_dec_layers, d_model);
        case InitVariant::ConstantOne:
        case InitVariant::RandomXavier: {
            require_positive(n_enc_layers, n_dec_layers, d_model);
            BridgeWeights<T> b{n_enc_layers, d_model, {}};
            const Shape shape{n_enc_layers * d_model, d_model};
            for (std::size_t i = 0; i < n_dec_layers; ++i)
                b.per_decoder_layer.push_back(
                    scheme.variant == InitVariant::ConstantOne
                        ? init_constant_one<T>(shape)
                        : init_random_xavier<T>(shape, mix_seed(scheme.seed, i)));
            return b;
        }
    }
    throw std::invalid_argument("unknown init variant");
}

#define ENCBRIDGE_INSTANTIATE(T)                                                                 \
    template BridgeWeights<T> init_original_connection<T>(std::size_t, std::size_t, std::size_t); \
    template BridgeWeights<T> init_gca<T>(std::size_t, std::size_t, std::size_t);                 \
    template Tensor<T> init_constant_one<T>(const Shape&);                                       \
    template Tensor<T> init_random_xavier<T>(const Shape&, std::uint64_t);                       \
    template BridgeWeights<T> make_bridge<T>(const InitScheme&, std::size_t, std::size_t, std::size_t);

ENCBRIDGE_INSTANTIATE(float)
ENCBRIDGE_INSTANTIATE(double)

}  // namespace encbridge
