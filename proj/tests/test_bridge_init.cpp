#include <doctest.h>

#include <cmath>

#include "encbridge/bridge_init.hpp"

using namespace encbridge;

namespace {

// Every column holds exactly one 1, located in the block of `layer`.
template <typename T>
void check_routes(const Tensor<T>& m, std::size_t layer, std::size_t d) {
    const std::size_t rows = m.dim(0);
    for (std::size_t c = 0; c < d; ++c) {
        std::size_t ones = 0;
        for (std::size_t r = 0; r < rows; ++r) {
            const T v = m.data()[r * d + c];
            CHECK((v == T(0) || v == T(1)));
            if (v == T(1)) {
                ++ones;
                CHECK(r == layer * d + c);
            }
        }
        CHECK(ones == 1);
    }
}

}  // namespace

TEST_SUITE("bridge_init") {
    TEST_CASE("original connection at 3072x512") {
        const auto b = init_original_connection<float>(6, 6, 512);
        REQUIRE(b.per_decoder_layer.size() == 6);
        for (const auto& m : b.per_decoder_layer) {
            CHECK(m.shape() == Shape{3072, 512});
            check_routes(m, 5, 512);
        }
    }

    TEST_CASE("single encoder layer gives identity") {
        const auto b = init_original_connection<double>(1, 2, 8);
        for (const auto& m : b.per_decoder_layer)
            for (std::size_t r = 0; r < 8; ++r)
                for (std::size_t c = 0; c < 8; ++c) CHECK(m.at({r, c}) == (r == c ? 1.0 : 0.0));
    }

    TEST_CASE("GCA routes decoder i to encoder L-1-i") {
        const auto b = init_gca<double>(6, 6, 16);
        for (std::size_t i = 0; i < 6; ++i) check_routes(b.per_decoder_layer[i], 5 - i, 16);
    }

    TEST_CASE("GCA with unequal depths clamps at layer 0") {
        CHECK(gca_source_layer(3, 0) == 2);
        CHECK(gca_source_layer(3, 2) == 0);
        CHECK(gca_source_layer(3, 5) == 0);
        const auto b = init_gca<double>(3, 5, 8);
        for (std::size_t i = 0; i < 5; ++i) check_routes(b.per_decoder_layer[i], gca_source_layer(3, i), 8);
        const auto fewer = init_gca<double>(4, 2, 8);
        check_routes(fewer.per_decoder_layer[0], 3, 8);
        check_routes(fewer.per_decoder_layer[1], 2, 8);
    }

    TEST_CASE("GCA with one decoder layer equals original connection") {
        const auto g = init_gca<double>(4, 1, 8);
        const auto o = init_original_connection<double>(4, 1, 8);
        CHECK(std::equal(g.per_decoder_layer[0].data().begin(), g.per_decoder_layer[0].data().end(),
                         o.per_decoder_layer[0].data().begin()));
    }

    TEST_CASE("constant one") {
        const auto t = init_constant_one<double>({2, 2});
        for (double v : t.data()) CHECK(v == 1.0);
    }

    TEST_CASE("xavier determinism and bounds") {
        const auto a = init_random_xavier<float>({3072, 512}, 9);
        const auto b = init_random_xavier<float>({3072, 512}, 9);
        CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
        const auto c = init_random_xavier<float>({3072, 512}, 10);
        CHECK_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));

        const double bound = std::sqrt(6.0 / (3072 + 512));
        double mean = 0;
        for (float v : a.data()) {
            CHECK(std::abs(v) <= bound);
            mean += v;
        }
        mean /= static_cast<double>(a.numel());
        // uniform(-b, b) has sd b/sqrt(3); 3 sigma of the sample mean
        const double sigma = bound / std::sqrt(3.0) / std::sqrt(static_cast<double>(a.numel()));
        CHECK(std::abs(mean) < 3 * sigma);
    }

    TEST_CASE("make_bridge dispatch") {
        const auto x = make_bridge<float>({InitVariant::RandomXavier, 4}, 2, 3, 8);
        REQUIRE(x.per_decoder_layer.size() == 3);
        CHECK_FALSE(std::equal(x.per_decoder_layer[0].data().begin(), x.per_decoder_layer[0].data().end(),
                               x.per_decoder_layer[1].data().begin()));
        const auto ones = make_bridge<float>({InitVariant::ConstantOne, 0}, 2, 3, 8);
        for (const auto& m : ones.per_decoder_layer) {
            CHECK(m.shape() == Shape{16, 8});
            for (float v : m.data()) CHECK(v == 1.0f);
        }
        CHECK(ones.scalar_count() == 3 * 2 * 8 * 8);
    }

    TEST_CASE("variant names") {
        for (auto v : {InitVariant::OriginalConnection, InitVariant::Gca, InitVariant::ConstantOne,
                       InitVariant::RandomXavier})
            CHECK(parse_init_variant(init_variant_name(v)) == v);
        CHECK_FALSE(parse_init_variant("diagonal").has_value());
    }
}
