#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "erode/tensor.hpp"

using namespace erode;

TEST_CASE("shape and storage stay consistent") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.a().sum() == 0.0);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
    CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
}

TEST_CASE("reshape preserves data and rejects bad sizes") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({3, 2});
    CHECK(r[4] == 5.0);
    CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
}

TEST_CASE("elementwise ops check shapes and name the axis") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 3}, {1, 2, 3, 4, 5, 6});
    try {
        Tensor c = a + b;
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
    }
}

TEST_CASE("sign maps zero to zero") {
    Tensor t({4}, {-2.5, 0.0, 3.0, -0.0});
    Tensor s = sign(t);
    CHECK(s[0] == -1.0);
    CHECK(s[1] == 0.0);
    CHECK(s[2] == 1.0);
    CHECK(s[3] == 0.0);
}

TEST_CASE("norms and distances") {
    Tensor a({3}, {1, -2, 3});
    Tensor b({3}, {0, 0, 0});
    CHECK(linf_distance(a, b) == 3.0);
    CHECK(l1_norm(a) == 6.0);
    CHECK(sum_value(a) == 2.0);
    CHECK(min_value(a) == -2.0);
    CHECK(max_value(a) == 3.0);
}

TEST_CASE("bit_equal distinguishes shape and content") {
    Tensor a({2}, {1, 2});
    Tensor b({2}, {1, 2});
    Tensor c({1, 2}, {1, 2});
    Tensor d({2}, {1, 3});
    CHECK(bit_equal(a, b));
    CHECK(!bit_equal(a, c));
    CHECK(!bit_equal(a, d));
}

TEST_CASE("matrix view requires rank 2") {
    Tensor t({4}, {1, 2, 3, 4});
    CHECK_THROWS_AS(t.mat(), DimensionError);
    Tensor m({2, 2}, {1, 2, 3, 4});
    CHECK(m.mat()(1, 0) == 3.0);
}
