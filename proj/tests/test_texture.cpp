#include <doctest.h>

#include "oracles.hpp"
#include "sonodetect/rng.hpp"
#include "sonodetect/texture.hpp"

using namespace sono;
using namespace sono::haar;

TEST_CASE("bank construction is deterministic, in range, and in bounds") {
    const HaarBank a = build_bank(32);
    const HaarBank b = build_bank(32);
    REQUIRE(a.features.size() == b.features.size());
    CHECK(a.features.size() >= 1800);
    CHECK(a.features.size() <= 2200);
    for (std::size_t i = 0; i < a.features.size(); ++i) {
        REQUIRE(a.features[i].rects.size() == b.features[i].rects.size());
        REQUIRE(a.features[i].rects.size() >= 2);
        for (std::size_t r = 0; r < a.features[i].rects.size(); ++r) {
            const auto& wr = a.features[i].rects[r];
            CHECK(wr.rect == b.features[i].rects[r].rect);
            CHECK(wr.rect.x >= 0);
            CHECK(wr.rect.y >= 0);
            CHECK(wr.rect.x + wr.rect.w <= 32);
            CHECK(wr.rect.y + wr.rect.h <= 32);
        }
    }
}

TEST_CASE("constant images give exactly zero features") {
    const HaarBank bank = build_bank(32);
    for (const double c : {0.0, 0.25, 0.5, 1.0}) { // dyadic, so integral sums are exact
        const imaging::Image img(32, 32, 1.0, c);
        const imaging::IntegralImage ii(img);
        const std::vector<double> f = extract(ii, bank);
        for (const double v : f) CHECK(v == 0.0);
    }
}

TEST_CASE("step image drives a boundary-spanning horizontal 2-rect feature positive") {
    imaging::Image img(32, 32, 1.0, 0.0);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 16; ++x) img.at(x, y) = 1.0;
    const imaging::IntegralImage ii(img);
    const HaarBank bank = build_bank(32);
    // First feature in enumeration order is the two-rect horizontal window at
    // (0,0) of size 8x8, fully inside the bright half: response 0. Find the
    // 16-wide window at x=8 instead, which straddles the step.
    bool found = false;
    for (std::size_t i = 0; i < bank.features.size(); ++i) {
        const auto& rects = bank.features[i].rects;
        if (rects.size() != 2) continue;
        const auto& r0 = rects[0].rect;
        const auto& r1 = rects[1].rect;
        if (r0.x == 8 && r0.y == 0 && r0.w == 8 && r0.h == 8 && r1.x == 16 && r1.w == 8) {
            // Left rect fully bright, right rect fully dark: +1*1 - 1*0 = 1.
            const std::vector<double> f = extract(ii, bank);
            CHECK(f[i] == doctest::Approx(1.0));
            CHECK(f[i] == doctest::Approx(oracles::naive_haar_value(img, bank.features[i])));
            found = true;
            break;
        }
    }
    CHECK(found);
}

TEST_CASE("every feature equals naive per-pixel weighted summation") {
    const HaarBank bank = build_bank(32);
    Rng rng(606);
    for (int trial = 0; trial < 3; ++trial) {
        const imaging::Image img = oracles::random_image(32, 32, 1.0, rng);
        const imaging::IntegralImage ii(img);
        const std::vector<double> f = extract(ii, bank);
        REQUIRE(f.size() == bank.features.size());
        for (std::size_t i = 0; i < f.size(); ++i)
            CHECK(f[i] == doctest::Approx(oracles::naive_haar_value(img, bank.features[i]))
                              .epsilon(1e-9));
    }
}

TEST_CASE("size mismatch is rejected") {
    const HaarBank bank = build_bank(32);
    const imaging::Image img(16, 16, 1.0, 0.5);
    CHECK_THROWS_AS(extract(imaging::IntegralImage(img), bank), UsageError);
}
