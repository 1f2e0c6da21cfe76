#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "support/testutil.hpp"
#include "ursct/data.hpp"
#include "ursct/image_io.hpp"

using namespace ursct;
namespace fs = std::filesystem;

namespace {

Tensor<float> quantized_noise(std::int64_t h, std::int64_t w, std::uint64_t seed) {
    Rng rng(seed);
    auto t = Tensor<float>::zeros({3, h, w});
    for (auto& v : t.mutable_data()) {
        v = static_cast<float>(std::floor(rng.uniform() * 256.0)) / 255.0f;
    }
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("png roundtrip is exact on the 8-bit lattice") {
    testutil::TmpDir tmp;
    auto img = quantized_noise(16, 20, 1);
    save_image(img, tmp.sub("x.png"));
    auto back = load_image(tmp.sub("x.png"));
    REQUIRE(back.shape() == img.shape());
    CHECK(testutil::bitwise_equal(back, img));
}

TEST_CASE("png extremes and quantization midpoint") {
    testutil::TmpDir tmp;
    save_image(Tensor<float>::zeros({3, 1, 1}), tmp.sub("black.png"));
    save_image(Tensor<float>::ones({3, 1, 1}), tmp.sub("white.png"));
    auto black = load_image(tmp.sub("black.png"));
    auto white = load_image(tmp.sub("white.png"));
    for (auto v : black.data()) CHECK(v == 0.0f);
    for (auto v : white.data()) CHECK(v == 1.0f);

    // 0.5 lands on byte 128 = 0.501961 after the decode divide.
    save_image(Tensor<float>::full({3, 1, 1}, 0.5f), tmp.sub("mid.png"));
    auto mid = load_image(tmp.sub("mid.png"));
    for (auto v : mid.data()) CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(1e-6));
}

TEST_CASE("jpeg decode path") {
    testutil::TmpDir tmp;
    auto img = testutil::color_ramp(32, 48);
    testutil::write_jpeg(img, tmp.sub("r.jpg"));
    auto back = load_image(tmp.sub("r.jpg"));
    REQUIRE(back.shape() == img.shape());
    // Lossy but close on a smooth gradient at quality ~92.
    CHECK(testutil::max_abs_diff(back, img) < 0.1);
}

TEST_CASE("load_image reports the failing path") {
    try {
        load_image("/nonexistent/dir/image.png");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/dir/image.png") != std::string::npos);
    }
}

TEST_CASE("resize_bilinear identity, constants, and half-pixel weights") {
    auto img = quantized_noise(9, 7, 2);
    CHECK(testutil::bitwise_equal(resize_bilinear(img, 9, 7), img));

    auto flat = Tensor<float>::full({3, 7, 5}, 0.37f);
    auto up = resize_bilinear(flat, 13, 9);
    REQUIRE(up.shape() == Shape{3, 13, 9});
    for (auto v : up.data()) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));

    // 2x2 -> 4x4 with half-pixel centers: interior weights are 0.75/0.25.
    auto quad = Tensor<float>::from({1, 2, 2}, {0.0f, 0.25f, 0.75f, 1.0f});
    auto big = resize_bilinear(quad, 4, 4);
    CHECK(big.at({0, 0, 0}) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(big.at({0, 0, 3}) == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(big.at({0, 3, 0}) == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(big.at({0, 3, 3}) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(big.at({0, 0, 1}) == doctest::Approx(0.25 * 0.25).epsilon(1e-6));
    CHECK(big.at({0, 0, 2}) == doctest::Approx(0.75 * 0.25).epsilon(1e-6));
    CHECK(big.at({0, 1, 0}) == doctest::Approx(0.25 * 0.75).epsilon(1e-6));

    CHECK_THROWS_AS(resize_bilinear(Tensor<float>::zeros({3, 2, 2}), 0, 4), DimensionError);
    CHECK_THROWS_AS(resize_bilinear(Tensor<float>::zeros({2, 2}), 4, 4), DimensionError);
}

TEST_CASE("hflip mirrors width and is an involution") {
    auto img = quantized_noise(5, 8, 3);
    auto flipped = hflip(img);
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < 5; ++y)
            for (std::int64_t x = 0; x < 8; ++x)
                CHECK(flipped.at({c, y, x}) == img.at({c, y, 7 - x}));
    CHECK(testutil::bitwise_equal(hflip(flipped), img));
}

TEST_CASE("scan_paired_dataset pairing rules") {
    testutil::TmpDir tmp;
    fs::create_directories(tmp.sub("raw"));
    fs::create_directories(tmp.sub("ref"));
    auto img = testutil::color_ramp(8, 8);
    for (const char* stem : {"b", "a", "c"}) {
        save_image(img, tmp.sub(std::string("raw/") + stem + ".png"));
        save_image(img, tmp.sub(std::string("ref/") + stem + ".png"));
    }

    auto idx = scan_paired_dataset(tmp.sub("raw"), tmp.sub("ref"), 8, 8, true);
    REQUIRE(idx.entries.size() == 3);
    CHECK(idx.entries[0].id == "a");
    CHECK(idx.entries[1].id == "b");
    CHECK(idx.entries[2].id == "c");
    CHECK(idx.target_h == 8);
    for (const auto& e : idx.entries) REQUIRE(e.ref_path.has_value());

    auto noref = scan_paired_dataset(tmp.sub("raw"), std::nullopt, 8, 8, false);
    REQUIRE(noref.entries.size() == 3);
    for (const auto& e : noref.entries) CHECK(!e.ref_path.has_value());

    // A raw stem with no reference is an error only when references are required.
    save_image(img, tmp.sub("raw/d.png"));
    try {
        scan_paired_dataset(tmp.sub("raw"), tmp.sub("ref"), 8, 8, true);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("d") != std::string::npos);
    }
    auto lax = scan_paired_dataset(tmp.sub("raw"), tmp.sub("ref"), 8, 8, false);
    REQUIRE(lax.entries.size() == 4);
    CHECK(!lax.entries[3].ref_path.has_value());

    // Duplicate stems across extensions are ambiguous.
    testutil::write_jpeg(img, tmp.sub("raw/a.jpg"));
    CHECK_THROWS_AS(scan_paired_dataset(tmp.sub("raw"), std::nullopt, 8, 8, false), DataError);

    fs::create_directories(tmp.sub("empty"));
    CHECK_THROWS_AS(scan_paired_dataset(tmp.sub("empty"), std::nullopt, 8, 8, false), DataError);
}

TEST_CASE("load_pair resizes to the index resolution") {
    testutil::TmpDir tmp;
    fs::create_directories(tmp.sub("raw"));
    save_image(testutil::color_ramp(12, 16), tmp.sub("raw/a.png"));
    auto idx = scan_paired_dataset(tmp.sub("raw"), std::nullopt, 8, 8, false);
    auto pair = load_pair(idx.entries[0], idx.target_h, idx.target_w);
    CHECK(pair.raw.shape() == Shape{3, 8, 8});
    CHECK(pair.id == "a");
    CHECK(!pair.reference.has_value());
}

TEST_CASE("make_batches sizing, order, and determinism") {
    std::vector<ImagePair> pairs;
    for (int i = 0; i < 10; ++i) {
        ImagePair p;
        p.raw = Tensor<float>::full({3, 4, 4}, static_cast<float>(i) / 10.0f);
        p.reference = Tensor<float>::full({3, 4, 4}, static_cast<float>(i) / 20.0f);
        p.id = std::string(1, static_cast<char>('a' + i));
        pairs.push_back(std::move(p));
    }

    auto plain = make_batches(pairs, 4, false, 0);
    REQUIRE(plain.size() == 3);
    CHECK(plain[0].raw.shape() == Shape{4, 3, 4, 4});
    CHECK(plain[1].raw.shape() == Shape{4, 3, 4, 4});
    CHECK(plain[2].raw.shape() == Shape{2, 3, 4, 4});
    CHECK(plain[0].ids == std::vector<std::string>{"a", "b", "c", "d"});
    CHECK(plain[2].ids == std::vector<std::string>{"i", "j"});
    CHECK(plain[0].reference.defined());
    // Raw slot 1 of batch 0 carries pair "b" wholesale.
    CHECK(plain[0].raw.at({1, 0, 0, 0}) == doctest::Approx(0.1f).epsilon(1e-7));
    CHECK(plain[0].reference.at({1, 0, 0, 0}) == doctest::Approx(0.05f).epsilon(1e-7));

    auto s1 = make_batches(pairs, 4, true, 42);
    auto s2 = make_batches(pairs, 4, true, 42);
    auto s3 = make_batches(pairs, 4, true, 43);
    std::vector<std::string> o1, o2, o3;
    for (const auto& b : s1) o1.insert(o1.end(), b.ids.begin(), b.ids.end());
    for (const auto& b : s2) o2.insert(o2.end(), b.ids.begin(), b.ids.end());
    for (const auto& b : s3) o3.insert(o3.end(), b.ids.begin(), b.ids.end());
    CHECK(o1 == o2);
    CHECK(o1 != o3);
    CHECK(std::set<std::string>(o1.begin(), o1.end()).size() == 10);

    // Pairs without references produce an undefined batch reference.
    for (auto& p : pairs) p.reference.reset();
    auto norefs = make_batches(pairs, 4, false, 0);
    CHECK(!norefs[0].reference.defined());

    CHECK_THROWS_AS(make_batches(pairs, 0, false, 0), ConfigError);
}

TEST_SUITE_END();
