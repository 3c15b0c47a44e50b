#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "support.hpp"
#include "tfl/data_model.hpp"
#include "tfl/errors.hpp"

using namespace tfl;

namespace {

FeatureSequence make_seq(std::string id, std::size_t c, std::size_t t, std::uint64_t seed, float rate = 8.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n;
    std::vector<float> v(c * t);
    for (auto& x : v) x = n(rng);
    return FeatureSequence(std::move(id), Modality::visual, rate, c, t, std::move(v));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double lerp_oracle(std::span<const float> xs, std::size_t j, std::size_t out_len) {
    const double pos = static_cast<double>(j) * static_cast<double>(xs.size() - 1) / static_cast<double>(out_len - 1);
    const auto i = std::min(static_cast<std::size_t>(pos), xs.size() - 2);
    const double f = pos - static_cast<double>(i);
    return static_cast<double>(xs[i]) * (1.0 - f) + static_cast<double>(xs[i + 1]) * f;
}

}  // namespace

TEST_CASE("feature sequence invariants") {
    CHECK_THROWS_AS(FeatureSequence("a", Modality::audio, 1.0f, 0, 4, {}), ValidationError);
    CHECK_THROWS_AS(FeatureSequence("a", Modality::audio, 1.0f, 1, 1, {0.0f}), ValidationError);
    CHECK_THROWS_AS(FeatureSequence("a", Modality::audio, 0.0f, 1, 2, {0.0f, 1.0f}), ValidationError);
    CHECK_THROWS_AS(FeatureSequence("a", Modality::audio, 1.0f, 1, 2, {0.0f}), ValidationError);
    try {
        FeatureSequence("a", Modality::audio, 1.0f, 2, 2, {0.0f, 1.0f, std::numeric_limits<float>::infinity(), 0.0f});
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("channel 1") != std::string::npos);
        CHECK(msg.find("position 0") != std::string::npos);
    }
}

TEST_CASE("tfz round trip is bit exact") {
    const auto dir = testing::scratch_dir("dm_roundtrip");
    const auto seq = make_seq("clip_7", 5, 13, 1, 12.5f);
    save_feature_sequence(seq, dir / "clip_7.tfz");
    const auto back = load_feature_sequence(dir / "clip_7.tfz");
    CHECK(back.bit_equal(seq));
    CHECK(back.item_id() == "clip_7");
    CHECK(read_bytes(dir / "clip_7.tfz").size() == kTfzHeaderBytes + 5 * 13 * 4);
}

TEST_CASE("tfz format errors carry byte offsets") {
    const auto seq = make_seq("x", 4, 8, 2);
    const auto good = encode_feature_sequence(seq);

    SUBCASE("payload one value short") {
        auto bytes = good;
        bytes.resize(bytes.size() - 4);  // header C=4, T=8, 31 values
        try {
            parse_feature_sequence(bytes, "x");
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(e.offset() == bytes.size());
        }
    }
    SUBCASE("truncated header") {
        std::vector<std::uint8_t> bytes(good.begin(), good.begin() + 10);
        CHECK_THROWS_AS(parse_feature_sequence(bytes, "x"), FormatError);
    }
    SUBCASE("bad magic") {
        auto bytes = good;
        bytes[0] = 'X';
        try {
            parse_feature_sequence(bytes, "x");
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 0);
        }
    }
    SUBCASE("bad version") {
        auto bytes = good;
        bytes[4] = 9;
        try {
            parse_feature_sequence(bytes, "x");
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 4);
        }
    }
    SUBCASE("NaN at (0, 0) names the position") {
        auto bytes = good;
        const float nan = std::numeric_limits<float>::quiet_NaN();
        std::memcpy(bytes.data() + kTfzHeaderBytes, &nan, 4);
        try {
            parse_feature_sequence(bytes, "x");
            FAIL("expected a validation error");
        } catch (const ValidationError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("channel 0") != std::string::npos);
            CHECK(msg.find("position 0") != std::string::npos);
        }
    }
}

TEST_CASE("annotation invariants") {
    SegmentAnnotation a{"v", 4.0, {{0.5, 1.0}, {2.0, 3.0}}, true};
    CHECK_NOTHROW(a.validate());
    auto overlapping = a;
    overlapping.segments = {{0.5, 2.5}, {2.0, 3.0}};
    CHECK_THROWS_AS(overlapping.validate(), ValidationError);
    auto unsorted = a;
    unsorted.segments = {{2.0, 3.0}, {0.5, 1.0}};
    CHECK_THROWS_AS(unsorted.validate(), ValidationError);
    auto beyond = a;
    beyond.segments = {{3.5, 4.5}};
    CHECK_THROWS_AS(beyond.validate(), ValidationError);
    auto mislabelled = a;
    mislabelled.is_fake = false;
    CHECK_THROWS_AS(mislabelled.validate(), ValidationError);
    CHECK_NOTHROW(SegmentAnnotation{"r", 4.0, {}, false}.validate());

    CHECK_THROWS_AS((Prediction{1.0, 1.0, 0.5}.validate()), ValidationError);
    CHECK_THROWS_AS((Prediction{0.0, 1.0, 1.5}.validate()), ValidationError);
}

TEST_CASE("JSON documents round trip") {
    const auto dir = testing::scratch_dir("dm_json");
    const std::vector<SegmentAnnotation> annos{{"a", 6.0, {{0.25, 0.75}}, true}, {"b", 6.0, {}, false}};
    save_annotations(annos, dir / "annos.json");
    CHECK(load_annotations(dir / "annos.json") == annos);

    const std::vector<ItemPredictions> dump{{"a", {{0.1, 0.9, 0.8}, {1.0, 2.0, 0.1}}}, {"b", {}}};
    save_prediction_dump(dump, dir / "preds.json");
    const auto back = load_prediction_dump(dir / "preds.json");
    REQUIRE(back.size() == 2);
    CHECK(back[0].segments == dump[0].segments);
    CHECK(back[1].segments.empty());
}

TEST_CASE("manifest loading checks references") {
    const auto dir = testing::scratch_dir("dm_manifest");
    std::filesystem::create_directories(dir / "features");
    save_feature_sequence(make_seq("a", 2, 16, 3), dir / "features" / "a.tfz");
    save_feature_sequence(make_seq("b", 2, 16, 4), dir / "features" / "b.tfz");
    save_annotations({{"a", 2.0, {{0.5, 1.0}}, true}, {"b", 2.0, {}, false}}, dir / "annos.json");

    DatasetManifest m{Split::val, 42, "annos.json", {{"features/a.tfz", 0}, {"features/b.tfz", 1}}};
    save_manifest(m, dir / "manifest.json");
    const auto loaded = load_manifest(dir / "manifest.json");
    CHECK(loaded.corpus_seed == 42);
    CHECK(loaded.split == Split::val);
    const auto samples = load_split(dir / "manifest.json");
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].annotation.is_fake);
    CHECK(samples[1].features.item_id() == "b");

    auto missing = m;
    missing.entries.push_back({"features/c.tfz", 1});
    save_manifest(missing, dir / "missing.json");
    CHECK_THROWS(load_manifest(dir / "missing.json"));

    auto duplicate = m;
    duplicate.entries.push_back({"features/a.tfz", 0});
    save_manifest(duplicate, dir / "dup.json");
    CHECK_THROWS(load_manifest(dir / "dup.json"));

    auto out_of_range = m;
    out_of_range.entries[1].annotation_index = 7;
    save_manifest(out_of_range, dir / "oor.json");
    CHECK_THROWS(load_manifest(dir / "oor.json"));
}

TEST_CASE("temporal resampling") {
    SUBCASE("identity") {
        const auto seq = make_seq("a", 3, 9, 5);
        CHECK(resample_temporal(seq, 9).bit_equal(seq));
    }
    SUBCASE("midpoint") {
        const FeatureSequence seq("a", Modality::audio, 2.0f, 1, 2, {0.0f, 2.0f});
        const auto up = resample_temporal(seq, 3);
        CHECK(up.at(0, 0) == 0.0f);
        CHECK(up.at(0, 1) == 1.0f);
        CHECK(up.at(0, 2) == 2.0f);
        CHECK(up.feature_rate() == doctest::Approx(3.0));
    }
    SUBCASE("round trip against a scalar oracle") {
        const auto seq = make_seq("a", 3, 7, 6);
        const auto up = resample_temporal(seq, 14);
        const auto down = resample_temporal(up, 7);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t j = 0; j < 14; ++j) {
                CHECK(up.at(c, j) == doctest::Approx(lerp_oracle(seq.channel(c), j, 14)).epsilon(1e-6));
            }
            for (std::size_t j = 0; j < 7; ++j) {
                CHECK(down.at(c, j) == doctest::Approx(lerp_oracle(up.channel(c), j, 7)).epsilon(1e-6));
            }
            CHECK(up.at(c, 0) == seq.at(c, 0));
            CHECK(up.at(c, 13) == seq.at(c, 6));
        }
    }
    SUBCASE("commutes with channel permutation") {
        const auto seq = make_seq("a", 3, 5, 7);
        std::vector<float> swapped;
        for (std::size_t c : {2u, 0u, 1u}) {
            const auto ch = seq.channel(c);
            swapped.insert(swapped.end(), ch.begin(), ch.end());
        }
        const FeatureSequence perm("a", Modality::visual, seq.feature_rate(), 3, 5, swapped);
        const auto a = resample_temporal(seq, 11);
        const auto b = resample_temporal(perm, 11);
        for (std::size_t j = 0; j < 11; ++j) CHECK(b.at(0, j) == a.at(2, j));
    }
    SUBCASE("too short a target") {
        CHECK_THROWS_AS(resample_temporal(make_seq("a", 1, 4, 8), 1), ArgumentError);
    }
}

TEST_CASE("modality fusion") {
    const auto v = make_seq("m", 4, 8, 9);
    const auto a = make_seq("m", 2, 8, 10);
    const auto f = fuse_modalities(v, a);
    CHECK(f.channels() == 6);
    CHECK(f.length() == 8);
    CHECK(f.modality() == Modality::fused);
    for (std::size_t t = 0; t < 8; ++t) {
        CHECK(f.at(0, t) == v.at(0, t));
        CHECK(f.at(4, t) == a.at(0, t));
    }
    const auto twice = fuse_modalities(v, v);
    CHECK(twice.channels() == 8);
    for (std::size_t t = 0; t < 8; ++t) CHECK(twice.at(5, t) == v.at(1, t));

    const auto short_audio = make_seq("m", 2, 4, 11);
    CHECK(fuse_modalities(v, short_audio).length() == 8);
    CHECK_THROWS_AS(fuse_modalities(v, make_seq("other", 2, 8, 12)), ArgumentError);

    // full-width features (4096 visual + 2048 audio) at a short length
    const auto big = fuse_modalities(make_seq("p", 4096, 2, 13), make_seq("p", 2048, 2, 14));
    CHECK(big.channels() == 6144);
}
