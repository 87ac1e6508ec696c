#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace ood;
using ood::testing::kind_of;
using ood::testing::TempDir;

namespace {

std::vector<unsigned char> header(std::uint32_t count, std::uint32_t dim) {
    std::vector<unsigned char> h = {'E', 'M', 'B', '1', 1, 1, 0, 0};
    for (int i = 0; i < 4; ++i) h.push_back((count >> (8 * i)) & 0xFF);
    for (int i = 0; i < 4; ++i) h.push_back((dim >> (8 * i)) & 0xFF);
    return h;
}

}  // namespace

TEST(EmbeddingIo, ReadsStatedContent) {
    TempDir dir;
    const auto set = EmbeddingSet::from_rows({{1, 2, 3}, {4, 5, 6}}, 3);
    write_embedding_file(set, dir / "a.emb");
    const auto back = read_embedding_file(dir / "a.emb");
    EXPECT_EQ(back.count(), 2u);
    EXPECT_EQ(back.dim(), 3u);
    EXPECT_EQ(back.row(1)[0], 4.0f);
    EXPECT_EQ(back.row(1)[2], 6.0f);
    EXPECT_EQ(back, set);
    EXPECT_EQ(back.meta().label, "a");
}

TEST(EmbeddingIo, EmptySetKeepsDim) {
    TempDir dir;
    write_embedding_file(EmbeddingSet(0, 512, {}), dir / "e.emb");
    const auto back = read_embedding_file(dir / "e.emb");
    EXPECT_TRUE(back.empty());
    EXPECT_EQ(back.dim(), 512u);
    EXPECT_EQ(std::filesystem::file_size(dir / "e.emb"), 16u);
}

TEST(EmbeddingIo, ZeroVectorLayout) {
    const auto bytes = emb1::encode(EmbeddingSet::from_rows({{0, 0}}, 2));
    ASSERT_EQ(bytes.size(), 24u);
    const std::vector<unsigned char> expected_header = {'E', 'M', 'B', '1', 1, 1, 0, 0,
                                                        1,   0,   0,   0,   2, 0, 0, 0};
    EXPECT_TRUE(std::equal(expected_header.begin(), expected_header.end(), bytes.begin()));
    for (std::size_t i = 16; i < 24; ++i) EXPECT_EQ(bytes[i], 0);
}

TEST(EmbeddingIo, LittleEndianFloatPayload) {
    const auto bytes = emb1::encode(EmbeddingSet::from_rows({{1.0f}}, 1));
    // 1.0f == 0x3F800000
    EXPECT_EQ(bytes[16], 0x00);
    EXPECT_EQ(bytes[17], 0x00);
    EXPECT_EQ(bytes[18], 0x80);
    EXPECT_EQ(bytes[19], 0x3F);
}

TEST(EmbeddingIo, DeterministicWrites) {
    TempDir dir;
    const auto set = ood::testing::random_set(7, 5, 3);
    write_embedding_file(set, dir / "x.emb");
    write_embedding_file(set, dir / "y.emb");
    EXPECT_EQ(read_file_bytes(dir / "x.emb"), read_file_bytes(dir / "y.emb"));
}

TEST(EmbeddingIo, RoundTripProperty) {
    TempDir dir;
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t count = std::uniform_int_distribution<std::size_t>(0, 40)(rng);
        const std::size_t dim = std::uniform_int_distribution<std::size_t>(1, 33)(rng);
        // Arbitrary finite bit patterns, including subnormals and negative zero.
        std::vector<float> flat;
        while (flat.size() < count * dim) {
            const auto bits = static_cast<std::uint32_t>(rng());
            const float f = std::bit_cast<float>(bits);
            if (std::isfinite(f)) flat.push_back(f);
        }
        const EmbeddingSet set(count, dim, flat);
        const auto path = dir / ("r" + std::to_string(trial) + ".emb");
        write_embedding_file(set, path);
        const auto back = read_embedding_file(path);
        ASSERT_EQ(back, set);
        ASSERT_EQ(emb1::encode(back), read_file_bytes(path));
    }
}

TEST(EmbeddingIo, RejectsBadHeaders) {
    auto good = emb1::encode(EmbeddingSet::from_rows({{1, 2}}, 2));

    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(kind_of([&] { emb1::decode(bad_magic); }), ErrorKind::Format);

    auto bad_version = good;
    bad_version[4] = 2;
    EXPECT_EQ(kind_of([&] { emb1::decode(bad_version); }), ErrorKind::Format);

    auto bad_dtype = good;
    bad_dtype[5] = 2;
    EXPECT_EQ(kind_of([&] { emb1::decode(bad_dtype); }), ErrorKind::Format);

    auto bad_reserved = good;
    bad_reserved[7] = 1;
    EXPECT_EQ(kind_of([&] { emb1::decode(bad_reserved); }), ErrorKind::Format);

    auto zero_dim = header(0, 0);
    EXPECT_EQ(kind_of([&] { emb1::decode(zero_dim); }), ErrorKind::Format);
}

TEST(EmbeddingIo, RejectsTruncationAndTrailingBytes) {
    auto good = emb1::encode(EmbeddingSet::from_rows({{1, 2}, {3, 4}}, 2));
    auto truncated = good;
    truncated.pop_back();
    EXPECT_EQ(kind_of([&] { emb1::decode(truncated); }), ErrorKind::Corruption);

    auto short_header = std::vector<unsigned char>(good.begin(), good.begin() + 10);
    EXPECT_EQ(kind_of([&] { emb1::decode(short_header); }), ErrorKind::Corruption);

    auto trailing = good;
    trailing.push_back(0);
    EXPECT_EQ(kind_of([&] { emb1::decode(trailing); }), ErrorKind::Corruption);
}

TEST(EmbeddingIo, RejectsOversizedShape) {
    // count * dim * 4 overflows 64 bits only for huge u32 pairs; either way it can never
    // match the (tiny) payload and must be rejected without allocating.
    auto huge = header(0xFFFFFFFFu, 0xFFFFFFFFu);
    EXPECT_EQ(kind_of([&] { emb1::decode(huge); }), ErrorKind::Size);
}

TEST(EmbeddingIo, RejectsNonFinite) {
    auto bytes = header(1, 2);
    const float vals[2] = {1.0f, std::numeric_limits<float>::quiet_NaN()};
    for (float f : vals) {
        const auto b = std::bit_cast<std::uint32_t>(f);
        for (int i = 0; i < 4; ++i) bytes.push_back((b >> (8 * i)) & 0xFF);
    }
    EXPECT_EQ(kind_of([&] { emb1::decode(bytes); }), ErrorKind::Data);

    EXPECT_EQ(kind_of([] { EmbeddingSet(1, 1, {std::numeric_limits<float>::infinity()}); }),
              ErrorKind::Data);
}

TEST(EmbeddingIo, MissingFileIsIoError) {
    EXPECT_EQ(kind_of([] { read_embedding_file("/nonexistent/dir/x.emb"); }), ErrorKind::Io);
}

TEST(Manifest, ElevenEntries) {
    TempDir dir;
    DatasetManifest m;
    m.entries.push_back({"id.emb", Role::Id, "", "resnet50"});
    for (auto t : kCanonicalOodTypes) {
        m.entries.push_back({std::string(t) + ".emb", Role::Ood, std::string(t), "resnet50"});
    }
    m.prompt_files = {"normal.emb", "anom.emb"};
    write_manifest(m, dir / "manifest.json");
    const auto back = read_manifest(dir / "manifest.json");
    ASSERT_EQ(back.entries.size(), 11u);
    EXPECT_EQ(back.entries, m.entries);
    EXPECT_EQ(back.prompt_files, m.prompt_files);
    EXPECT_EQ(back.base_dir, dir.path());
    EXPECT_EQ(back.resolve("id.emb"), dir / "id.emb");
    EXPECT_EQ(back.resolve("/abs/x.emb"), std::filesystem::path("/abs/x.emb"));
}

TEST(Manifest, EmptyEntriesValid) {
    const auto m = parse_manifest(R"({"entries": [], "prompt_files": {"normal": "", "anomalous": ""}})");
    EXPECT_TRUE(m.entries.empty());
}

TEST(Manifest, ValidationErrors) {
    EXPECT_EQ(kind_of([] {
                  parse_manifest(R"({"entries":[{"path":"a","role":"ood","ood_type":"","encoder":"x"}]})");
              }),
              ErrorKind::Validation);
    EXPECT_EQ(kind_of([] {
                  parse_manifest(R"({"entries":[{"path":"a","role":"id","ood_type":"fog","encoder":"x"}]})");
              }),
              ErrorKind::Validation);
    EXPECT_EQ(kind_of([] {
                  parse_manifest(R"({"entries":[{"path":"a","role":"maybe","ood_type":"","encoder":"x"}]})");
              }),
              ErrorKind::Validation);
    EXPECT_EQ(kind_of([] {
                  parse_manifest(R"({"entries":[{"path":"a","role":"id","ood_type":"","encoder":"x"},
                                                {"path":"a","role":"ood","ood_type":"fog","encoder":"x"}]})");
              }),
              ErrorKind::Validation);
    EXPECT_EQ(kind_of([] { parse_manifest(R"({"nope": 1})"); }), ErrorKind::Validation);
    EXPECT_EQ(kind_of([] { parse_manifest("{not json"); }), ErrorKind::Format);
}
