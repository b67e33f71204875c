#include <gtest/gtest.h>

#include <cstring>

#include "ctxemo/checkpoint.hpp"
#include "small_model.hpp"
#include "test_util.hpp"

using namespace ctxemo;
using testutil::TempDir;

namespace {

TrainedModel random_model(std::uint64_t seed) {
    TrainedModel m;
    m.config = testutil::small_model_config(40);
    Rng rng(seed);
    m.params = ModelParams::initialize(m.config, rng);
    // Spread values over many magnitudes so float32 rounding is exercised.
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& t : m.params.tensors())
        for (double& v : t.tensor->values()) v = n(rng) * std::pow(10.0, n(rng) * 3.0);
    m.train_counts.counts = {50, 12, 3, 7, 9};
    return m;
}

std::uint32_t u32_at(const std::string& b, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b[off + i])) << (8 * i);
    return v;
}

}  // namespace

TEST(Checkpoint, ModelRoundTripIsBitExactForFloatValues) {
    TempDir dir;
    auto m = random_model(1);
    round_to_float(m.params);
    save_model(m, dir.file("m.ckpt"));
    const auto back = load_model(dir.file("m.ckpt"));
    EXPECT_TRUE(back.params == m.params);
    EXPECT_EQ(back.config.encoder, m.config.encoder);
    EXPECT_EQ(back.config.max_len, m.config.max_len);
    EXPECT_EQ(back.config.hidden_dim(), m.config.hidden_dim());
    EXPECT_EQ(back.train_counts.counts, m.train_counts.counts);
    // Save again: identical bytes.
    save_model(back, dir.file("m2.ckpt"));
    EXPECT_EQ(testutil::read_text(dir.file("m.ckpt")), testutil::read_text(dir.file("m2.ckpt")));
}

TEST(Checkpoint, DoubleValuesRoundToNearestFloat) {
    TempDir dir;
    const auto m = random_model(2);
    save_model(m, dir.file("m.ckpt"));
    const auto back = load_model(dir.file("m.ckpt"));
    auto a = m.params.tensors();
    auto b = back.params.tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t i = 0; i < a[t].tensor->size(); ++i)
            EXPECT_EQ(b[t].tensor->values()[i], static_cast<double>(static_cast<float>(a[t].tensor->values()[i])));
}

TEST(Checkpoint, LittleEndianLayout) {
    Archive a;
    a.meta = {{"kind", "test"}};
    a.tensors.emplace_back("x", Matrix::from_rows({{1.0, -2.5}}));
    const auto b = serialize_archive(a);
    EXPECT_EQ(b.substr(0, 8), "CTXEMOCK");
    EXPECT_EQ(u32_at(b, 8), 1u);
    const std::uint32_t meta_len = u32_at(b, 12);
    EXPECT_EQ(nlohmann::json::parse(b.substr(16, meta_len)), a.meta);
    std::size_t off = 16 + meta_len;
    EXPECT_EQ(u32_at(b, off), 1u);  // tensor count
    EXPECT_EQ(u32_at(b, off + 4), 1u);  // name length
    EXPECT_EQ(b[off + 8], 'x');
    EXPECT_EQ(u32_at(b, off + 9), 1u);
    EXPECT_EQ(u32_at(b, off + 13), 2u);
    EXPECT_EQ(u32_at(b, off + 17), 0x3F800000u);  // 1.0f
    EXPECT_EQ(u32_at(b, off + 21), 0xC0200000u);  // -2.5f
    EXPECT_EQ(b.size(), off + 25);
}

TEST(Checkpoint, EncoderRoundTripAndVocab) {
    TempDir dir;
    const auto m = random_model(3);
    auto enc = m.params.encoder;
    round_to_float(enc);
    auto a = encoder_archive(m.config.encoder, enc);
    const auto vocab = testutil::small_vocab();
    attach_vocab(a, vocab);
    write_archive(a, dir.file("e.ckpt"));
    const auto back = read_archive(dir.file("e.ckpt"));
    const auto ck = encoder_from_archive(back);
    EXPECT_TRUE(ck.params == enc);
    EXPECT_EQ(ck.config, m.config.encoder);
    const auto v = archive_vocab(back);
    ASSERT_TRUE(v.has_value());
    EXPECT_EQ(v->tokens(), vocab.tokens());
    EXPECT_FALSE(archive_vocab(encoder_archive(m.config.encoder, enc)).has_value());
}

TEST(Checkpoint, EncoderLoadsFromModelArchive) {
    TempDir dir;
    auto m = random_model(4);
    round_to_float(m.params);
    save_model(m, dir.file("m.ckpt"));
    const auto ck = load_encoder(dir.file("m.ckpt"));
    EXPECT_TRUE(ck.params == m.params.encoder);
}

TEST(Checkpoint, OptimizerStateStored) {
    const auto m = random_model(5);
    auto opt = AdamState::for_params(m.params);
    opt.step = 17;
    opt.first_moment[0](0, 0) = 0.25;
    const auto a = model_archive(m, &opt);
    EXPECT_EQ(a.meta["optimizer"]["step"].get<int>(), 17);
    const Matrix* first = a.find("optimizer/m/" + m.params.tensors()[0].name);
    ASSERT_NE(first, nullptr);
    EXPECT_EQ((*first)(0, 0), 0.25);
    // Optimizer tensors do not disturb model loading.
    EXPECT_TRUE(model_from_archive(deserialize_archive(serialize_archive(a))).params.encoder.layers.size() == 1);
}

TEST(Checkpoint, Errors) {
    TempDir dir;
    EXPECT_THROW(read_archive(dir.file("missing.ckpt")), CheckpointError);
    testutil::write_file(dir.file("junk"), "NOTACKPT\x01\0\0\0");
    EXPECT_THROW(read_archive(dir.file("junk")), CheckpointError);

    const auto m = random_model(6);
    const auto bytes = serialize_archive(model_archive(m));
    std::string bad_version = bytes;
    bad_version[8] = 2;
    EXPECT_THROW(deserialize_archive(bad_version), CheckpointError);
    EXPECT_THROW(deserialize_archive(bytes.substr(0, bytes.size() - 3)), CheckpointError);
    EXPECT_THROW(deserialize_archive(bytes + "x"), CheckpointError);

    auto a = model_archive(m);
    a.tensors.pop_back();
    EXPECT_THROW(model_from_archive(a), CheckpointError);
    a = model_archive(m);
    a.tensors[0].second = Matrix(2, 2);
    EXPECT_THROW(model_from_archive(a), CheckpointError);
    EXPECT_THROW(model_from_archive(encoder_archive(m.config.encoder, m.params.encoder)), CheckpointError);
    Archive empty;
    EXPECT_THROW(encoder_from_archive(empty), CheckpointError);
}
