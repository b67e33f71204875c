#include <gtest/gtest.h>

#include "ctxemo/run_config.hpp"
#include "test_util.hpp"

using namespace ctxemo;

TEST(RunConfig, Defaults) {
    const RunConfig c;
    EXPECT_EQ(c.preset, "toy");
    EXPECT_EQ(c.pooling, PoolingMode::max);
    EXPECT_EQ(c.max_len, 512u);
    EXPECT_EQ(c.k, 5u);
    EXPECT_EQ(c.evaluated_classes, default_evaluated_classes());
    EXPECT_EQ(c.f1_form, F1Form::harmonic);
    const auto m = c.model_config(100);
    EXPECT_EQ(m.encoder.n_layers, 2u);
    EXPECT_EQ(m.encoder.d_model, 64u);
    EXPECT_EQ(m.encoder.vocab_size, 100u);
    EXPECT_EQ(m.hidden_dim(), 32u);
}

TEST(RunConfig, ParsesOverrides) {
    const auto j = nlohmann::json::parse(R"({
        "encoder": {"n_layers": 1, "d_model": 32},
        "pooling": "mean", "max_len": 128, "seed": 42,
        "train": {"epochs": 3, "eta_max": 0.01},
        "post_train": {"steps": 50},
        "evaluated_classes": ["joy", "anger"],
        "f1_form": "literal_pr", "augmented_policy": "train_only", "k": 3
    })");
    auto c = run_config_from_json(j);
    EXPECT_EQ(c.pooling, PoolingMode::mean);
    EXPECT_EQ(c.max_len, 128u);
    EXPECT_EQ(c.train.epochs, 3u);
    EXPECT_EQ(c.train.eta_max, 0.01);
    EXPECT_EQ(c.train.clip_norm, 1.0);
    EXPECT_EQ(c.post_train.steps, 50u);
    EXPECT_EQ(c.evaluated_classes, (std::vector<EmotionLabel>{EmotionLabel::joy, EmotionLabel::anger}));
    EXPECT_EQ(c.f1_form, F1Form::literal_pr);
    EXPECT_EQ(c.augmented_policy, AugmentedPolicy::train_only);
    EXPECT_EQ(c.k, 3u);
    const auto e = c.encoder_config(50);
    EXPECT_EQ(e.n_layers, 1u);
    EXPECT_EQ(e.d_model, 32u);
    EXPECT_EQ(e.n_heads, 4u);
    c.apply_seed();
    EXPECT_EQ(c.train.seed, 42u);
    EXPECT_EQ(c.post_train.seed, 42u);
    // Comma string form for the class list.
    EXPECT_EQ(run_config_from_json(nlohmann::json::parse(R"({"evaluated_classes": "neutral,joy"})")).evaluated_classes.size(), 2u);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"epochs": 3})")), UsageError);
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"pooling": "avg"})")), UsageError);
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"max_len": "long"})")), UsageError);
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"evaluated_classes": ["bliss"]})")), UsageError);
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"f1_form": "x"})")), UsageError);
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse("[1]")), UsageError);
}

TEST(RunConfig, JsonRoundTripAndFile) {
    testutil::TempDir dir;
    RunConfig c;
    c.seed = 5;
    c.pooling = PoolingMode::mean;
    c.train.epochs = 2;
    c.evaluated_classes = {EmotionLabel::sadness};
    c.augmented_corpora = {"a.json", "b.json"};
    testutil::write_file(dir.file("c.json"), to_json(c).dump(2));
    const auto back = load_run_config(dir.file("c.json"));
    EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
    testutil::write_file(dir.file("bad.json"), "{ nope");
    EXPECT_THROW(load_run_config(dir.file("bad.json")), UsageError);
    EXPECT_THROW(load_run_config(dir.file("absent.json")), UsageError);
}

TEST(RunConfig, PaperScalePreset) {
    RunConfig c;
    c.preset = "paper-scale";
    const auto e = c.encoder_config(30522);
    EXPECT_EQ(e.n_layers, 12u);
    EXPECT_EQ(e.n_heads, 12u);
    EXPECT_EQ(e.d_model, 768u);
    EXPECT_EQ(e.max_positions, 512u);
    EXPECT_EQ(c.model_config(30522).hidden_dim(), 384u);
    c.preset = "huge";
    EXPECT_THROW(c.encoder_config(10), UsageError);
}
