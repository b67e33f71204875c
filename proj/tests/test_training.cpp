#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ctxemo/training.hpp"
#include "small_model.hpp"
#include "test_util.hpp"

using namespace ctxemo;

namespace {

const TokenVocabulary& vocab() {
    static const TokenVocabulary v = testutil::small_vocab();
    return v;
}

}  // namespace

TEST(Train, ZeroEpochsReturnsInitUnchanged) {
    const auto mc = testutil::small_model_config(vocab().size());
    const auto corpus = testutil::small_corpus(6);
    Rng rng(5);
    TrainInit init;
    init.encoder = EncoderParams::initialize(mc.encoder, rng);
    init.classifier = ClassifierParams::initialize(16, 8, 0.1, rng);
    const auto r = train(corpus, {}, vocab(), mc, testutil::quick_train(0), init);
    EXPECT_TRUE(r.log.empty());
    EXPECT_TRUE(r.model.params.encoder == *init.encoder);
    EXPECT_TRUE(r.model.params.classifier == *init.classifier);
    EXPECT_EQ(r.optimizer.step, 0u);
}

TEST(Train, SameSeedSameParameters) {
    const auto mc = testutil::small_model_config(vocab().size());
    const auto corpus = testutil::small_corpus(12);
    const auto val = testutil::small_corpus(4, 77);
    const auto a = train(corpus, val, vocab(), mc, testutil::quick_train(2, 9));
    const auto b = train(corpus, val, vocab(), mc, testutil::quick_train(2, 9));
    EXPECT_TRUE(a.model.params == b.model.params);
    ASSERT_EQ(a.log.size(), 2u);
    for (std::size_t e = 0; e < 2; ++e) {
        EXPECT_EQ(a.log[e].train_loss, b.log[e].train_loss);
        EXPECT_EQ(a.log[e].validation_micro_f1, b.log[e].validation_micro_f1);
    }
    const auto c = train(corpus, val, vocab(), mc, testutil::quick_train(2, 10));
    EXPECT_FALSE(a.model.params == c.model.params);
}

TEST(Train, LogAndScheduleFollowFractionalEpochs) {
    const auto mc = testutil::small_model_config(vocab().size());
    const auto corpus = testutil::small_corpus(8);
    auto tc = testutil::quick_train(3);
    tc.eta_min = 1e-5;
    const auto r = train(corpus, corpus, vocab(), mc, tc);
    ASSERT_EQ(r.log.size(), 3u);
    EXPECT_EQ(r.optimizer.step, 24u);
    for (std::size_t e = 0; e < 3; ++e) {
        EXPECT_EQ(r.log[e].epoch, e + 1);
        // The last step of epoch e runs at T_cur = e + 7/8.
        const double t = static_cast<double>(e) + 7.0 / 8.0;
        EXPECT_NEAR(r.log[e].lr, 1e-5 + 0.5 * (1e-3 - 1e-5) * (1.0 + std::cos(std::numbers::pi * t / 3.0)), 1e-15);
        ASSERT_TRUE(r.log[e].validation_micro_f1.has_value());
        EXPECT_GE(*r.log[e].validation_micro_f1, 0.0);
        EXPECT_LE(*r.log[e].validation_micro_f1, 1.0);
        EXPECT_TRUE(std::isfinite(r.log[e].train_loss));
    }
    tc.epoch_granular_lr = true;
    const auto g = train(corpus, {}, vocab(), mc, tc);
    EXPECT_DOUBLE_EQ(g.log[0].lr, 1e-3);
    EXPECT_FALSE(g.log[0].validation_micro_f1.has_value());
}

TEST(Train, LossFallsOnLearnableCorpus) {
    const auto mc = testutil::small_model_config(vocab().size());
    const auto corpus = testutil::small_corpus(40);
    const auto r = train(corpus, {}, vocab(), mc, testutil::quick_train(4, 2));
    EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(Train, ZeroSpanDialogueIsLoggedNotFatal) {
    auto mc = testutil::small_model_config(vocab().size(), 3);
    Corpus c;
    c.dialogues.push_back(testutil::dialogue({"we should go", "yay"}, {EmotionLabel::neutral, EmotionLabel::joy}));
    c.dialogues.push_back(testutil::dialogue({"sob", "okay"}, {EmotionLabel::sadness, EmotionLabel::neutral}));
    const auto r = train(c, {}, vocab(), mc, testutil::quick_train(2));
    ASSERT_EQ(r.log.size(), 2u);
    EXPECT_EQ(r.log[0].skipped_dialogues, 1u);
    EXPECT_EQ(r.optimizer.step, 2u);
}

TEST(Train, ConfigErrors) {
    auto mc = testutil::small_model_config(vocab().size() + 1);
    const auto corpus = testutil::small_corpus(4);
    EXPECT_THROW(train(corpus, {}, vocab(), mc, testutil::quick_train(1)), UsageError);
    mc = testutil::small_model_config(vocab().size());
    auto tc = testutil::quick_train(1);
    tc.eta_min = 1.0;
    EXPECT_THROW(train(corpus, {}, vocab(), mc, tc), UsageError);
    tc = testutil::quick_train(1);
    tc.batch_size_dialogues = 0;
    EXPECT_THROW(train(corpus, {}, vocab(), mc, tc), UsageError);
    Corpus unlabeled = corpus;
    unlabeled.dialogues[0].utterances[0].gold_label.reset();
    EXPECT_THROW(train(unlabeled, {}, vocab(), mc, testutil::quick_train(1)), StatsError);
}

TEST(Train, BatchesOfDialogues) {
    const auto mc = testutil::small_model_config(vocab().size());
    const auto corpus = testutil::small_corpus(10);
    auto tc = testutil::quick_train(1);
    tc.batch_size_dialogues = 4;
    const auto r = train(corpus, {}, vocab(), mc, tc);
    EXPECT_EQ(r.optimizer.step, 3u);
}

TEST(Train, UnweightedObjectiveDiffers) {
    const auto mc = testutil::small_model_config(vocab().size());
    const auto corpus = testutil::small_corpus(8);
    auto tc = testutil::quick_train(1);
    const auto a = train(corpus, {}, vocab(), mc, tc);
    tc.class_weighted = false;
    const auto b = train(corpus, {}, vocab(), mc, tc);
    EXPECT_FALSE(a.model.params == b.model.params);
}

TEST(PostTrain, ZeroStepsReturnsInit) {
    auto ec = testutil::small_model_config(vocab().size()).encoder;
    const auto corpus = testutil::small_corpus(6);
    PostTrainConfig pc;
    pc.pair_max_len = 32;
    Rng rng(3);
    const auto init = EncoderParams::initialize(ec, rng);
    const auto r = post_train(corpus, vocab(), ec, pc, init);
    EXPECT_TRUE(r.params == init);
    EXPECT_TRUE(r.curve.empty());
    // Without init: the seeded fresh initialization.
    pc.seed = 4;
    const auto fresh = post_train(corpus, vocab(), ec, pc);
    Rng init_rng(SeedStreams(4).init);
    EXPECT_TRUE(fresh.params == EncoderParams::initialize(ec, init_rng));
}

TEST(PostTrain, ReproducibleCurve) {
    auto ec = testutil::small_model_config(vocab().size()).encoder;
    const auto corpus = testutil::small_corpus(10);
    PostTrainConfig pc;
    pc.steps = 6;
    pc.pairs_per_step = 3;
    pc.pair_max_len = 32;
    pc.seed = 8;
    const auto a = post_train(corpus, vocab(), ec, pc);
    const auto b = post_train(corpus, vocab(), ec, pc);
    ASSERT_EQ(a.curve.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(a.curve[i].mlm_loss, b.curve[i].mlm_loss);
        EXPECT_EQ(a.curve[i].nsp_loss, b.curve[i].nsp_loss);
        EXPECT_EQ(a.curve[i].step, i);
        EXPECT_GT(a.curve[i].nsp_loss, 0.0);
    }
    EXPECT_DOUBLE_EQ(a.curve[0].lr, pc.eta_max);
    EXPECT_TRUE(a.params == b.params);
}

TEST(PostTrain, Errors) {
    auto ec = testutil::small_model_config(vocab().size()).encoder;
    PostTrainConfig pc;
    pc.steps = 1;
    pc.pair_max_len = 32;
    Corpus one;
    one.dialogues.push_back(testutil::dialogue({"a", "b"}));
    EXPECT_THROW(post_train(one, vocab(), ec, pc), DataError);
    pc.pair_max_len = 65;
    EXPECT_THROW(post_train(testutil::small_corpus(3), vocab(), ec, pc), UsageError);
}

TEST(PostTrain, WindowedLoss) {
    std::vector<PostTrainLogRow> curve;
    for (int i = 0; i < 10; ++i) curve.push_back({static_cast<std::size_t>(i), 10.0 - i, 0.0, 0.0});
    const auto [first, last] = windowed_mlm_loss(curve, 3);
    EXPECT_DOUBLE_EQ(first, 9.0);
    EXPECT_DOUBLE_EQ(last, 2.0);
    EXPECT_EQ(windowed_mlm_loss({}, 5), (std::pair{0.0, 0.0}));
}

TEST(TrainConfig, JsonRoundTrip) {
    TrainConfig c;
    c.epochs = 7;
    c.eta_max = 3e-4;
    c.class_weighted = false;
    c.seed = 12;
    const auto back = train_config_from_json(to_json(c));
    EXPECT_EQ(back.epochs, 7u);
    EXPECT_EQ(back.eta_max, 3e-4);
    EXPECT_FALSE(back.class_weighted);
    EXPECT_EQ(back.seed, 12u);
    EXPECT_EQ(TrainConfig::paper_scale().eta_max, 2e-5);
    EXPECT_EQ(TrainConfig{}.epochs, 10u);
    EXPECT_EQ(TrainConfig{}.batch_size_dialogues, 1u);
    EXPECT_EQ(TrainConfig{}.clip_norm, 1.0);
}
