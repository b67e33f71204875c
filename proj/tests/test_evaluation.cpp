#include <gtest/gtest.h>

#include <random>

#include "ctxemo/evaluation.hpp"
#include "test_util.hpp"

using namespace ctxemo;
using L = EmotionLabel;

namespace {

// Micro scores straight from (pred, gold) pairs, no confusion matrix involved.
PrfScores brute_micro(const std::vector<L>& preds, const std::vector<L>& golds, const std::vector<L>& evaluated) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (auto c : evaluated)
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (preds[i] == c && golds[i] == c) ++tp;
            if (preds[i] == c && golds[i] != c) ++fp;
            if (preds[i] != c && golds[i] == c) ++fn;
        }
    PrfScores s;
    s.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    s.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

std::vector<L> random_labels(std::size_t n, Rng& rng) {
    std::uniform_int_distribution<std::size_t> d(0, 4);
    std::vector<L> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(label_at(d(rng)));
    return out;
}

PredictionSet preds_of(const std::vector<std::vector<L>>& labels) {
    PredictionSet out;
    for (const auto& d : labels) {
        auto& pd = out.emplace_back();
        for (auto l : d) pd.push_back({"A", "x", l, {}});
    }
    return out;
}

Corpus gold_of(const std::vector<std::vector<L>>& labels) {
    Corpus c;
    for (const auto& d : labels) c.dialogues.push_back(testutil::dialogue(std::vector<std::string>(d.size(), "x"), d));
    return c;
}

}  // namespace

TEST(Confusion, Examples) {
    const std::vector<L> a{L::joy, L::anger};
    auto cm = confusion_matrix(a, a);
    EXPECT_EQ(cm.counts[1][1], 1u);
    EXPECT_EQ(cm.counts[3][3], 1u);
    EXPECT_EQ(cm.total(), 2u);
    EXPECT_EQ(cm.trace(), 2u);

    const std::vector<L> p{L::neutral}, g{L::joy};
    cm = confusion_matrix(p, g);
    EXPECT_EQ(cm.counts[1][0], 1u);
    EXPECT_EQ(cm.total(), 1u);

    const std::vector<L> two{L::joy, L::joy};
    EXPECT_THROW(confusion_matrix(p, two), EvaluationError);
}

TEST(Confusion, BruteForceTally) {
    Rng rng(1);
    const auto p = random_labels(200, rng), g = random_labels(200, rng);
    const auto cm = confusion_matrix(p, g);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            std::size_t n = 0;
            for (std::size_t k = 0; k < 200; ++k) n += index_of(g[k]) == i && index_of(p[k]) == j;
            EXPECT_EQ(cm.counts[i][j], n);
        }
}

TEST(PerClass, Examples) {
    ConfusionMatrix cm;
    cm.add(L::joy, L::joy);
    auto s = per_class_prf(cm, L::joy);
    EXPECT_EQ(s.precision, 1.0);
    EXPECT_EQ(s.recall, 1.0);
    EXPECT_EQ(s.f1, 1.0);

    cm = {};
    cm.add(L::neutral, L::sadness);
    s = per_class_prf(cm, L::sadness);
    EXPECT_EQ(s.precision, 0.0);
    EXPECT_EQ(s.recall, 0.0);
    EXPECT_EQ(s.f1, 0.0);

    // TP=3, FP=1, FN=2 for joy
    cm = {};
    for (int i = 0; i < 3; ++i) cm.add(L::joy, L::joy);
    cm.add(L::neutral, L::joy);
    cm.add(L::joy, L::anger);
    cm.add(L::joy, L::neutral);
    s = per_class_prf(cm, L::joy);
    EXPECT_DOUBLE_EQ(s.precision, 0.75);
    EXPECT_DOUBLE_EQ(s.recall, 0.6);
    EXPECT_NEAR(s.f1, 0.6667, 1e-4);
    EXPECT_NEAR(s.f1, 2 * 0.45 / 1.35, 1e-12);
}

TEST(PerClass, F1BetweenPAndR) {
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        const auto p = random_labels(30, rng), g = random_labels(30, rng);
        const auto cm = confusion_matrix(p, g);
        for (auto l : kAllLabels) {
            const auto s = per_class_prf(cm, l);
            EXPECT_GE(s.f1, std::min(s.precision, s.recall) - 1e-15);
            EXPECT_LE(s.f1, std::max(s.precision, s.recall) + 1e-15);
        }
    }
}

TEST(Micro, PerfectIsOne) {
    Rng rng(3);
    const auto g = random_labels(50, rng);
    const auto cm = confusion_matrix(g, g);
    const std::vector<L> ev{L::joy, L::anger};
    EXPECT_EQ(micro_f1(cm, ev), 1.0);
    EXPECT_EQ(micro_f1(cm, default_evaluated_classes()), 1.0);
}

TEST(Micro, AllClassesEqualsAccuracy) {
    Rng rng(4);
    const std::vector<L> all(kAllLabels.begin(), kAllLabels.end());
    for (int t = 0; t < 100; ++t) {
        const auto p = random_labels(40, rng), g = random_labels(40, rng);
        const auto cm = confusion_matrix(p, g);
        const auto s = micro_scores(cm, all);
        const double acc = double(cm.trace()) / double(cm.total());
        EXPECT_EQ(s.precision, acc);
        EXPECT_EQ(s.recall, acc);
        EXPECT_EQ(s.f1, acc);
    }
}

TEST(Micro, RestrictedSetMatchesBruteForce) {
    Rng rng(5);
    const std::vector<L> ev{L::joy, L::anger};
    for (int t = 0; t < 100; ++t) {
        const auto p = random_labels(60, rng), g = random_labels(60, rng);
        const auto s = micro_scores(confusion_matrix(p, g), ev);
        const auto b = brute_micro(p, g, ev);
        EXPECT_NEAR(s.precision, b.precision, 1e-15);
        EXPECT_NEAR(s.recall, b.recall, 1e-15);
        EXPECT_NEAR(s.f1, b.f1, 1e-12);
    }
}

TEST(Micro, RelabelingInvariance) {
    Rng rng(6);
    std::array<std::size_t, 5> perm{0, 1, 2, 3, 4};
    for (int t = 0; t < 50; ++t) {
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto p = random_labels(40, rng), g = random_labels(40, rng);
        const std::vector<L> ev{L::neutral, L::sadness, L::out_of_domain};
        auto map = [&](const std::vector<L>& v) {
            std::vector<L> out;
            for (auto l : v) out.push_back(label_at(perm[index_of(l)]));
            return out;
        };
        EXPECT_EQ(micro_f1(confusion_matrix(p, g), ev), micro_f1(confusion_matrix(map(p), map(g)), map(ev)));
    }
}

TEST(Micro, RestrictionNeverIncreasesTruePositives) {
    Rng rng(7);
    for (int t = 0; t < 50; ++t) {
        const auto cm = confusion_matrix(random_labels(40, rng), random_labels(40, rng));
        std::size_t all = 0, four = 0;
        for (auto l : kAllLabels) all += cm.true_positives(l);
        for (auto l : kEvaluatedLabels) four += cm.true_positives(l);
        EXPECT_LE(four, all);
    }
}

TEST(Micro, EmptyEvaluatedSetRejected) {
    EXPECT_THROW(micro_f1(ConfusionMatrix{}, {}), UsageError);
}

TEST(F1Form, HarmonicAndLiteral) {
    EXPECT_DOUBLE_EQ(combine_f1(0.75, 0.6), 2 * 0.45 / 1.35);
    EXPECT_DOUBLE_EQ(combine_f1(0.75, 0.6, F1Form::literal_pr), 0.45 / 1.35);
    EXPECT_EQ(combine_f1(0.0, 0.0), 0.0);
    EXPECT_EQ(combine_f1(0.3, 0.3), 0.3);
}

TEST(Evaluate, OodPredictionIsMissExample) {
    const auto gold = gold_of({{L::neutral, L::joy, L::sadness, L::joy}});
    const auto preds = preds_of({{L::neutral, L::joy, L::sadness, L::out_of_domain}});
    const auto r = evaluate(preds, gold, default_evaluated_classes());
    EXPECT_DOUBLE_EQ(r.micro_recall, 0.75);
    EXPECT_DOUBLE_EQ(r.micro_precision, 1.0);
    EXPECT_NEAR(r.micro_f1, 6.0 / 7.0, 1e-12);
    EXPECT_NEAR(r.micro_f1, 0.8571, 1e-4);
    EXPECT_EQ(r.scored_count, 4u);
    EXPECT_EQ(r.skipped_count, 0u);
}

TEST(Evaluate, GoldOodSkipped) {
    const auto gold = gold_of({{L::out_of_domain, L::out_of_domain}, {L::out_of_domain}});
    const auto preds = preds_of({{L::joy, L::neutral}, {L::out_of_domain}});
    const auto r = evaluate(preds, gold, default_evaluated_classes());
    EXPECT_EQ(r.scored_count, 0u);
    EXPECT_EQ(r.skipped_count, 3u);
    EXPECT_EQ(r.micro_f1, 0.0);
    EXPECT_EQ(r.micro_precision, 0.0);
    EXPECT_EQ(r.micro_recall, 0.0);
}

TEST(Evaluate, PerfectPair) {
    const auto gold = gold_of({{L::joy, L::anger}});
    const auto r = evaluate(preds_of({{L::joy, L::anger}}), gold, default_evaluated_classes());
    EXPECT_EQ(r.micro_f1, 1.0);
}

TEST(Evaluate, MatchesBruteForceWithSkipRule) {
    Rng rng(8);
    for (int t = 0; t < 30; ++t) {
        std::vector<std::vector<L>> g, p;
        std::vector<L> fp, fg;
        std::size_t skipped = 0;
        for (int d = 0; d < 5; ++d) {
            g.push_back(random_labels(6, rng));
            p.push_back(random_labels(6, rng));
            for (std::size_t i = 0; i < 6; ++i) {
                if (g.back()[i] == L::out_of_domain) {
                    ++skipped;
                    continue;
                }
                fg.push_back(g.back()[i]);
                fp.push_back(p.back()[i]);
            }
        }
        const auto ev = default_evaluated_classes();
        const auto r = evaluate(preds_of(p), gold_of(g), ev);
        const auto b = brute_micro(fp, fg, ev);
        EXPECT_NEAR(r.micro_f1, b.f1, 1e-12);
        EXPECT_EQ(r.skipped_count, skipped);
        EXPECT_EQ(r.scored_count, fg.size());
    }
}

TEST(Evaluate, LiteralFormFlag) {
    const auto gold = gold_of({{L::neutral, L::joy, L::sadness, L::joy}});
    const auto preds = preds_of({{L::neutral, L::joy, L::sadness, L::out_of_domain}});
    const auto r = evaluate(preds, gold, default_evaluated_classes(), F1Form::literal_pr);
    EXPECT_NEAR(r.micro_f1, 3.0 / 7.0, 1e-12);
}

TEST(Evaluate, MissingPredictionNamesLocation) {
    const auto gold = gold_of({{L::joy}, {L::joy, L::anger}});
    const auto preds = preds_of({{L::joy}, {L::joy}});
    try {
        evaluate(preds, gold, default_evaluated_classes());
        FAIL();
    } catch (const EvaluationError& e) {
        const std::string m = e.what();
        EXPECT_NE(m.find("dialogue 1"), std::string::npos);
        EXPECT_NE(m.find("utterance 1"), std::string::npos);
    }
    EXPECT_THROW(evaluate(preds_of({{L::joy}}), gold, default_evaluated_classes()), EvaluationError);
    EXPECT_THROW(evaluate(preds_of({{L::joy, L::joy}, {L::joy, L::anger}}), gold, default_evaluated_classes()), EvaluationError);
}

TEST(Evaluate, MacroIsMeanPAndMeanR) {
    const auto gold = gold_of({{L::neutral, L::joy, L::joy, L::anger}});
    const auto preds = preds_of({{L::neutral, L::joy, L::anger, L::anger}});
    const std::vector<L> ev{L::joy, L::anger};
    const auto r = evaluate(preds, gold, ev);
    const double mp = (1.0 + 0.5) / 2, mr = (0.5 + 1.0) / 2;
    EXPECT_NEAR(r.macro_f1, 2 * mp * mr / (mp + mr), 1e-12);
}

TEST(Labels, ParseList) {
    EXPECT_EQ(parse_label_list("joy, Anger,joy"), (std::vector<L>{L::joy, L::anger}));
    EXPECT_THROW(parse_label_list(" , "), UsageError);
    EXPECT_THROW(parse_label_list("joy,bliss"), LabelError);
}

TEST(PredictionFile, RoundTripWithFlags) {
    PredictionSet p = preds_of({{L::joy, L::neutral}, {L::out_of_domain}});
    p[0][1].flags.push_back(std::string(kExcludedFallbackFlag));
    const auto text = predictions_to_json(p).dump(2);
    const auto back = parse_predictions(text);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0][0].predicted, L::joy);
    EXPECT_EQ(back[0][1].flags, std::vector<std::string>{"excluded_fallback"});
    EXPECT_EQ(back[1][0].predicted, L::out_of_domain);
    EXPECT_EQ(predictions_to_json(back).dump(2), text);
}

TEST(PredictionFile, Errors) {
    EXPECT_THROW(parse_predictions("[[{]]"), ParseError);
    EXPECT_THROW(parse_predictions("{}"), SchemaError);
    EXPECT_THROW(parse_predictions("[[{\"speaker\":\"A\"}]]"), SchemaError);
    EXPECT_THROW(parse_predictions("[[{\"predicted_emotion\":\"bliss\"}]]"), LabelError);
}

TEST(Report, JsonAndTable) {
    const auto gold = gold_of({{L::neutral, L::joy, L::sadness, L::joy}});
    const auto r = evaluate(preds_of({{L::neutral, L::joy, L::sadness, L::out_of_domain}}), gold, default_evaluated_classes());
    const auto j = report_to_json(r);
    EXPECT_NEAR(j["micro_f1"].get<double>(), 6.0 / 7.0, 1e-12);
    EXPECT_EQ(j["confusion_matrix"][1][4].get<int>(), 1);
    const auto t = report_to_table(r);
    EXPECT_NE(t.find("Micro-f1"), std::string::npos);
    EXPECT_NE(t.find("Neutral"), std::string::npos);
    EXPECT_NE(t.find("Anger"), std::string::npos);
    EXPECT_NE(t.find("85.7"), std::string::npos);
}
