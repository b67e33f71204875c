#pragma once

#include <array>
#include <cstddef>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxemo/corpus.hpp"
#include "ctxemo/errors.hpp"

namespace ctxemo {

/// counts[gold][predicted]
struct ConfusionMatrix {
    std::array<std::array<std::size_t, kNumLabels>, kNumLabels> counts{};

    void add(EmotionLabel gold, EmotionLabel predicted) { ++counts[index_of(gold)][index_of(predicted)]; }

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& r : counts)
            for (auto v : r) n += v;
        return n;
    }
    std::size_t trace() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < kNumLabels; ++i) n += counts[i][i];
        return n;
    }
    std::size_t true_positives(EmotionLabel c) const { return counts[index_of(c)][index_of(c)]; }
    std::size_t false_positives(EmotionLabel c) const {
        std::size_t n = 0;
        for (std::size_t g = 0; g < kNumLabels; ++g)
            if (g != index_of(c)) n += counts[g][index_of(c)];
        return n;
    }
    std::size_t false_negatives(EmotionLabel c) const {
        std::size_t n = 0;
        for (std::size_t p = 0; p < kNumLabels; ++p)
            if (p != index_of(c)) n += counts[index_of(c)][p];
        return n;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const EmotionLabel> preds, std::span<const EmotionLabel> golds) {
    if (preds.size() != golds.size()) {
        throw EvaluationError("confusion_matrix: " + std::to_string(preds.size()) + " predictions for " + std::to_string(golds.size()) + " gold labels");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(golds[i], preds[i]);
    return cm;
}

struct PrfScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline double safe_ratio(std::size_t num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

enum class F1Form {
    harmonic,    // 2PR / (P + R)
    literal_pr,  // PR / (P + R), compatibility only
};

inline double combine_f1(double p, double r, F1Form form = F1Form::harmonic) {
    if (p + r == 0.0) return 0.0;
    if (form == F1Form::literal_pr) return p * r / (p + r);
    // 2PP/(2P) is P mathematically; return it exactly.
    if (p == r) return p;
    return 2.0 * p * r / (p + r);
}

inline PrfScores per_class_prf(const ConfusionMatrix& cm, EmotionLabel c) {
    const std::size_t tp = cm.true_positives(c);
    PrfScores s;
    s.precision = safe_ratio(tp, tp + cm.false_positives(c));
    s.recall = safe_ratio(tp, tp + cm.false_negatives(c));
    s.f1 = combine_f1(s.precision, s.recall);
    return s;
}

/// Micro-averaged scores pooled over `evaluated` classes.
inline PrfScores micro_scores(const ConfusionMatrix& cm, std::span<const EmotionLabel> evaluated, F1Form form = F1Form::harmonic) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (auto c : evaluated) {
        tp += cm.true_positives(c);
        fp += cm.false_positives(c);
        fn += cm.false_negatives(c);
    }
    PrfScores s;
    s.precision = safe_ratio(tp, tp + fp);
    s.recall = safe_ratio(tp, tp + fn);
    s.f1 = combine_f1(s.precision, s.recall, form);
    return s;
}

inline double micro_f1(const ConfusionMatrix& cm, std::span<const EmotionLabel> evaluated) {
    if (evaluated.empty()) throw UsageError("micro_f1 needs at least one evaluated class");
    return micro_scores(cm, evaluated).f1;
}

inline std::vector<EmotionLabel> default_evaluated_classes() { return {kEvaluatedLabels.begin(), kEvaluatedLabels.end()}; }

/// Comma-separated label names, e.g. "neutral,joy,sadness,anger".
inline std::vector<EmotionLabel> parse_label_list(const std::string& csv) {
    std::vector<EmotionLabel> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto name = normalize_label_string(item);
        if (name.empty()) continue;
        const auto l = parse_label(name);
        if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    }
    if (out.empty()) throw UsageError("evaluated class list is empty");
    return out;
}

// ---------------------------------------------------------------------------
// Prediction files

inline constexpr std::string_view kExcludedFallbackFlag = "excluded_fallback";

struct PredictedUtterance {
    std::string speaker;
    std::string text;
    EmotionLabel predicted = EmotionLabel::neutral;
    std::vector<std::string> flags;
};

using PredictionSet = std::vector<std::vector<PredictedUtterance>>;

inline nlohmann::ordered_json predictions_to_json(const PredictionSet& preds) {
    auto root = nlohmann::ordered_json::array();
    for (const auto& d : preds) {
        auto jd = nlohmann::ordered_json::array();
        for (const auto& u : d) {
            nlohmann::ordered_json ju;
            ju["speaker"] = u.speaker;
            ju["utterance"] = u.text;
            ju["predicted_emotion"] = std::string(label_name(u.predicted));
            if (!u.flags.empty()) ju["flags"] = u.flags;
            jd.push_back(std::move(ju));
        }
        root.push_back(std::move(jd));
    }
    return root;
}

inline PredictionSet parse_predictions(std::string_view text, const std::string& name = "predictions") {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(name + ": malformed JSON at line " + std::to_string(detail::line_of_offset(text, e.byte)) + ": " + e.what());
    }
    if (!root.is_array()) throw SchemaError(name + ": top level must be a list of dialogues");
    PredictionSet out;
    for (std::size_t di = 0; di < root.size(); ++di) {
        const auto& jd = root[di];
        if (!jd.is_array()) throw SchemaError(name + ": dialogue " + std::to_string(di) + " is not a list");
        auto& dialogue = out.emplace_back();
        for (std::size_t ui = 0; ui < jd.size(); ++ui) {
            const auto& ju = jd[ui];
            const std::string where = name + ": dialogue " + std::to_string(di) + ", utterance " + std::to_string(ui);
            if (!ju.is_object() || !ju.contains("predicted_emotion") || !ju["predicted_emotion"].is_string()) {
                throw SchemaError(where + ": missing string key \"predicted_emotion\"");
            }
            PredictedUtterance u;
            u.speaker = ju.value("speaker", "");
            u.text = ju.value("utterance", "");
            u.predicted = parse_label(normalize_label_string(ju["predicted_emotion"].get<std::string>()));
            if (ju.contains("flags")) u.flags = ju["flags"].get<std::vector<std::string>>();
            dialogue.push_back(std::move(u));
        }
    }
    return out;
}

inline PredictionSet load_predictions(const std::string& path) { return parse_predictions(detail::read_file(path), path); }

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
    std::array<PrfScores, kNumLabels> per_class{};
    double micro_precision = 0.0;
    double micro_recall = 0.0;
    double micro_f1 = 0.0;
    // Means of per-class precision and recall over the evaluated classes; informational only.
    double macro_f1 = 0.0;
    std::size_t scored_count = 0;
    std::size_t skipped_count = 0;
    std::vector<EmotionLabel> evaluated_classes;
    ConfusionMatrix confusion;
};

inline MetricsReport report_from_confusion(const ConfusionMatrix& cm, std::span<const EmotionLabel> evaluated, F1Form form = F1Form::harmonic) {
    MetricsReport r;
    r.confusion = cm;
    r.evaluated_classes.assign(evaluated.begin(), evaluated.end());
    for (auto l : kAllLabels) r.per_class[index_of(l)] = per_class_prf(cm, l);
    const auto micro = micro_scores(cm, evaluated, form);
    r.micro_precision = micro.precision;
    r.micro_recall = micro.recall;
    r.micro_f1 = micro.f1;
    double mp = 0.0, mr = 0.0;
    for (auto c : evaluated) {
        mp += r.per_class[index_of(c)].precision;
        mr += r.per_class[index_of(c)].recall;
    }
    if (!evaluated.empty()) {
        mp /= static_cast<double>(evaluated.size());
        mr /= static_cast<double>(evaluated.size());
    }
    r.macro_f1 = combine_f1(mp, mr);
    r.scored_count = cm.total();
    return r;
}

/// Scores predictions against gold labels. Gold Out-Of-Domain utterances are skipped; an
/// Out-Of-Domain prediction on a scored utterance is a miss for its gold class and no one's false positive.
inline MetricsReport evaluate(const PredictionSet& predictions, const Corpus& gold, std::span<const EmotionLabel> evaluated,
                              F1Form form = F1Form::harmonic) {
    if (evaluated.empty()) throw UsageError("evaluated class set is empty");
    if (predictions.size() != gold.dialogues.size()) {
        throw EvaluationError("prediction file has " + std::to_string(predictions.size()) + " dialogues, gold corpus has " +
                              std::to_string(gold.dialogues.size()));
    }
    ConfusionMatrix cm;
    std::size_t skipped = 0;
    for (std::size_t d = 0; d < gold.dialogues.size(); ++d) {
        const auto& gd = gold.dialogues[d];
        const auto& pd = predictions[d];
        for (std::size_t u = 0; u < gd.utterances.size(); ++u) {
            if (u >= pd.size()) {
                throw EvaluationError("missing prediction for dialogue " + std::to_string(d) + " (" + gd.dialogue_id + "), utterance " + std::to_string(u));
            }
            const auto& g = gd.utterances[u].gold_label;
            if (!g) throw EvaluationError("gold corpus has an unlabeled utterance: dialogue " + std::to_string(d) + ", utterance " + std::to_string(u));
            if (*g == EmotionLabel::out_of_domain) {
                ++skipped;
                continue;
            }
            cm.add(*g, pd[u].predicted);
        }
        if (pd.size() > gd.utterances.size()) {
            throw EvaluationError("dialogue " + std::to_string(d) + " has " + std::to_string(pd.size()) + " predictions for " +
                                  std::to_string(gd.utterances.size()) + " utterances");
        }
    }
    auto report = report_from_confusion(cm, evaluated, form);
    report.skipped_count = skipped;
    return report;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["micro_precision"] = r.micro_precision;
    j["micro_recall"] = r.micro_recall;
    j["micro_f1"] = r.micro_f1;
    j["macro_f1"] = r.macro_f1;
    j["scored_count"] = r.scored_count;
    j["skipped_count"] = r.skipped_count;
    auto ev = nlohmann::ordered_json::array();
    for (auto l : r.evaluated_classes) ev.push_back(std::string(label_name(l)));
    j["evaluated_classes"] = ev;
    nlohmann::ordered_json pc;
    for (auto l : kAllLabels) {
        const auto& s = r.per_class[index_of(l)];
        pc[std::string(label_name(l))] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    }
    j["per_class"] = pc;
    auto cm = nlohmann::ordered_json::array();
    for (const auto& row : r.confusion.counts) cm.push_back(row);
    j["confusion_matrix"] = cm;
    return j;
}

/// Micro-f1 | Neutral | Joy | Sadness | Anger, in percent.
inline std::string report_to_table(const MetricsReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(1);
    out << std::left << std::setw(10) << "Micro-f1";
    for (auto l : kEvaluatedLabels) out << std::setw(10) << label_title(l);
    out << '\n' << std::setw(10) << 100.0 * r.micro_f1;
    for (auto l : kEvaluatedLabels) out << std::setw(10) << 100.0 * r.per_class[index_of(l)].f1;
    out << '\n';
    return out.str();
}

}  // namespace ctxemo
