#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxemo/classifier.hpp"
#include "ctxemo/corpus.hpp"
#include "ctxemo/encoder.hpp"
#include "ctxemo/evaluation.hpp"
#include "ctxemo/pooling.hpp"
#include "ctxemo/tokenizer.hpp"

namespace ctxemo {

/// Everything needed to rebuild a dialogue classifier's architecture.
struct ModelConfig {
    EncoderConfig encoder;
    std::size_t classifier_hidden = 0;  // 0 means d_model / 2
    double classifier_dropout = 0.1;
    PoolingMode pooling = PoolingMode::max;
    std::size_t max_len = 512;

    std::size_t hidden_dim() const { return classifier_hidden == 0 ? encoder.d_model / 2 : classifier_hidden; }

    void validate() const {
        encoder.validate();
        if (max_len < 3) throw UsageError("max_len must be at least 3");
        if (max_len > encoder.max_positions) {
            throw UsageError("max_len " + std::to_string(max_len) + " exceeds encoder max_positions " + std::to_string(encoder.max_positions));
        }
        if (!(classifier_dropout >= 0.0 && classifier_dropout < 1.0)) throw UsageError("classifier dropout must be in [0, 1)");
    }
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["encoder"] = to_json(c.encoder);
    j["classifier_hidden"] = c.hidden_dim();
    j["classifier_dropout"] = c.classifier_dropout;
    j["pooling"] = pooling_name(c.pooling);
    j["max_len"] = c.max_len;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
    if (j.contains("encoder")) base.encoder = encoder_config_from_json(j.at("encoder"), base.encoder);
    if (j.contains("classifier_hidden")) base.classifier_hidden = j.at("classifier_hidden").get<std::size_t>();
    if (j.contains("classifier_dropout")) base.classifier_dropout = j.at("classifier_dropout").get<double>();
    if (j.contains("pooling")) base.pooling = parse_pooling(j.at("pooling").get<std::string>());
    if (j.contains("max_len")) base.max_len = j.at("max_len").get<std::size_t>();
    return base;
}

struct ModelParams {
    EncoderParams encoder;
    ClassifierParams classifier;

    static ModelParams initialize(const ModelConfig& config, Rng& rng) {
        config.validate();
        ModelParams p;
        p.encoder = EncoderParams::initialize(config.encoder, rng);
        p.classifier = ClassifierParams::initialize(config.encoder.d_model, config.hidden_dim(), config.classifier_dropout, rng);
        return p;
    }

    std::vector<NamedTensor> tensors() {
        auto out = encoder.tensors();
        for (auto& t : out) t.name = "encoder/" + t.name;
        for (auto& t : classifier.tensors()) out.push_back({"classifier/" + t.name, t.tensor});
        return out;
    }
    std::vector<ConstNamedTensor> tensors() const {
        auto out = encoder.tensors();
        for (auto& t : out) t.name = "encoder/" + t.name;
        for (auto& t : classifier.tensors()) out.push_back({"classifier/" + t.name, t.tensor});
        return out;
    }

    friend bool operator==(const ModelParams& a, const ModelParams& b) { return a.encoder == b.encoder && a.classifier == b.classifier; }
};

/// Forward state of one packed dialogue, kept for back-propagation.
struct DialogueTrace {
    std::vector<TokenId> token_ids;
    std::vector<Span> spans;
    EncoderTrace encoder;
    Matrix token_reps;
    ClassifierTrace classifier;
};

/// pack -> embed -> encode -> pool -> classifier logits (one row per included utterance).
inline Matrix dialogue_logits(const PackedDialogue& packed, const ModelParams& params, const ModelConfig& config, Mode mode, Rng* rng = nullptr,
                              DialogueTrace* trace = nullptr) {
    if (packed.spans.empty()) return Matrix(0, kNumLabels);
    const Matrix emb = embed(packed, params.encoder);
    const std::vector<bool> mask(packed.token_ids.size(), true);
    Matrix reps = encode(emb, mask, params.encoder, config.encoder, mode, rng, trace ? &trace->encoder : nullptr);
    const Matrix pooled = pool(reps, packed.spans, config.pooling);
    Matrix logits = classifier_logits(pooled, params.classifier, mode, rng, trace ? &trace->classifier : nullptr);
    if (trace) {
        trace->token_ids = packed.token_ids;
        trace->spans = packed.spans;
        trace->token_reps = std::move(reps);
    }
    return logits;
}

inline void dialogue_backward(const Matrix& grad_logits, const DialogueTrace& trace, const ModelParams& params, const ModelConfig& config,
                              ModelParams& grads) {
    const Matrix g_pooled = classifier_backward(grad_logits, trace.classifier, params.classifier, grads.classifier);
    const Matrix g_reps = pool_backward(trace.token_reps, trace.spans, config.pooling, g_pooled);
    const Matrix g_emb = encode_backward(g_reps, trace.encoder, params.encoder, config.encoder, grads.encoder);
    embed_backward(g_emb, trace.token_ids, {}, grads.encoder);
}

inline std::vector<PredictionDistribution> distributions_from_logits(const Matrix& logits) {
    std::vector<PredictionDistribution> out;
    out.reserve(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) out.push_back(distribution_from_logits(logits.row(r)));
    return out;
}

/// Gold labels of the utterances included in a packing.
inline std::vector<EmotionLabel> included_gold(const Dialogue& dialogue, const PackedDialogue& packed) {
    std::vector<EmotionLabel> gold;
    gold.reserve(packed.included_utterance_indices.size());
    for (std::size_t i : packed.included_utterance_indices) {
        const auto& g = dialogue.utterances[i].gold_label;
        if (!g) throw DataError(dialogue.dialogue_id + ": utterance " + std::to_string(i) + " has no gold label");
        gold.push_back(*g);
    }
    return gold;
}

/// A fine-tuned classifier with what it needs to label new dialogues.
struct TrainedModel {
    ModelConfig config;
    ModelParams params;
    ClassCounts train_counts;  // drives the fallback label and ensemble tie-breaks

    EmotionLabel fallback_label() const { return train_counts.majority(); }
};

/// Per-utterance distributions for one dialogue; excluded utterances carry no distribution.
struct DialogueScores {
    PackedDialogue packed;
    std::vector<std::optional<PredictionDistribution>> per_utterance;
};

inline DialogueScores score_dialogue(const TrainedModel& model, const Dialogue& dialogue, const TokenVocabulary& vocab) {
    DialogueScores s;
    s.packed = pack_dialogue(dialogue, vocab, model.config.max_len);
    s.per_utterance.resize(dialogue.utterances.size());
    const auto dists = distributions_from_logits(dialogue_logits(s.packed, model.params, model.config, Mode::inference));
    for (std::size_t k = 0; k < dists.size(); ++k) s.per_utterance[s.packed.included_utterance_indices[k]] = dists[k];
    return s;
}

/// Argmax label per utterance; excluded utterances get the training-majority class and an `excluded_fallback` flag.
inline std::vector<PredictedUtterance> predict_dialogue(const TrainedModel& model, const Dialogue& dialogue, const TokenVocabulary& vocab) {
    const auto scores = score_dialogue(model, dialogue, vocab);
    std::vector<PredictedUtterance> out;
    for (std::size_t i = 0; i < dialogue.utterances.size(); ++i) {
        PredictedUtterance p{dialogue.utterances[i].speaker, dialogue.utterances[i].text, model.fallback_label(), {}};
        if (scores.per_utterance[i]) {
            p.predicted = scores.per_utterance[i]->predicted_label;
        } else {
            p.flags.emplace_back(kExcludedFallbackFlag);
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline PredictionSet predict_corpus(const TrainedModel& model, const Corpus& corpus, const TokenVocabulary& vocab) {
    PredictionSet out;
    out.reserve(corpus.dialogues.size());
    for (const auto& d : corpus.dialogues) out.push_back(predict_dialogue(model, d, vocab));
    return out;
}

}  // namespace ctxemo
