#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxemo/corpus.hpp"
#include "ctxemo/encoder.hpp"
#include "ctxemo/errors.hpp"
#include "ctxemo/evaluation.hpp"
#include "ctxemo/model.hpp"
#include "ctxemo/pooling.hpp"
#include "ctxemo/training.hpp"

namespace ctxemo {

/// Everything a command-line run reads. Every field has a default, and the default paths point at
/// the bundled synthetic corpus, so a fully-defaulted config runs from the repository root.
struct RunConfig {
    // encoder
    std::string preset = "toy";
    nlohmann::json encoder_overrides = nlohmann::json::object();  // applied on top of the preset
    // classifier head and input
    std::size_t classifier_hidden = 0;
    double classifier_dropout = 0.1;
    PoolingMode pooling = PoolingMode::max;
    std::size_t max_len = 512;
    // optimization
    TrainConfig train;
    PostTrainConfig post_train;
    std::uint64_t seed = 0;
    // data
    std::string vocab;  // empty: build from the training corpora
    std::size_t vocab_min_count = 1;
    std::string train_corpus = "data/synthetic/train.json";
    std::vector<std::string> augmented_corpora;
    AugmentedPolicy augmented_policy = AugmentedPolicy::include;
    std::string validation_corpus = "data/synthetic/dev.json";
    std::string corpus = "data/synthetic/test.json";  // input of stats / predict / evaluate
    std::string predictions = "predictions.json";
    std::string checkpoint = "runs/train/model.ckpt";  // model file or ensemble directory
    std::string encoder_checkpoint;                    // optional post-trained encoder for train / ensemble
    std::vector<EmotionLabel> evaluated_classes = default_evaluated_classes();
    F1Form f1_form = F1Form::harmonic;
    // ensemble
    std::size_t k = 5;
    std::size_t jobs = 1;
    // output
    std::string out;
    std::string format = "json";

    /// Seed fan-out: the top-level seed drives both training stages.
    void apply_seed() {
        train.seed = seed;
        post_train.seed = seed;
    }

    EncoderConfig encoder_config(std::size_t vocab_size) const {
        return encoder_config_from_json(encoder_overrides, EncoderConfig::preset(preset, vocab_size));
    }

    ModelConfig model_config(std::size_t vocab_size) const {
        ModelConfig m;
        m.encoder = encoder_config(vocab_size);
        m.classifier_hidden = classifier_hidden;
        m.classifier_dropout = classifier_dropout;
        m.pooling = pooling;
        m.max_len = max_len;
        return m;
    }
};

inline std::string augmented_policy_name(AugmentedPolicy p) { return p == AugmentedPolicy::include ? "include" : "train_only"; }

inline AugmentedPolicy parse_augmented_policy(const std::string& s) {
    if (s == "include") return AugmentedPolicy::include;
    if (s == "train_only") return AugmentedPolicy::train_only;
    throw UsageError("augmented_policy must be include or train_only, got \"" + s + "\"");
}

inline std::string f1_form_name(F1Form f) { return f == F1Form::harmonic ? "harmonic" : "literal_pr"; }

inline F1Form parse_f1_form(const std::string& s) {
    if (s == "harmonic") return F1Form::harmonic;
    if (s == "literal_pr") return F1Form::literal_pr;
    throw UsageError("f1_form must be harmonic or literal_pr, got \"" + s + "\"");
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["preset"] = c.preset;
    j["encoder"] = c.encoder_overrides;
    j["classifier_hidden"] = c.classifier_hidden;
    j["classifier_dropout"] = c.classifier_dropout;
    j["pooling"] = pooling_name(c.pooling);
    j["max_len"] = c.max_len;
    j["train"] = to_json(c.train);
    j["post_train"] = to_json(c.post_train);
    j["seed"] = c.seed;
    j["vocab"] = c.vocab;
    j["vocab_min_count"] = c.vocab_min_count;
    j["train_corpus"] = c.train_corpus;
    j["augmented_corpora"] = c.augmented_corpora;
    j["augmented_policy"] = augmented_policy_name(c.augmented_policy);
    j["validation_corpus"] = c.validation_corpus;
    j["corpus"] = c.corpus;
    j["predictions"] = c.predictions;
    j["checkpoint"] = c.checkpoint;
    j["encoder_checkpoint"] = c.encoder_checkpoint;
    auto classes = nlohmann::ordered_json::array();
    for (auto l : c.evaluated_classes) classes.push_back(std::string(label_name(l)));
    j["evaluated_classes"] = classes;
    j["f1_form"] = f1_form_name(c.f1_form);
    j["k"] = c.k;
    j["jobs"] = c.jobs;
    j["out"] = c.out;
    j["format"] = c.format;
    return j;
}

/// Unknown keys are rejected so that typos surface as usage errors.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {}) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    static const std::vector<std::string> known{"preset", "encoder", "classifier_hidden", "classifier_dropout", "pooling", "max_len",
                                                "train", "post_train", "seed", "vocab", "vocab_min_count", "train_corpus",
                                                "augmented_corpora", "augmented_policy", "validation_corpus", "corpus", "predictions",
                                                "checkpoint", "encoder_checkpoint", "evaluated_classes", "f1_form", "k", "jobs", "out", "format"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) throw UsageError("unknown config key \"" + key + "\"");
    }
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        };
        get("preset", base.preset);
        if (j.contains("encoder")) base.encoder_overrides.update(j.at("encoder"));
        get("classifier_hidden", base.classifier_hidden);
        get("classifier_dropout", base.classifier_dropout);
        if (j.contains("pooling")) base.pooling = parse_pooling(j.at("pooling").get<std::string>());
        get("max_len", base.max_len);
        if (j.contains("train")) base.train = train_config_from_json(j.at("train"), base.train);
        if (j.contains("post_train")) base.post_train = post_train_config_from_json(j.at("post_train"), base.post_train);
        get("seed", base.seed);
        get("vocab", base.vocab);
        get("vocab_min_count", base.vocab_min_count);
        get("train_corpus", base.train_corpus);
        get("augmented_corpora", base.augmented_corpora);
        if (j.contains("augmented_policy")) base.augmented_policy = parse_augmented_policy(j.at("augmented_policy").get<std::string>());
        get("validation_corpus", base.validation_corpus);
        get("corpus", base.corpus);
        get("predictions", base.predictions);
        get("checkpoint", base.checkpoint);
        get("encoder_checkpoint", base.encoder_checkpoint);
        if (j.contains("evaluated_classes")) {
            const auto& v = j.at("evaluated_classes");
            std::string csv;
            if (v.is_string()) {
                csv = v.get<std::string>();
            } else {
                for (const auto& item : v) csv += item.get<std::string>() + ",";
            }
            base.evaluated_classes = parse_label_list(csv);
        }
        if (j.contains("f1_form")) base.f1_form = parse_f1_form(j.at("f1_form").get<std::string>());
        get("k", base.k);
        get("jobs", base.jobs);
        get("out", base.out);
        get("format", base.format);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("bad config value: ") + e.what());
    } catch (const LabelError& e) {
        throw UsageError(e.what());
    }
    return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError(path + ": config is not valid JSON: " + e.what());
    }
    return run_config_from_json(j, std::move(base));
}

}  // namespace ctxemo
