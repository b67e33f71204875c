#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ctxemo/corpus.hpp"
#include "ctxemo/evaluation.hpp"
#include "ctxemo/model.hpp"
#include "ctxemo/training.hpp"

namespace ctxemo {

inline constexpr std::string_view kTieBreakRule = "most_votes>summed_probability>training_frequency>label_index";

struct EnsembleModel {
    std::vector<TrainedModel> members;
    std::vector<std::vector<std::string>> validation_ids;  // per member, dialogue ids of its validation fold
    std::string tie_break = std::string(kTieBreakRule);

    std::size_t k() const { return members.size(); }

    /// Training-set label counts summed over members.
    ClassCounts pooled_counts() const {
        ClassCounts c;
        for (const auto& m : members)
            for (std::size_t i = 0; i < kNumLabels; ++i) c.counts[i] += m.train_counts.counts[i];
        return c;
    }
};

/// Majority vote over member distributions for one utterance. Ties on vote count go to the
/// highest summed probability, then the more frequent training class, then the lower label index.
inline EmotionLabel vote(std::span<const PredictionDistribution> members, const ClassCounts& class_frequency) {
    if (members.empty()) throw UsageError("vote over an empty ensemble");
    std::array<std::size_t, kNumLabels> votes{};
    std::array<double, kNumLabels> prob_sum{};
    for (const auto& m : members) {
        ++votes[index_of(m.predicted_label)];
        for (std::size_t i = 0; i < kNumLabels; ++i) prob_sum[i] += m.probabilities[i];
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumLabels; ++i) {
        const bool better = votes[i] != votes[best]               ? votes[i] > votes[best]
                            : prob_sum[i] != prob_sum[best]       ? prob_sum[i] > prob_sum[best]
                            : class_frequency.counts[i] != class_frequency.counts[best] ? class_frequency.counts[i] > class_frequency.counts[best]
                                                                                         : false;
        if (better) best = i;
    }
    return label_at(best);
}

inline std::vector<PredictedUtterance> ensemble_predict(const EnsembleModel& ensemble, const Dialogue& dialogue, const TokenVocabulary& vocab) {
    if (ensemble.members.empty()) throw UsageError("ensemble has no members");
    const ClassCounts freq = ensemble.pooled_counts();
    std::vector<DialogueScores> scores;
    scores.reserve(ensemble.k());
    for (const auto& m : ensemble.members) scores.push_back(score_dialogue(m, dialogue, vocab));

    std::vector<PredictedUtterance> out;
    std::vector<PredictionDistribution> ballot;
    for (std::size_t i = 0; i < dialogue.utterances.size(); ++i) {
        PredictedUtterance p{dialogue.utterances[i].speaker, dialogue.utterances[i].text, freq.majority(), {}};
        ballot.clear();
        for (const auto& s : scores) {
            if (s.per_utterance[i]) ballot.push_back(*s.per_utterance[i]);
        }
        if (ballot.empty()) {
            p.flags.emplace_back(kExcludedFallbackFlag);
        } else {
            p.predicted = vote(ballot, freq);
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline PredictionSet ensemble_predict_corpus(const EnsembleModel& ensemble, const Corpus& corpus, const TokenVocabulary& vocab) {
    PredictionSet out;
    for (const auto& d : corpus.dialogues) out.push_back(ensemble_predict(ensemble, d, vocab));
    return out;
}

inline std::uint64_t member_seed(std::uint64_t seed, std::size_t member) { return seed * 1000003ULL + member + 1; }

struct EnsembleOptions {
    std::size_t k = 5;
    std::size_t jobs = 1;
    SplitOptions split;
    TrainInit init;
};

/// Trains one member per k-fold split; members are independent and may run on `jobs` threads.
inline EnsembleModel train_kfold_ensemble(const Corpus& corpus, const TokenVocabulary& vocab, const ModelConfig& model_config,
                                          const TrainConfig& config, const EnsembleOptions& options = {}) {
    const auto splits = split_folds(corpus, options.k, config.seed, options.split);
    EnsembleModel ensemble;
    ensemble.members.resize(splits.size());
    for (const auto& s : splits) ensemble.validation_ids.push_back(s.validation_ids);

    auto run = [&](std::size_t m) {
        TrainConfig member_config = config;
        member_config.seed = member_seed(config.seed, m);
        ensemble.members[m] = train(splits[m].train, splits[m].validation, vocab, model_config, member_config, options.init).model;
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, splits.size()));
    if (jobs == 1) {
        for (std::size_t m = 0; m < splits.size(); ++m) run(m);
        return ensemble;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr failure;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (;;) {
                std::size_t m;
                {
                    std::lock_guard lock(mu);
                    if (failure || next >= splits.size()) return;
                    m = next++;
                }
                try {
                    run(m);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
    return ensemble;
}

}  // namespace ctxemo
