#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ctxemo/corpus.hpp"
#include "ctxemo/tensor.hpp"

namespace ctxemo::synthetic {

// Generators for the bundled toy corpora. Labels follow keyword markers, so a model that reads
// the text can recover them; the contextual variant adds a marker whose label copies the previous
// utterance's label, which can only be resolved from dialogue context.

// Short stock phrases; utterances are built from one or two of them, so word order carries
// structure a masked language model can pick up.
inline const std::vector<std::vector<std::string>>& filler_phrases() {
    static const std::vector<std::vector<std::string>> phrases{
        {"we", "should", "go", "to", "the", "park"},
        {"did", "you", "see", "that", "movie"},
        {"the", "coffee", "is", "ready"},
        {"maybe", "next", "week"},
        {"i", "think", "so"},
        {"call", "me", "when", "you", "get", "home"},
        {"work", "was", "really", "long", "today"},
        {"pizza", "for", "dinner"},
        {"i", "just", "left", "the", "office"},
        {"the", "train", "is", "late", "again"},
        {"where", "is", "my", "phone"},
        {"ross", "is", "at", "the", "apartment"},
        {"rachel", "wants", "a", "coffee"},
        {"monica", "is", "cooking", "tonight"},
        {"joey", "ate", "the", "sandwich"},
        {"okay", "see", "you", "later"},
        {"what", "time", "is", "it"},
        {"let", "me", "check"},
        {"are", "you", "coming", "tonight"},
        {"we", "need", "more", "milk"},
    };
    return phrases;
}

// Two marker words per directly-signalled class.
inline const std::array<std::array<const char*, 2>, kNumLabels>& marker_words() {
    static const std::array<std::array<const char*, 2>, kNumLabels> m{{
        {"", ""},                // neutral: no marker
        {"yay", "awesome"},      // joy
        {"sob", "heartbroken"},  // sadness
        {"grr", "furious"},      // anger
        {"wow", "yikes"},        // out-of-domain (surprise / fear)
    }};
    return m;
}

inline constexpr const char* kEchoMarker = "same";

struct ContextualOptions {
    std::size_t n_dialogues = 500;
    std::size_t min_utterances = 4;
    std::size_t max_utterances = 10;
    std::size_t min_phrases = 1;
    std::size_t max_phrases = 2;
    // neutral, joy, sadness, anger, out-of-domain, echo-previous
    std::array<double, 6> mix{0.35, 0.15, 0.12, 0.12, 0.11, 0.15};
    std::uint64_t seed = 7;
    std::string name = "synthetic";
};

namespace detail {

inline std::string raw_emotion_for(EmotionLabel l, std::size_t marker) {
    if (l == EmotionLabel::out_of_domain) return marker == 0 ? "surprise" : "fear";
    return std::string(label_name(l));
}

inline std::string make_text(std::vector<std::string> words, Rng& rng) {
    std::string text;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) text += ' ';
        text += words[i];
    }
    if (!text.empty()) text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    std::uniform_int_distribution<int> punct(0, 2);
    static constexpr const char* endings[] = {".", "!", "?"};
    text += endings[punct(rng)];
    return text;
}

inline std::vector<std::string> filler(std::size_t min_phrases, std::size_t max_phrases, Rng& rng) {
    const auto& phrases = filler_phrases();
    std::uniform_int_distribution<std::size_t> count(min_phrases, max_phrases);
    std::uniform_int_distribution<std::size_t> pick(0, phrases.size() - 1);
    std::vector<std::string> out;
    for (std::size_t n = count(rng); n > 0; --n) {
        const auto& p = phrases[pick(rng)];
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

inline void insert_at_random(std::vector<std::string>& words, std::string w, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pos(0, words.size());
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos(rng)), std::move(w));
}

}  // namespace detail

/// Keyword-marked dialogues with an "echo" marker whose label is the previous utterance's label.
inline Corpus contextual_corpus(const ContextualOptions& o = {}) {
    Rng rng(o.seed);
    std::uniform_int_distribution<std::size_t> n_utts(o.min_utterances, o.max_utterances);
    std::discrete_distribution<std::size_t> kind(o.mix.begin(), o.mix.end());
    std::discrete_distribution<std::size_t> direct(o.mix.begin(), o.mix.begin() + kNumLabels);
    std::bernoulli_distribution coin(0.5);
    static constexpr const char* speakers[] = {"Ross", "Rachel", "Monica", "Joey"};
    Corpus c;
    c.name = o.name;
    for (std::size_t d = 0; d < o.n_dialogues; ++d) {
        Dialogue dlg;
        dlg.dialogue_id = o.name + ":" + std::to_string(d);
        const std::size_t n = n_utts(rng);
        EmotionLabel prev = EmotionLabel::neutral;
        std::string prev_raw = "neutral";
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t k = kind(rng);
            if (k == 5 && i == 0) k = direct(rng);
            auto words = detail::filler(o.min_phrases, o.max_phrases, rng);
            Utterance u;
            u.speaker = speakers[(i + d) % 4];
            if (k == 5) {
                detail::insert_at_random(words, kEchoMarker, rng);
                u.gold_label = prev;
                u.raw_emotion = prev_raw;
            } else {
                const auto label = label_at(k);
                const std::size_t which = coin(rng) ? 1 : 0;
                if (label != EmotionLabel::neutral) detail::insert_at_random(words, marker_words()[k][which], rng);
                u.gold_label = label;
                u.raw_emotion = detail::raw_emotion_for(label, which);
            }
            u.text = detail::make_text(std::move(words), rng);
            prev = *u.gold_label;
            prev_raw = *u.raw_emotion;
            dlg.utterances.push_back(std::move(u));
        }
        c.dialogues.push_back(std::move(dlg));
    }
    return c;
}

struct ImbalancedOptions {
    std::size_t n_dialogues = 300;
    std::size_t min_utterances = 4;
    std::size_t max_utterances = 10;
    double minority_fraction = 0.10;
    // Probability that a cue word appears, for minority and majority utterances respectively.
    // P(joy | cue) = 0.4: below one half, above the weighted break-even point.
    double cue_given_minority = 0.9;
    double cue_given_majority = 0.15;
    std::uint64_t seed = 11;
    std::string name = "imbalanced";
};

/// Two-emotion (neutral 90% / joy 10%) corpus where the joy cue is also sometimes present on
/// neutral utterances, so an unweighted objective prefers the majority class on cue utterances.
inline Corpus imbalanced_corpus(const ImbalancedOptions& o = {}) {
    Rng rng(o.seed);
    std::uniform_int_distribution<std::size_t> n_utts(o.min_utterances, o.max_utterances);
    std::bernoulli_distribution minority(o.minority_fraction);
    std::bernoulli_distribution cue_min(o.cue_given_minority);
    std::bernoulli_distribution cue_maj(o.cue_given_majority);
    Corpus c;
    c.name = o.name;
    for (std::size_t d = 0; d < o.n_dialogues; ++d) {
        Dialogue dlg;
        dlg.dialogue_id = o.name + ":" + std::to_string(d);
        const std::size_t n = n_utts(rng);
        for (std::size_t i = 0; i < n; ++i) {
            const bool is_joy = minority(rng);
            auto words = detail::filler(1, 2, rng);
            if (is_joy ? cue_min(rng) : cue_maj(rng)) detail::insert_at_random(words, "yay", rng);
            Utterance u;
            u.speaker = i % 2 ? "A" : "B";
            u.gold_label = is_joy ? EmotionLabel::joy : EmotionLabel::neutral;
            u.raw_emotion = std::string(label_name(*u.gold_label));
            u.text = detail::make_text(std::move(words), rng);
            dlg.utterances.push_back(std::move(u));
        }
        c.dialogues.push_back(std::move(dlg));
    }
    return c;
}

/// Same dialogues without gold labels, as a prediction input.
inline Corpus strip_labels(const Corpus& labeled) {
    Corpus out = labeled;
    for (auto& d : out.dialogues)
        for (auto& u : d.utterances) {
            u.gold_label.reset();
            u.raw_emotion.reset();
        }
    return out;
}

}  // namespace ctxemo::synthetic
