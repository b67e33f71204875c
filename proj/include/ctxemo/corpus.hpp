#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "ctxemo/errors.hpp"
#include "ctxemo/tensor.hpp"

namespace ctxemo {

enum class EmotionLabel : std::size_t { neutral = 0, joy = 1, sadness = 2, anger = 3, out_of_domain = 4 };

inline constexpr std::size_t kNumLabels = 5;

inline constexpr std::array<EmotionLabel, kNumLabels> kAllLabels{
    EmotionLabel::neutral, EmotionLabel::joy, EmotionLabel::sadness, EmotionLabel::anger, EmotionLabel::out_of_domain};

// The four emotions scored by the challenge.
inline constexpr std::array<EmotionLabel, 4> kEvaluatedLabels{
    EmotionLabel::neutral, EmotionLabel::joy, EmotionLabel::sadness, EmotionLabel::anger};

constexpr std::size_t index_of(EmotionLabel l) noexcept { return static_cast<std::size_t>(l); }
constexpr EmotionLabel label_at(std::size_t i) noexcept { return static_cast<EmotionLabel>(i); }

inline std::string_view label_name(EmotionLabel l) {
    switch (l) {
        case EmotionLabel::neutral: return "neutral";
        case EmotionLabel::joy: return "joy";
        case EmotionLabel::sadness: return "sadness";
        case EmotionLabel::anger: return "anger";
        case EmotionLabel::out_of_domain: return "out-of-domain";
    }
    return "?";
}

inline std::string_view label_title(EmotionLabel l) {
    switch (l) {
        case EmotionLabel::neutral: return "Neutral";
        case EmotionLabel::joy: return "Joy";
        case EmotionLabel::sadness: return "Sadness";
        case EmotionLabel::anger: return "Anger";
        case EmotionLabel::out_of_domain: return "Out-Of-Domain";
    }
    return "?";
}

/// Collapses the 7+1 raw EmotionLines emotions onto the 5-way label space.
inline EmotionLabel map_label(std::string_view raw) {
    if (raw == "neutral") return EmotionLabel::neutral;
    if (raw == "joy") return EmotionLabel::joy;
    if (raw == "sadness") return EmotionLabel::sadness;
    if (raw == "anger") return EmotionLabel::anger;
    if (raw == "fear" || raw == "surprise" || raw == "disgust" || raw == "non-neutral") return EmotionLabel::out_of_domain;
    throw LabelError("unknown emotion label \"" + std::string(raw) + "\"");
}

/// Accepts everything map_label does plus the canonical "out-of-domain" name.
inline EmotionLabel parse_label(std::string_view name) {
    if (name == "out-of-domain" || name == "ood") return EmotionLabel::out_of_domain;
    return map_label(name);
}

inline std::string normalize_label_string(std::string_view raw) {
    std::size_t b = 0, e = raw.size();
    while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
    std::string out(raw.substr(b, e - b));
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

struct Utterance {
    std::string speaker;
    std::string text;
    std::optional<EmotionLabel> gold_label;
    // Source emotion string, kept so a labeled corpus serializes back unchanged.
    std::optional<std::string> raw_emotion;
};

struct Dialogue {
    std::string dialogue_id;
    std::vector<Utterance> utterances;
    // Back-translated copies; see SplitOptions.
    bool augmented = false;
};

struct Corpus {
    std::string name;
    std::vector<Dialogue> dialogues;

    std::size_t utterance_count() const {
        std::size_t n = 0;
        for (const auto& d : dialogues) n += d.utterances.size();
        return n;
    }
};

enum class CorpusFormat { labeled, unlabeled };

namespace detail {

inline std::size_t line_of_offset(std::string_view text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace detail

/// Parses corpus JSON text: a list of dialogues, each a list of utterance objects.
inline Corpus parse_corpus(std::string_view text, CorpusFormat format, std::string name = "corpus") {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(name + ": malformed JSON at line " + std::to_string(detail::line_of_offset(text, e.byte)) + ": " + e.what());
    }
    if (!root.is_array()) throw SchemaError(name + ": top level must be a list of dialogues");

    Corpus corpus;
    corpus.name = name;
    corpus.dialogues.reserve(root.size());
    for (std::size_t di = 0; di < root.size(); ++di) {
        const auto& jd = root[di];
        const std::string where = name + ": dialogue " + std::to_string(di);
        if (!jd.is_array()) throw SchemaError(where + " is not a list of utterances");
        if (jd.empty()) throw SchemaError(where + " has no utterances");
        Dialogue d;
        d.dialogue_id = name + ":" + std::to_string(di);
        for (std::size_t ui = 0; ui < jd.size(); ++ui) {
            const auto& ju = jd[ui];
            const std::string uwhere = where + ", utterance " + std::to_string(ui);
            if (!ju.is_object()) throw SchemaError(uwhere + " is not an object");
            auto require_string = [&](const char* key) -> std::string {
                auto it = ju.find(key);
                if (it == ju.end()) throw SchemaError(uwhere + ": missing key \"" + key + "\"");
                if (!it->is_string()) throw SchemaError(uwhere + ": key \"" + key + "\" must be a string");
                return it->get<std::string>();
            };
            Utterance u;
            u.speaker = require_string("speaker");
            u.text = require_string("utterance");
            if (detail::is_blank(u.text)) throw SchemaError(uwhere + ": utterance text is empty");
            if (format == CorpusFormat::labeled || ju.contains("emotion")) {
                std::string raw = require_string("emotion");
                u.gold_label = map_label(normalize_label_string(raw));
                u.raw_emotion = std::move(raw);
            }
            d.utterances.push_back(std::move(u));
        }
        corpus.dialogues.push_back(std::move(d));
    }
    return corpus;
}

inline Corpus load_corpus(const std::string& path, CorpusFormat format) {
    return parse_corpus(detail::read_file(path), format, path);
}

inline nlohmann::ordered_json corpus_to_json(const Corpus& corpus) {
    auto root = nlohmann::ordered_json::array();
    for (const auto& d : corpus.dialogues) {
        auto jd = nlohmann::ordered_json::array();
        for (const auto& u : d.utterances) {
            nlohmann::ordered_json ju;
            ju["speaker"] = u.speaker;
            ju["utterance"] = u.text;
            if (u.raw_emotion) {
                ju["emotion"] = *u.raw_emotion;
            } else if (u.gold_label) {
                ju["emotion"] = std::string(label_name(*u.gold_label));
            }
            jd.push_back(std::move(ju));
        }
        root.push_back(std::move(jd));
    }
    return root;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << corpus_to_json(corpus).dump(1) << '\n';
}

/// Concatenates corpora; dialogue ids stay unique because they carry the source name.
inline Corpus merge_corpora(const std::vector<Corpus>& parts, std::string name = "merged") {
    Corpus out;
    out.name = std::move(name);
    std::unordered_set<std::string> seen;
    for (const auto& c : parts) {
        for (const auto& d : c.dialogues) {
            if (!seen.insert(d.dialogue_id).second) throw SchemaError("duplicate dialogue id " + d.dialogue_id);
            out.dialogues.push_back(d);
        }
    }
    return out;
}

struct ClassCounts {
    std::array<std::size_t, kNumLabels> counts{};

    std::size_t operator[](EmotionLabel l) const { return counts[index_of(l)]; }
    std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
    bool valid() const { return total() > 0; }

    /// Most frequent label; ties go to the lower label index.
    EmotionLabel majority() const {
        return label_at(static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin()));
    }
};

inline ClassCounts class_counts(const Corpus& corpus) {
    ClassCounts cc;
    for (const auto& d : corpus.dialogues) {
        for (std::size_t i = 0; i < d.utterances.size(); ++i) {
            const auto& u = d.utterances[i];
            if (!u.gold_label) throw StatsError(d.dialogue_id + ": utterance " + std::to_string(i) + " is unlabeled");
            ++cc.counts[index_of(*u.gold_label)];
        }
    }
    return cc;
}

// Table-2 "length of a dialogue": whitespace-separated words summed over its utterances.
inline std::size_t dialogue_word_count(const Dialogue& d) {
    std::size_t words = 0;
    for (const auto& u : d.utterances) {
        std::istringstream ss(u.text);
        std::string w;
        while (ss >> w) ++words;
    }
    return words;
}

struct CorpusStats {
    std::size_t n_dialogues = 0;
    std::size_t n_utterances = 0;
    double avg_utterances_per_dialogue = 0.0;
    double avg_dialogue_length = 0.0;
    std::array<double, kNumLabels> label_fractions{};
};

inline CorpusStats corpus_stats(const Corpus& corpus) {
    if (corpus.dialogues.empty()) throw StatsError(corpus.name + ": corpus has no dialogues");
    CorpusStats s;
    const ClassCounts cc = class_counts(corpus);
    s.n_dialogues = corpus.dialogues.size();
    s.n_utterances = cc.total();
    std::size_t words = 0;
    for (const auto& d : corpus.dialogues) words += dialogue_word_count(d);
    s.avg_utterances_per_dialogue = static_cast<double>(s.n_utterances) / static_cast<double>(s.n_dialogues);
    s.avg_dialogue_length = static_cast<double>(words) / static_cast<double>(s.n_dialogues);
    for (std::size_t i = 0; i < kNumLabels; ++i) {
        s.label_fractions[i] = static_cast<double>(cc.counts[i]) / static_cast<double>(s.n_utterances);
    }
    return s;
}

inline nlohmann::ordered_json stats_to_json(const CorpusStats& s) {
    nlohmann::ordered_json j;
    j["n_dialogues"] = s.n_dialogues;
    j["n_utterances"] = s.n_utterances;
    j["avg_utterances_per_dialogue"] = s.avg_utterances_per_dialogue;
    j["avg_dialogue_length"] = s.avg_dialogue_length;
    nlohmann::ordered_json fr;
    for (auto l : kAllLabels) fr[std::string(label_name(l))] = s.label_fractions[index_of(l)];
    j["label_fractions"] = fr;
    return j;
}

inline std::string stats_to_table(const CorpusStats& s) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(2);
    out << "#Dialogues / #Utterances  " << s.n_dialogues << " / " << s.n_utterances << '\n';
    out << "Avg. utterances/dialogue  " << s.avg_utterances_per_dialogue << '\n';
    out << "Avg. dialogue length      " << s.avg_dialogue_length << '\n';
    for (auto l : kAllLabels) {
        std::string title(label_title(l));
        title.resize(26, ' ');
        out << title << 100.0 * s.label_fractions[index_of(l)] << "%\n";
    }
    return out.str();
}

enum class AugmentedPolicy {
    // Augmented dialogues are folded like any other.
    include,
    // Augmented dialogues never enter a validation fold; they are added to every train side.
    train_only,
};

struct SplitOptions {
    AugmentedPolicy augmented = AugmentedPolicy::include;
};

struct FoldSplit {
    Corpus train;
    Corpus validation;
    std::vector<std::string> validation_ids;
};

/// Shuffles whole dialogues by seed and partitions them into k near-equal folds.
inline std::vector<FoldSplit> split_folds(const Corpus& corpus, std::size_t k, std::uint64_t seed, SplitOptions options = {}) {
    if (k < 2) throw SplitError("k-fold split requires k >= 2, got " + std::to_string(k));
    std::vector<std::size_t> foldable;
    std::vector<std::size_t> always_train;
    for (std::size_t i = 0; i < corpus.dialogues.size(); ++i) {
        if (options.augmented == AugmentedPolicy::train_only && corpus.dialogues[i].augmented) {
            always_train.push_back(i);
        } else {
            foldable.push_back(i);
        }
    }
    if (k > foldable.size()) {
        throw SplitError("k=" + std::to_string(k) + " exceeds the number of foldable dialogues (" + std::to_string(foldable.size()) + ")");
    }
    Rng rng(seed);
    std::shuffle(foldable.begin(), foldable.end(), rng);

    // The first (n mod k) folds get one extra dialogue.
    const std::size_t n = foldable.size();
    std::vector<std::size_t> fold_of(n);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = n / k + (f < n % k ? 1 : 0);
        for (std::size_t j = 0; j < size; ++j) fold_of[pos++] = f;
    }

    std::vector<FoldSplit> splits(k);
    for (std::size_t f = 0; f < k; ++f) {
        auto& s = splits[f];
        s.train.name = corpus.name + "/fold" + std::to_string(f) + "/train";
        s.validation.name = corpus.name + "/fold" + std::to_string(f) + "/validation";
        for (std::size_t j = 0; j < n; ++j) {
            const auto& d = corpus.dialogues[foldable[j]];
            if (fold_of[j] == f) {
                s.validation.dialogues.push_back(d);
                s.validation_ids.push_back(d.dialogue_id);
            } else {
                s.train.dialogues.push_back(d);
            }
        }
        for (std::size_t i : always_train) s.train.dialogues.push_back(corpus.dialogues[i]);
    }
    return splits;
}

}  // namespace ctxemo
