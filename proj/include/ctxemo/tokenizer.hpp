#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxemo/corpus.hpp"
#include "ctxemo/errors.hpp"

namespace ctxemo {

using TokenId = std::int32_t;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kContinuationPrefix = "##";

/// Immutable token <-> id table with the five special tokens resolved.
class TokenVocabulary {
public:
    TokenVocabulary() = default;

    /// ids are positions in `tokens`.
    explicit TokenVocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (tokens_[i].empty()) throw VocabError("empty token at line " + std::to_string(i + 1));
            if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
                throw VocabError("duplicate token \"" + tokens_[i] + "\" at line " + std::to_string(i + 1));
            }
        }
        pad_ = require_special(kPadToken);
        unk_ = require_special(kUnkToken);
        cls_ = require_special(kClsToken);
        sep_ = require_special(kSepToken);
        mask_ = require_special(kMaskToken);
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!is_special(static_cast<TokenId>(i))) ordinary_ids_.push_back(static_cast<TokenId>(i));
        }
    }

    std::size_t size() const noexcept { return tokens_.size(); }

    std::optional<TokenId> find(std::string_view token) const {
        auto it = index_.find(std::string(token));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    bool contains(std::string_view token) const { return find(token).has_value(); }

    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    TokenId pad() const noexcept { return pad_; }
    TokenId unk() const noexcept { return unk_; }
    TokenId cls() const noexcept { return cls_; }
    TokenId sep() const noexcept { return sep_; }
    TokenId mask() const noexcept { return mask_; }

    bool is_special(TokenId id) const noexcept {
        return id == pad_ || id == unk_ || id == cls_ || id == sep_ || id == mask_;
    }
    /// Every id that is not one of the five specials, ascending.
    const std::vector<TokenId>& ordinary_ids() const noexcept { return ordinary_ids_; }

private:
    TokenId require_special(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw VocabError("vocabulary is missing special token " + std::string(name));
        return it->second;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    std::vector<TokenId> ordinary_ids_;
    TokenId pad_ = 0, unk_ = 0, cls_ = 0, sep_ = 0, mask_ = 0;
};

inline TokenVocabulary load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VocabError("cannot open vocabulary file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    try {
        return TokenVocabulary(std::move(tokens));
    } catch (const VocabError& e) {
        throw VocabError(path + ": " + e.what());
    }
}

inline void save_vocab(const TokenVocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    for (const auto& t : vocab.tokens()) out << t << '\n';
}

namespace unicode {

// Decodes UTF-8; invalid bytes decode as U+FFFD.
inline std::vector<char32_t> decode(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        char32_t cp = 0xFFFD;
        if (b0 < 0x80) {
            cp = b0;
        } else if ((b0 >> 5) == 0x6) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 >> 4) == 0xE) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 >> 3) == 0x1E) {
            len = 4;
            cp = b0 & 0x07;
        } else {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(0xFFFD);
            break;
        }
        bool ok = true;
        for (std::size_t k = 1; k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b >> 6) != 0x2) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (b & 0x3F);
        }
        if (!ok) {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::string encode(std::u32string_view cps) {
    std::string out;
    for (char32_t c : cps) append_utf8(out, c);
    return out;
}

inline bool is_whitespace(char32_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' || c == 0x85 || c == 0xA0 ||
           c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
           c == 0x3000;
}

// General category P* over the blocks that occur in chat text.
inline bool is_punctuation(char32_t c) {
    if (c < 0x80) {
        return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
    }
    switch (c) {
        case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
        case 0x37E: case 0x387: case 0x55A: case 0x55B: case 0x55C: case 0x55D: case 0x55E: case 0x55F:
        case 0x589: case 0x58A: case 0x5BE: case 0x5C0: case 0x5C3: case 0x5C6: case 0x5F3: case 0x5F4:
        case 0x609: case 0x60A: case 0x60C: case 0x60D: case 0x61B: case 0x61E: case 0x61F:
        case 0x66A: case 0x66B: case 0x66C: case 0x66D: case 0x6D4:
        case 0x964: case 0x965: case 0x970: case 0xE4F: case 0xE5A: case 0xE5B:
            return true;
        default: break;
    }
    return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x2043) || (c >= 0x2045 && c <= 0x2051) ||
           (c >= 0x2053 && c <= 0x205E) || c == 0x207D || c == 0x207E || c == 0x208D || c == 0x208E ||
           (c >= 0x2308 && c <= 0x230B) || c == 0x2329 || c == 0x232A || (c >= 0x2768 && c <= 0x2775) ||
           (c >= 0x27C5 && c <= 0x27C6) || (c >= 0x27E6 && c <= 0x27EF) || (c >= 0x2983 && c <= 0x2998) ||
           (c >= 0x29D8 && c <= 0x29DB) || c == 0x29FC || c == 0x29FD || (c >= 0x2CF9 && c <= 0x2CFC) ||
           c == 0x2CFE || c == 0x2CFF || (c >= 0x2E00 && c <= 0x2E4F) || (c >= 0x3001 && c <= 0x3003) ||
           (c >= 0x3008 && c <= 0x3011) || (c >= 0x3014 && c <= 0x301F) || c == 0x3030 || c == 0x303D ||
           c == 0x30A0 || c == 0x30FB || (c >= 0xFE10 && c <= 0xFE19) || (c >= 0xFE30 && c <= 0xFE52) ||
           (c >= 0xFE54 && c <= 0xFE61) || c == 0xFE63 || c == 0xFE68 || c == 0xFE6A || c == 0xFE6B ||
           (c >= 0xFF01 && c <= 0xFF03) || (c >= 0xFF05 && c <= 0xFF0A) || (c >= 0xFF0C && c <= 0xFF0F) ||
           c == 0xFF1A || c == 0xFF1B || c == 0xFF1F || c == 0xFF20 || (c >= 0xFF3B && c <= 0xFF3D) ||
           c == 0xFF3F || c == 0xFF5B || c == 0xFF5D || (c >= 0xFF5F && c <= 0xFF65);
}

// Simple case folding for ASCII, Latin-1, Latin Extended-A, Greek and Cyrillic.
inline char32_t to_lower(char32_t c) {
    if (c >= 'A' && c <= 'Z') return c + 32;
    if ((c >= 0xC0 && c <= 0xDE) && c != 0xD7) return c + 32;
    if (c >= 0x100 && c <= 0x17F && c != 0x130 && c != 0x131 && c != 0x138 && c != 0x149 && c != 0x17F) {
        const bool odd_upper = (c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E);
        if (odd_upper) return (c % 2 == 1) ? c + 1 : c;
        return (c % 2 == 0) ? c + 1 : c;
    }
    if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return c + 32;
    if (c >= 0x410 && c <= 0x42F) return c + 32;
    if (c >= 0x400 && c <= 0x40F) return c + 80;
    return c;
}

}  // namespace unicode

/// Lowercases and splits text into words at whitespace; punctuation characters become single-character words.
inline std::vector<std::string> pre_tokenize(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char32_t c : unicode::decode(text)) {
        if (unicode::is_whitespace(c) || c == 0 || c == 0xFFFD) {
            flush();
        } else if (unicode::is_punctuation(c)) {
            flush();
            std::string p;
            unicode::append_utf8(p, c);
            words.push_back(std::move(p));
        } else {
            unicode::append_utf8(current, unicode::to_lower(c));
        }
    }
    flush();
    return words;
}

/// Greedy longest-match subword decomposition of one pre-tokenized word. Unmatchable words become a single UNK.
inline std::vector<TokenId> wordpiece(std::string_view word, const TokenVocabulary& vocab) {
    const auto cps = unicode::decode(word);
    std::vector<TokenId> pieces;
    std::size_t start = 0;
    while (start < cps.size()) {
        std::optional<TokenId> match;
        std::size_t end = cps.size();
        for (; end > start; --end) {
            std::string candidate = start > 0 ? std::string(kContinuationPrefix) : std::string();
            candidate += unicode::encode(std::u32string_view(cps.data() + start, end - start));
            if ((match = vocab.find(candidate))) break;
        }
        if (!match) return {vocab.unk()};
        pieces.push_back(*match);
        start = end;
    }
    return pieces;
}

inline std::vector<TokenId> tokenize_utterance(std::string_view text, const TokenVocabulary& vocab) {
    std::vector<TokenId> ids;
    for (const auto& w : pre_tokenize(text)) {
        auto pieces = wordpiece(w, vocab);
        ids.insert(ids.end(), pieces.begin(), pieces.end());
    }
    return ids;
}

/// Half-open token range [start, end) of one utterance inside a packed sequence.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end - start; }
    friend bool operator==(const Span&, const Span&) = default;
};

struct PackedDialogue {
    std::vector<TokenId> token_ids;
    std::vector<Span> spans;
    std::vector<std::size_t> included_utterance_indices;
    std::vector<std::size_t> excluded_utterance_indices;
    std::size_t max_len = 0;
};

/// [CLS] u0 [SEP] u1 [SEP] ... ; stops at the first utterance that would overflow max_len.
inline PackedDialogue pack_dialogue(const Dialogue& dialogue, const TokenVocabulary& vocab, std::size_t max_len) {
    if (max_len < 3) throw UsageError("max_len must be at least 3, got " + std::to_string(max_len));
    PackedDialogue p;
    p.max_len = max_len;
    p.token_ids.push_back(vocab.cls());
    bool overflowed = false;
    for (std::size_t i = 0; i < dialogue.utterances.size(); ++i) {
        if (overflowed) {
            p.excluded_utterance_indices.push_back(i);
            continue;
        }
        const auto toks = tokenize_utterance(dialogue.utterances[i].text, vocab);
        // An utterance of only stripped characters would give an empty span.
        const std::vector<TokenId> fallback{vocab.unk()};
        const auto& use = toks.empty() ? fallback : toks;
        if (p.token_ids.size() + use.size() + 1 > max_len) {
            overflowed = true;
            p.excluded_utterance_indices.push_back(i);
            continue;
        }
        const std::size_t start = p.token_ids.size();
        p.token_ids.insert(p.token_ids.end(), use.begin(), use.end());
        p.spans.push_back({start, p.token_ids.size()});
        p.included_utterance_indices.push_back(i);
        p.token_ids.push_back(vocab.sep());
    }
    return p;
}

/// Two-segment input for next-sentence prediction: [CLS] A [SEP] B [SEP].
struct PackedPair {
    std::vector<TokenId> token_ids;
    std::vector<int> segment_ids;
};

inline PackedPair pack_pair(std::vector<TokenId> a, std::vector<TokenId> b, const TokenVocabulary& vocab, std::size_t max_len) {
    if (max_len < 5) throw UsageError("pair max_len must be at least 5, got " + std::to_string(max_len));
    if (a.empty()) a.push_back(vocab.unk());
    if (b.empty()) b.push_back(vocab.unk());
    // Trim the longer side from the end until the pair fits.
    while (a.size() + b.size() + 3 > max_len) {
        if (a.size() >= b.size()) {
            a.pop_back();
        } else {
            b.pop_back();
        }
    }
    PackedPair p;
    p.token_ids.push_back(vocab.cls());
    p.token_ids.insert(p.token_ids.end(), a.begin(), a.end());
    p.token_ids.push_back(vocab.sep());
    p.segment_ids.assign(p.token_ids.size(), 0);
    p.token_ids.insert(p.token_ids.end(), b.begin(), b.end());
    p.token_ids.push_back(vocab.sep());
    p.segment_ids.resize(p.token_ids.size(), 1);
    return p;
}

/// Builds a vocabulary from corpus words: specials, every word seen at least min_count times,
/// and every single character in both word-initial and "##" continuation form so no word maps to UNK.
inline TokenVocabulary build_vocab(const std::vector<const Corpus*>& corpora, std::size_t min_count = 1) {
    std::map<std::string, std::size_t> word_counts;
    std::map<std::string, std::size_t> chars;
    for (const Corpus* c : corpora) {
        for (const auto& d : c->dialogues) {
            for (const auto& u : d.utterances) {
                for (const auto& w : pre_tokenize(u.text)) {
                    ++word_counts[w];
                    for (char32_t cp : unicode::decode(w)) {
                        std::string s;
                        unicode::append_utf8(s, cp);
                        ++chars[s];
                    }
                }
            }
        }
    }
    std::vector<std::string> tokens{std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                                    std::string(kSepToken), std::string(kMaskToken)};
    std::unordered_set<std::string> seen(tokens.begin(), tokens.end());
    auto add = [&](const std::string& t) {
        if (seen.insert(t).second) tokens.push_back(t);
    };
    for (const auto& [w, n] : word_counts) {
        if (n >= min_count) add(w);
    }
    for (const auto& [ch, n] : chars) add(ch);
    for (const auto& [ch, n] : chars) add(std::string(kContinuationPrefix) + ch);
    return TokenVocabulary(std::move(tokens));
}

}  // namespace ctxemo
