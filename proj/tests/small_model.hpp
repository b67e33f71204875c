#pragma once

#include "ctxemo/model.hpp"
#include "ctxemo/synthetic.hpp"
#include "ctxemo/tokenizer.hpp"
#include "ctxemo/training.hpp"

namespace testutil {

// A model small enough to train in well under a second per epoch.
inline ctxemo::ModelConfig small_model_config(std::size_t vocab_size, std::size_t max_len = 64) {
    ctxemo::ModelConfig m;
    m.encoder.n_layers = 1;
    m.encoder.n_heads = 2;
    m.encoder.d_model = 16;
    m.encoder.d_ff = 32;
    m.encoder.max_positions = 64;
    m.encoder.vocab_size = vocab_size;
    m.encoder.dropout_rate = 0.1;
    m.max_len = max_len;
    return m;
}

inline ctxemo::Corpus small_corpus(std::size_t dialogues, std::uint64_t seed = 3) {
    ctxemo::synthetic::ContextualOptions o;
    o.n_dialogues = dialogues;
    o.max_utterances = 6;
    o.seed = seed;
    return ctxemo::synthetic::contextual_corpus(o);
}

inline ctxemo::TokenVocabulary small_vocab() {
    // Covers every word the generators can emit.
    const auto c = small_corpus(400, 99);
    return ctxemo::build_vocab({&c}, 1);
}

inline ctxemo::TrainConfig quick_train(std::size_t epochs, std::uint64_t seed = 1) {
    ctxemo::TrainConfig t;
    t.epochs = epochs;
    t.seed = seed;
    return t;
}

}  // namespace testutil
