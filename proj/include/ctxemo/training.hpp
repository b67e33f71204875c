#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxemo/classifier.hpp"
#include "ctxemo/corpus.hpp"
#include "ctxemo/encoder.hpp"
#include "ctxemo/evaluation.hpp"
#include "ctxemo/model.hpp"
#include "ctxemo/optim.hpp"
#include "ctxemo/tokenizer.hpp"

namespace ctxemo {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size_dialogues = 1;
    // Tuned for the toy encoder trained from random init; paper_scale() keeps the BERT fine-tuning rate.
    double eta_max = 1e-3;
    double eta_min = 0.0;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::size_t post_train_steps = 0;
    // Unit weights reduce the objective to plain cross-entropy.
    bool class_weighted = true;
    // Advance T_cur once per epoch instead of once per optimizer step.
    bool epoch_granular_lr = false;

    static TrainConfig paper_scale() {
        TrainConfig c;
        c.eta_max = 2e-5;
        return c;
    }

    void validate() const {
        if (batch_size_dialogues == 0) throw UsageError("batch_size_dialogues must be positive");
        if (!(eta_max > 0.0) || eta_min < 0.0 || eta_min > eta_max) throw UsageError("need 0 <= eta_min <= eta_max, eta_max > 0");
        if (!(clip_norm > 0.0)) throw UsageError("clip_norm must be positive");
    }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size_dialogues", c.batch_size_dialogues},
            {"eta_max", c.eta_max},
            {"eta_min", c.eta_min},
            {"clip_norm", c.clip_norm},
            {"seed", c.seed},
            {"post_train_steps", c.post_train_steps},
            {"class_weighted", c.class_weighted},
            {"epoch_granular_lr", c.epoch_granular_lr}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("epochs", base.epochs);
    get("batch_size_dialogues", base.batch_size_dialogues);
    get("eta_max", base.eta_max);
    get("eta_min", base.eta_min);
    get("clip_norm", base.clip_norm);
    get("seed", base.seed);
    get("post_train_steps", base.post_train_steps);
    get("class_weighted", base.class_weighted);
    get("epoch_granular_lr", base.epoch_granular_lr);
    return base;
}

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean of batch losses
    double lr = 0.0;          // learning rate of the last step
    std::optional<double> validation_micro_f1;
    std::size_t skipped_dialogues = 0;  // packings with zero spans
};

inline nlohmann::ordered_json to_json(const std::vector<EpochLog>& log) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : log) {
        nlohmann::ordered_json j;
        j["epoch"] = e.epoch;
        j["train_loss"] = e.train_loss;
        j["lr"] = e.lr;
        j["validation_micro_f1"] = e.validation_micro_f1 ? nlohmann::ordered_json(*e.validation_micro_f1) : nlohmann::ordered_json(nullptr);
        j["skipped_dialogues"] = e.skipped_dialogues;
        arr.push_back(std::move(j));
    }
    return arr;
}

/// Optional starting points for fine-tuning.
struct TrainInit {
    std::optional<EncoderParams> encoder;
    std::optional<ClassifierParams> classifier;
};

struct TrainResult {
    TrainedModel model;
    std::vector<EpochLog> log;
    AdamState optimizer;
};

/// Seeds for the independent random streams of one run.
struct SeedStreams {
    std::uint64_t init, shuffle, dropout;
    explicit SeedStreams(std::uint64_t seed) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
        std::array<std::uint32_t, 6> out{};
        seq.generate(out.begin(), out.end());
        init = (std::uint64_t{out[0]} << 32) | out[1];
        shuffle = (std::uint64_t{out[2]} << 32) | out[3];
        dropout = (std::uint64_t{out[4]} << 32) | out[5];
    }
};

inline double validation_micro_f1(const TrainedModel& model, const Corpus& val, const TokenVocabulary& vocab) {
    const auto preds = predict_corpus(model, val, vocab);
    const auto evaluated = default_evaluated_classes();
    return evaluate(preds, val, evaluated).micro_f1;
}

/// Fine-tunes encoder + classifier on whole dialogues with the class-weighted objective.
inline TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus, const TokenVocabulary& vocab, const ModelConfig& model_config,
                         const TrainConfig& config, const TrainInit& init = {}) {
    model_config.validate();
    config.validate();
    if (model_config.encoder.vocab_size != vocab.size()) {
        throw UsageError("encoder vocab_size " + std::to_string(model_config.encoder.vocab_size) + " != vocabulary size " + std::to_string(vocab.size()));
    }
    const SeedStreams seeds(config.seed);
    Rng init_rng(seeds.init);
    Rng shuffle_rng(seeds.shuffle);
    Rng dropout_rng(seeds.dropout);

    TrainResult result;
    result.model.config = model_config;
    result.model.params = ModelParams::initialize(model_config, init_rng);
    if (init.encoder) {
        if (init.encoder->token_embedding.rows() != vocab.size() || init.encoder->layers.size() != model_config.encoder.n_layers ||
            init.encoder->token_embedding.cols() != model_config.encoder.d_model) {
            throw UsageError("initial encoder does not match the model configuration");
        }
        result.model.params.encoder = *init.encoder;
    }
    if (init.classifier) result.model.params.classifier = *init.classifier;
    result.model.train_counts = class_counts(train_corpus);
    result.optimizer = AdamState::for_params(result.model.params);
    if (config.epochs == 0) return result;

    const ClassWeights weights = config.class_weighted ? class_weights(result.model.train_counts) : ClassWeights::uniform();

    std::vector<PackedDialogue> packed;
    packed.reserve(train_corpus.dialogues.size());
    for (const auto& d : train_corpus.dialogues) packed.push_back(pack_dialogue(d, vocab, model_config.max_len));

    std::vector<std::size_t> order(train_corpus.dialogues.size());
    const std::size_t batches = (order.size() + config.batch_size_dialogues - 1) / config.batch_size_dialogues;
    if (batches == 0) throw DataError("training corpus is empty");

    ModelParams& params = result.model.params;
    ModelParams grads = zeros_like_params(params);
    SchedulerState sched{config.eta_max, config.eta_min, static_cast<double>(config.epochs), 0.0, 0};
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        EpochLog log;
        log.epoch = epoch + 1;
        double loss_sum = 0.0;
        std::size_t loss_batches = 0;
        for (std::size_t b = 0; b < batches; ++b, ++step) {
            const std::size_t lo = b * config.batch_size_dialogues;
            const std::size_t hi = std::min(order.size(), lo + config.batch_size_dialogues);
            std::size_t n_utts = 0;
            for (std::size_t i = lo; i < hi; ++i) {
                const auto& p = packed[order[i]];
                if (p.spans.empty()) ++log.skipped_dialogues;
                n_utts += p.spans.size();
            }
            sched.elapsed = config.epoch_granular_lr ? static_cast<double>(epoch)
                                                     : static_cast<double>(step) / static_cast<double>(batches);
            const double lr = cosine_lr(sched);
            log.lr = lr;
            if (n_utts == 0) continue;

            for (auto& t : grads.tensors()) t.tensor->fill(0.0);
            double batch_loss = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                const auto& p = packed[order[i]];
                if (p.spans.empty()) continue;
                const auto gold = included_gold(train_corpus.dialogues[order[i]], p);
                DialogueTrace trace;
                const Matrix logits = dialogue_logits(p, params, model_config, Mode::train, &dropout_rng, &trace);
                const auto dists = distributions_from_logits(logits);
                batch_loss += wce_loss(dists, gold, weights) * static_cast<double>(gold.size());
                const Matrix g = wce_loss_grad(dists, gold, weights, static_cast<double>(n_utts));
                dialogue_backward(g, trace, params, model_config, grads);
            }
            batch_loss /= static_cast<double>(n_utts);
            if (!std::isfinite(batch_loss)) throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch + 1));
            clip_gradients(grads, config.clip_norm);
            adam_step(params, grads, result.optimizer, lr);
            loss_sum += batch_loss;
            ++loss_batches;
        }
        log.train_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
        if (!val_corpus.dialogues.empty()) log.validation_micro_f1 = validation_micro_f1(result.model, val_corpus, vocab);
        result.log.push_back(log);
    }
    return result;
}

// ---------------------------------------------------------------------------
// MLM + NSP post-training

struct PostTrainConfig {
    std::size_t steps = 0;
    std::size_t pairs_per_step = 8;
    double eta_max = 2e-3;
    double eta_min = 0.0;
    double clip_norm = 1.0;
    double mask_rate = 0.15;
    std::size_t pair_max_len = 128;
    std::uint64_t seed = 0;
};

inline nlohmann::ordered_json to_json(const PostTrainConfig& c) {
    return {{"steps", c.steps},           {"pairs_per_step", c.pairs_per_step}, {"eta_max", c.eta_max},
            {"eta_min", c.eta_min},       {"clip_norm", c.clip_norm},           {"mask_rate", c.mask_rate},
            {"pair_max_len", c.pair_max_len}, {"seed", c.seed}};
}

inline PostTrainConfig post_train_config_from_json(const nlohmann::json& j, PostTrainConfig base = {}) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("steps", base.steps);
    get("pairs_per_step", base.pairs_per_step);
    get("eta_max", base.eta_max);
    get("eta_min", base.eta_min);
    get("clip_norm", base.clip_norm);
    get("mask_rate", base.mask_rate);
    get("pair_max_len", base.pair_max_len);
    get("seed", base.seed);
    return base;
}

struct PostTrainLogRow {
    std::size_t step = 0;
    double mlm_loss = 0.0;  // mean over pairs with at least one masked position
    double nsp_loss = 0.0;
    double lr = 0.0;
};

struct PostTrainResult {
    EncoderParams params;
    std::vector<PostTrainLogRow> curve;
};

/// Mean MLM loss over the first and last `window` logged steps.
inline std::pair<double, double> windowed_mlm_loss(const std::vector<PostTrainLogRow>& curve, std::size_t window) {
    window = std::min(window, curve.size());
    if (window == 0) return {0.0, 0.0};
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
        first += curve[i].mlm_loss;
        last += curve[curve.size() - window + i].mlm_loss;
    }
    return {first / static_cast<double>(window), last / static_cast<double>(window)};
}

/// Continues training the encoder on mlm_loss + nsp_loss over in-domain dialogues.
/// With no `init`, starts from a fresh initialization drawn from `config.seed`.
inline PostTrainResult post_train(const Corpus& corpus, const TokenVocabulary& vocab, const EncoderConfig& encoder_config,
                                  const PostTrainConfig& config, const std::optional<EncoderParams>& init = std::nullopt) {
    encoder_config.validate();
    if (encoder_config.vocab_size != vocab.size()) throw UsageError("encoder vocab_size does not match the vocabulary");
    if (config.pair_max_len > encoder_config.max_positions) throw UsageError("pair_max_len exceeds encoder max_positions");
    const SeedStreams seeds(config.seed);
    Rng init_rng(seeds.init);
    Rng sample_rng(seeds.shuffle);
    Rng dropout_rng(seeds.dropout);

    PostTrainResult result;
    result.params = init ? *init : EncoderParams::initialize(encoder_config, init_rng);
    if (config.steps == 0) return result;
    if (config.pairs_per_step == 0) throw UsageError("pairs_per_step must be positive");

    const NspPairSampler sampler(corpus, vocab, config.pair_max_len);
    EncoderParams grads = zeros_like_params(result.params);
    AdamState opt = AdamState::for_params(result.params);
    SchedulerState sched{config.eta_max, config.eta_min, static_cast<double>(config.steps), 0.0, 0};
    for (std::size_t step = 0; step < config.steps; ++step) {
        for (auto& t : grads.tensors()) t.tensor->fill(0.0);
        EncoderParams pair_grads = grads;
        PostTrainLogRow row;
        row.step = step;
        std::size_t mlm_pairs = 0;
        const double inv = 1.0 / static_cast<double>(config.pairs_per_step);
        for (std::size_t k = 0; k < config.pairs_per_step; ++k) {
            const auto ex = make_pretraining_example(sampler.next(sample_rng), vocab, config.mask_rate, sample_rng);
            for (auto& t : pair_grads.tensors()) t.tensor->fill(0.0);
            const auto loss = pretraining_loss(ex, result.params, encoder_config, Mode::train, &dropout_rng, &pair_grads);
            accumulate_params(grads, pair_grads, inv);
            row.nsp_loss += loss.nsp;
            if (loss.has_mlm) {
                row.mlm_loss += loss.mlm;
                ++mlm_pairs;
            }
        }
        row.nsp_loss *= inv;
        if (mlm_pairs) row.mlm_loss /= static_cast<double>(mlm_pairs);
        if (!std::isfinite(row.mlm_loss) || !std::isfinite(row.nsp_loss)) throw TrainingError("non-finite post-training loss at step " + std::to_string(step));
        sched.elapsed = static_cast<double>(step);
        row.lr = cosine_lr(sched);
        clip_gradients(grads, config.clip_norm);
        adam_step(result.params, grads, opt, row.lr);
        result.curve.push_back(row);
    }
    return result;
}

}  // namespace ctxemo
