// ctxemo: batch command-line front end.
//
// Exit status: 0 success, 1 usage error, 2 data error, 3 numeric/training error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ctxemo/ctxemo.hpp"

namespace fs = std::filesystem;
using namespace ctxemo;

namespace {

// Flags that override config-file values when given.
struct Overrides {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> pooling;
    std::optional<std::size_t> max_len;
    std::optional<std::string> evaluated_classes;
    std::optional<std::string> preset;
    std::optional<std::string> vocab;
    std::optional<std::string> train_corpus;
    std::optional<std::string> validation_corpus;
    std::optional<std::string> corpus;
    std::optional<std::string> predictions;
    std::optional<std::string> checkpoint;
    std::optional<std::string> encoder_checkpoint;
    std::optional<std::string> format;
    std::optional<std::string> f1_form;
    std::optional<std::size_t> epochs;
    std::optional<double> eta_max;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> k;
    std::optional<std::size_t> jobs;
};

RunConfig resolve(const Overrides& o) {
    RunConfig c = o.config ? load_run_config(*o.config) : RunConfig{};
    if (o.seed) c.seed = *o.seed;
    if (o.out) c.out = *o.out;
    if (o.pooling) c.pooling = parse_pooling(*o.pooling);
    if (o.max_len) c.max_len = *o.max_len;
    if (o.evaluated_classes) {
        try {
            c.evaluated_classes = parse_label_list(*o.evaluated_classes);
        } catch (const LabelError& e) {
            throw UsageError(e.what());
        }
    }
    if (o.preset) c.preset = *o.preset;
    if (o.vocab) c.vocab = *o.vocab;
    if (o.train_corpus) c.train_corpus = *o.train_corpus;
    if (o.validation_corpus) c.validation_corpus = *o.validation_corpus;
    if (o.corpus) c.corpus = *o.corpus;
    if (o.predictions) c.predictions = *o.predictions;
    if (o.checkpoint) c.checkpoint = *o.checkpoint;
    if (o.encoder_checkpoint) c.encoder_checkpoint = *o.encoder_checkpoint;
    if (o.format) c.format = *o.format;
    if (o.f1_form) c.f1_form = parse_f1_form(*o.f1_form);
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.eta_max) c.train.eta_max = *o.eta_max;
    if (o.steps) c.post_train.steps = *o.steps;
    if (o.k) c.k = *o.k;
    if (o.jobs) c.jobs = *o.jobs;
    c.apply_seed();
    return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON run configuration; flags override its values");
    cmd->add_option("--seed", o.seed, "random seed (config: seed)");
    cmd->add_option("--out", o.out, "output path (config: out)");
    cmd->add_option("--pooling", o.pooling, "utterance pooling (config: pooling)")->check(CLI::IsMember({"max", "mean"}));
    cmd->add_option("--max-len", o.max_len, "packed dialogue length limit in tokens (config: max_len)");
    cmd->add_option("--evaluated-classes", o.evaluated_classes, "comma-separated classes scored by micro-F1 (config: evaluated_classes)");
}

std::string keys_footer(const std::string& keys) { return "Config keys read: " + keys; }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << text;
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty()) {
        std::cout << text;
    } else {
        write_text(out_path, text);
    }
}

fs::path out_dir(const RunConfig& c, const std::string& fallback) {
    fs::path dir = c.out.empty() ? fs::path(fallback) : fs::path(c.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

/// Training corpus plus any augmentation corpora, the latter marked as augmented.
Corpus load_training_corpus(const RunConfig& c, CorpusFormat format) {
    std::vector<Corpus> parts{load_corpus(c.train_corpus, format)};
    for (const auto& path : c.augmented_corpora) {
        auto aug = load_corpus(path, format);
        for (auto& d : aug.dialogues) d.augmented = true;
        parts.push_back(std::move(aug));
    }
    return parts.size() == 1 ? std::move(parts.front()) : merge_corpora(parts, c.train_corpus);
}

/// Vocabulary precedence: explicit file, then the one stored with the starting encoder, then built from the data.
TokenVocabulary resolve_vocab(const RunConfig& c, const Corpus& corpus, const std::optional<Archive>& encoder_archive) {
    if (!c.vocab.empty()) return load_vocab(c.vocab);
    if (encoder_archive) {
        if (auto v = archive_vocab(*encoder_archive)) return *v;
    }
    return build_vocab({&corpus}, c.vocab_min_count);
}

std::optional<Archive> maybe_encoder_archive(const RunConfig& c) {
    if (c.encoder_checkpoint.empty()) return std::nullopt;
    return read_archive(c.encoder_checkpoint);
}

/// Model configuration, taking the encoder architecture from a starting checkpoint when there is one.
ModelConfig resolve_model_config(const RunConfig& c, const TokenVocabulary& vocab, const std::optional<EncoderCheckpoint>& init) {
    ModelConfig m = c.model_config(vocab.size());
    if (init) m.encoder = init->config;
    if (m.encoder.vocab_size != vocab.size()) {
        throw UsageError("encoder checkpoint vocab_size " + std::to_string(m.encoder.vocab_size) + " != vocabulary size " + std::to_string(vocab.size()));
    }
    m.validate();
    return m;
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------

int cmd_stats(const RunConfig& c) {
    const auto corpus = load_corpus(c.corpus, CorpusFormat::labeled);
    const auto stats = corpus_stats(corpus);
    if (c.format == "table") {
        emit(c.out, stats_to_table(stats));
    } else if (c.format == "json") {
        emit(c.out, dump(stats_to_json(stats)));
    } else {
        throw UsageError("stats --format must be json or table");
    }
    return 0;
}

int cmd_post_train(const RunConfig& c) {
    const auto enc_archive = maybe_encoder_archive(c);
    const auto corpus = load_training_corpus(c, CorpusFormat::unlabeled);
    const auto vocab = resolve_vocab(c, corpus, enc_archive);
    std::optional<EncoderCheckpoint> start;
    if (enc_archive) start = encoder_from_archive(*enc_archive);
    const EncoderConfig enc = start ? start->config : c.encoder_config(vocab.size());
    if (enc.vocab_size != vocab.size()) throw UsageError("encoder checkpoint does not match the vocabulary size");

    const auto result = post_train(corpus, vocab, enc, c.post_train, start ? std::optional(start->params) : std::nullopt);
    const fs::path dir = out_dir(c, "runs/post_train");
    Archive a = encoder_archive(enc, result.params);
    attach_vocab(a, vocab);
    a.meta["post_train_config"] = to_json(c.post_train);
    write_archive(a, (dir / "encoder.ckpt").string());

    std::ostringstream csv;
    csv << "step,mlm_loss,nsp_loss,lr\n" << std::setprecision(10);
    for (const auto& r : result.curve) csv << r.step << ',' << r.mlm_loss << ',' << r.nsp_loss << ',' << r.lr << '\n';
    write_text((dir / "post_train_curve.csv").string(), csv.str());
    write_text((dir / "run_config.json").string(), dump(to_json(c)));
    if (!result.curve.empty()) {
        const auto window = std::max<std::size_t>(1, result.curve.size() / 10);
        const auto [first, last] = windowed_mlm_loss(result.curve, window);
        std::cerr << "post-train: " << result.curve.size() << " steps, windowed MLM loss " << first << " -> " << last << "\n";
    }
    return 0;
}

int cmd_train(const RunConfig& c) {
    const auto enc_archive = maybe_encoder_archive(c);
    const auto train_corpus = load_training_corpus(c, CorpusFormat::labeled);
    const Corpus val = c.validation_corpus.empty() ? Corpus{} : load_corpus(c.validation_corpus, CorpusFormat::labeled);
    const auto vocab = resolve_vocab(c, train_corpus, enc_archive);
    std::optional<EncoderCheckpoint> start;
    if (enc_archive) start = encoder_from_archive(*enc_archive);
    const auto model_config = resolve_model_config(c, vocab, start);

    TrainInit init;
    if (start) init.encoder = start->params;
    const auto result = train(train_corpus, val, vocab, model_config, c.train, init);

    const fs::path dir = out_dir(c, "runs/train");
    Archive a = model_archive(result.model, &result.optimizer);
    attach_vocab(a, vocab);
    write_archive(a, (dir / "model.ckpt").string());

    nlohmann::ordered_json log;
    log["config"] = to_json(c);
    log["model_config"] = to_json(model_config);
    log["train_counts"] = result.model.train_counts.counts;
    log["epochs"] = to_json(result.log);
    if (!val.dialogues.empty()) {
        log["validation"] = report_to_json(evaluate(predict_corpus(result.model, val, vocab), val, c.evaluated_classes, c.f1_form));
    }
    write_text((dir / "train_log.json").string(), dump(log));
    return 0;
}

int cmd_ensemble(const RunConfig& c) {
    if (c.k < 2) throw UsageError("ensemble needs k >= 2 (k=" + std::to_string(c.k) + " is a single model; use train)");
    if (c.jobs == 0) throw UsageError("--jobs must be positive");
    const auto enc_archive = maybe_encoder_archive(c);
    const auto corpus = load_training_corpus(c, CorpusFormat::labeled);
    const auto vocab = resolve_vocab(c, corpus, enc_archive);
    std::optional<EncoderCheckpoint> start;
    if (enc_archive) start = encoder_from_archive(*enc_archive);
    const auto model_config = resolve_model_config(c, vocab, start);

    EnsembleOptions options;
    options.k = c.k;
    options.jobs = c.jobs;
    options.split.augmented = c.augmented_policy;
    if (start) options.init.encoder = start->params;
    const auto ensemble = train_kfold_ensemble(corpus, vocab, model_config, c.train, options);

    const fs::path dir = out_dir(c, "runs/ensemble");
    nlohmann::ordered_json manifest;
    manifest["k"] = c.k;
    manifest["seed"] = c.seed;
    manifest["tie_break"] = ensemble.tie_break;
    manifest["members"] = nlohmann::ordered_json::array();
    for (std::size_t m = 0; m < ensemble.k(); ++m) {
        const std::string file = "member_" + std::to_string(m) + ".ckpt";
        Archive a = model_archive(ensemble.members[m]);
        attach_vocab(a, vocab);
        write_archive(a, (dir / file).string());
        manifest["members"].push_back({{"checkpoint", file}, {"seed", member_seed(c.seed, m)}, {"validation_ids", ensemble.validation_ids[m]}});
    }
    manifest["config"] = to_json(c);
    write_text((dir / "manifest.json").string(), dump(manifest));
    return 0;
}

TokenVocabulary vocab_for(const Archive& a, const RunConfig& c) {
    if (!c.vocab.empty()) return load_vocab(c.vocab);
    if (auto v = archive_vocab(a)) return *v;
    throw UsageError("checkpoint carries no vocabulary; pass --vocab");
}

void apply_input_overrides(TrainedModel& m, const RunConfig& c, bool max_len_given, bool pooling_given) {
    if (max_len_given) m.config.max_len = c.max_len;
    if (pooling_given) m.config.pooling = c.pooling;
    m.config.validate();
}

int cmd_predict(const RunConfig& c, const Overrides& o) {
    const auto corpus = load_corpus(c.corpus, CorpusFormat::unlabeled);
    PredictionSet preds;
    if (fs::is_directory(c.checkpoint)) {
        const fs::path dir(c.checkpoint);
        std::ifstream in(dir / "manifest.json");
        if (!in) throw DataError("ensemble directory has no manifest.json: " + dir.string());
        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError((dir / "manifest.json").string() + ": " + e.what());
        }
        EnsembleModel ensemble;
        std::optional<TokenVocabulary> vocab;
        for (const auto& member : manifest.at("members")) {
            const auto a = read_archive((dir / member.at("checkpoint").get<std::string>()).string());
            if (!vocab) vocab = vocab_for(a, c);
            auto m = model_from_archive(a);
            apply_input_overrides(m, c, o.max_len.has_value(), o.pooling.has_value());
            ensemble.members.push_back(std::move(m));
        }
        if (ensemble.members.empty()) throw DataError("ensemble manifest lists no members");
        preds = ensemble_predict_corpus(ensemble, corpus, *vocab);
    } else {
        const auto a = read_archive(c.checkpoint);
        const auto vocab = vocab_for(a, c);
        auto m = model_from_archive(a);
        apply_input_overrides(m, c, o.max_len.has_value(), o.pooling.has_value());
        preds = predict_corpus(m, corpus, vocab);
    }
    emit(c.out, dump(predictions_to_json(preds)));
    return 0;
}

int cmd_evaluate(const RunConfig& c) {
    const auto preds = load_predictions(c.predictions);
    const auto gold = load_corpus(c.corpus, CorpusFormat::labeled);
    const auto report = evaluate(preds, gold, c.evaluated_classes, c.f1_form);
    const std::string json = dump(report_to_json(report));
    if (c.format == "json") {
        emit(c.out, json);
    } else if (c.format == "table") {
        if (!c.out.empty()) write_text(c.out, json);
        std::cout << report_to_table(report);
    } else {
        throw UsageError("evaluate --format must be json or table");
    }
    return 0;
}

int cmd_synth(const std::string& kind, std::size_t dialogues, std::uint64_t seed, const std::string& out) {
    Corpus corpus;
    if (kind == "contextual") {
        synthetic::ContextualOptions o;
        o.n_dialogues = dialogues;
        o.seed = seed;
        corpus = synthetic::contextual_corpus(o);
    } else {
        synthetic::ImbalancedOptions o;
        o.n_dialogues = dialogues;
        o.seed = seed;
        corpus = synthetic::imbalanced_corpus(o);
    }
    // 80 / 10 / 10 in generation order.
    const std::size_t n_train = dialogues * 8 / 10;
    const std::size_t n_dev = dialogues / 10;
    auto slice = [&](std::size_t lo, std::size_t hi) {
        Corpus s;
        s.dialogues.assign(corpus.dialogues.begin() + static_cast<std::ptrdiff_t>(lo), corpus.dialogues.begin() + static_cast<std::ptrdiff_t>(hi));
        return s;
    };
    RunConfig c;
    c.out = out;
    const fs::path dir = out_dir(c, "data/synthetic");
    save_corpus(slice(0, n_train), (dir / "train.json").string());
    save_corpus(slice(n_train, n_train + n_dev), (dir / "dev.json").string());
    const auto test = slice(n_train + n_dev, dialogues);
    save_corpus(test, (dir / "test.json").string());
    save_corpus(synthetic::strip_labels(test), (dir / "test_unlabeled.json").string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ctxemo: contextual emotion classification of dialogue utterances"};
    app.require_subcommand(1);
    app.footer("Exit status: 0 ok, 1 usage error, 2 data error, 3 numeric/training error.");

    Overrides o;
    auto* stats = app.add_subcommand("stats", "corpus statistics and label distribution");
    add_common(stats, o);
    stats->add_option("corpus", o.corpus, "labeled corpus JSON (config: corpus)");
    stats->add_option("--format", o.format, "json or table (config: format)")->check(CLI::IsMember({"json", "table"}));
    stats->footer(keys_footer("corpus, format, out"));

    auto* post = app.add_subcommand("post-train", "masked-LM + next-sentence post-training of the encoder");
    add_common(post, o);
    post->add_option("--corpus", o.train_corpus, "in-domain dialogues (config: train_corpus)");
    post->add_option("--vocab", o.vocab, "vocabulary file, one token per line (config: vocab)");
    post->add_option("--encoder-checkpoint", o.encoder_checkpoint, "continue from this encoder (config: encoder_checkpoint)");
    post->add_option("--preset", o.preset, "encoder size preset (config: preset)")->check(CLI::IsMember({"toy", "paper-scale"}));
    post->add_option("--steps", o.steps, "optimizer steps (config: post_train.steps)");
    post->footer(keys_footer("preset, encoder, post_train, seed, vocab, vocab_min_count, train_corpus, augmented_corpora, "
                             "encoder_checkpoint, out. Writes encoder.ckpt, post_train_curve.csv, run_config.json."));

    auto* trn = app.add_subcommand("train", "fine-tune encoder + classifier on labeled dialogues");
    add_common(trn, o);
    trn->add_option("--train-corpus", o.train_corpus, "labeled training dialogues (config: train_corpus)");
    trn->add_option("--validation-corpus", o.validation_corpus, "labeled validation dialogues, empty to skip (config: validation_corpus)");
    trn->add_option("--vocab", o.vocab, "vocabulary file (config: vocab)");
    trn->add_option("--encoder-checkpoint", o.encoder_checkpoint, "post-trained encoder to start from (config: encoder_checkpoint)");
    trn->add_option("--preset", o.preset, "encoder size preset (config: preset)")->check(CLI::IsMember({"toy", "paper-scale"}));
    trn->add_option("--epochs", o.epochs, "training epochs (config: train.epochs)");
    trn->add_option("--lr", o.eta_max, "peak learning rate (config: train.eta_max)");
    trn->footer(keys_footer("preset, encoder, classifier_hidden, classifier_dropout, pooling, max_len, train, seed, vocab, "
                            "vocab_min_count, train_corpus, augmented_corpora, validation_corpus, encoder_checkpoint, "
                            "evaluated_classes, f1_form, out. Writes model.ckpt, train_log.json."));

    auto* ens = app.add_subcommand("ensemble", "train one model per k-fold split");
    add_common(ens, o);
    ens->add_option("--train-corpus", o.train_corpus, "labeled dialogues to fold (config: train_corpus)");
    ens->add_option("--vocab", o.vocab, "vocabulary file (config: vocab)");
    ens->add_option("--encoder-checkpoint", o.encoder_checkpoint, "post-trained encoder to start from (config: encoder_checkpoint)");
    ens->add_option("--preset", o.preset, "encoder size preset (config: preset)")->check(CLI::IsMember({"toy", "paper-scale"}));
    ens->add_option("--epochs", o.epochs, "training epochs per member (config: train.epochs)");
    ens->add_option("--lr", o.eta_max, "peak learning rate (config: train.eta_max)");
    ens->add_option("--k", o.k, "number of folds / members, at least 2 (config: k)");
    ens->add_option("--jobs", o.jobs, "members trained in parallel (config: jobs)");
    ens->footer(keys_footer("preset, encoder, classifier_hidden, classifier_dropout, pooling, max_len, train, seed, vocab, "
                            "vocab_min_count, train_corpus, augmented_corpora, augmented_policy, encoder_checkpoint, k, jobs, out. "
                            "Writes member_<i>.ckpt and manifest.json."));

    auto* pred = app.add_subcommand("predict", "label dialogues with a model or an ensemble directory");
    add_common(pred, o);
    pred->add_option("--checkpoint", o.checkpoint, "model checkpoint or ensemble directory (config: checkpoint)");
    pred->add_option("--corpus", o.corpus, "dialogues to label (config: corpus)");
    pred->add_option("--vocab", o.vocab, "vocabulary file when the checkpoint has none (config: vocab)");
    pred->footer(keys_footer("checkpoint, corpus, vocab, pooling, max_len, out (stdout when empty)."));

    auto* evl = app.add_subcommand("evaluate", "score predictions against gold labels");
    add_common(evl, o);
    evl->add_option("--predictions", o.predictions, "predictions JSON (config: predictions)");
    evl->add_option("--gold", o.corpus, "labeled gold corpus (config: corpus)");
    evl->add_option("--format", o.format, "json, or table on stdout with JSON to --out (config: format)")->check(CLI::IsMember({"json", "table"}));
    evl->add_option("--f1-form", o.f1_form, "harmonic or literal_pr (config: f1_form)")->check(CLI::IsMember({"harmonic", "literal_pr"}));
    evl->footer(keys_footer("predictions, corpus, evaluated_classes, f1_form, format, out."));

    std::string synth_kind = "contextual";
    std::size_t synth_dialogues = 500;
    std::uint64_t synth_seed = 7;
    std::string synth_out = "data/synthetic";
    auto* synth = app.add_subcommand("synth", "write a synthetic corpus split into train/dev/test");
    synth->add_option("--kind", synth_kind, "contextual or imbalanced")->check(CLI::IsMember({"contextual", "imbalanced"}));
    synth->add_option("--dialogues", synth_dialogues, "number of dialogues")->check(CLI::Range(10, 1000000));
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_kind, synth_dialogues, synth_seed, synth_out);
        const RunConfig c = resolve(o);
        if (stats->parsed()) return cmd_stats(c);
        if (post->parsed()) return cmd_post_train(c);
        if (trn->parsed()) return cmd_train(c);
        if (ens->parsed()) return cmd_ensemble(c);
        if (pred->parsed()) return cmd_predict(c, o);
        if (evl->parsed()) return cmd_evaluate(c);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed input: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::data);
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::data);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::numeric);
    }
    return static_cast<int>(ErrorKind::usage);
}
