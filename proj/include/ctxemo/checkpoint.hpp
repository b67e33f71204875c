#pragma once

// Archive layout (all integers little-endian u32):
//   "CTXEMOCK" | version | meta_len | meta JSON bytes | tensor_count |
//   per tensor: name_len | name | rows | cols | rows*cols IEEE-754 float32

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ctxemo/encoder.hpp"
#include "ctxemo/errors.hpp"
#include "ctxemo/model.hpp"
#include "ctxemo/optim.hpp"
#include "ctxemo/tensor.hpp"
#include "ctxemo/tokenizer.hpp"

namespace ctxemo {

inline constexpr std::string_view kArchiveMagic = "CTXEMOCK";
inline constexpr std::uint32_t kArchiveVersion = 1;

struct Archive {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Matrix>> tensors;

    const Matrix* find(std::string_view name) const {
        for (const auto& [n, m] : tensors)
            if (n == name) return &m;
        return nullptr;
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_archive(const Archive& archive) {
    std::string out(kArchiveMagic);
    detail::put_u32(out, kArchiveVersion);
    const std::string meta = archive.meta.dump();
    detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    detail::put_u32(out, static_cast<std::uint32_t>(archive.tensors.size()));
    for (const auto& [name, m] : archive.tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (double v : m.values()) detail::put_f32(out, static_cast<float>(v));
    }
    return out;
}

inline Archive deserialize_archive(std::string_view bytes) {
    detail::ByteReader in(bytes);
    if (in.take(kArchiveMagic.size()) != kArchiveMagic) throw CheckpointError("not a checkpoint archive (bad magic)");
    if (const auto v = in.u32(); v != kArchiveVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
    Archive a;
    try {
        a.meta = nlohmann::json::parse(in.take(in.u32()));
    } catch (const nlohmann::json::parse_error& e) {
        throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(in.take(in.u32()));
        const std::uint32_t rows = in.u32();
        const std::uint32_t cols = in.u32();
        Matrix m(rows, cols);
        for (double& v : m.values()) v = static_cast<double>(in.f32());
        a.tensors.emplace_back(std::move(name), std::move(m));
    }
    if (!in.done()) throw CheckpointError("trailing bytes after checkpoint tensors");
    return a;
}

inline void write_archive(const Archive& archive, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    const auto bytes = serialize_archive(archive);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Archive read_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return deserialize_archive(ss.str());
    } catch (const CheckpointError& e) {
        throw CheckpointError(path + ": " + e.what());
    }
}

template <ParameterSet P>
void append_tensors(Archive& a, const P& params, const std::string& prefix) {
    for (const auto& t : params.tensors()) a.tensors.emplace_back(prefix + t.name, *t.tensor);
}

/// Fills every tensor of `params` (already shaped) from `prefix`-named archive entries.
template <ParameterSet P>
void restore_tensors(const Archive& a, P& params, const std::string& prefix) {
    for (auto& t : params.tensors()) {
        const Matrix* m = a.find(prefix + t.name);
        if (!m) throw CheckpointError("checkpoint is missing tensor " + prefix + t.name);
        if (!m->same_shape(*t.tensor)) {
            throw CheckpointError("tensor " + prefix + t.name + " has shape " + m->shape_string() + ", expected " + t.tensor->shape_string());
        }
        *t.tensor = *m;
    }
}

/// Zero-valued parameters with the shapes implied by a config.
inline EncoderParams shaped_encoder(const EncoderConfig& config) {
    Rng rng(0);
    return zeros_like_params(EncoderParams::initialize(config, rng, 0.0));
}

inline Archive encoder_archive(const EncoderConfig& config, const EncoderParams& params) {
    Archive a;
    a.meta = {{"kind", "encoder"}, {"encoder_config", to_json(config)}};
    append_tensors(a, params, "encoder/");
    return a;
}

struct EncoderCheckpoint {
    EncoderConfig config;
    EncoderParams params;
};

/// Accepts both encoder-only and full-model archives.
inline EncoderCheckpoint encoder_from_archive(const Archive& a) {
    EncoderCheckpoint ck;
    if (a.meta.contains("encoder_config")) {
        ck.config = encoder_config_from_json(a.meta.at("encoder_config"));
    } else if (a.meta.contains("model_config")) {
        ck.config = model_config_from_json(a.meta.at("model_config")).encoder;
    } else {
        throw CheckpointError("checkpoint metadata has no encoder configuration");
    }
    ck.config.validate();
    ck.params = shaped_encoder(ck.config);
    restore_tensors(a, ck.params, "encoder/");
    return ck;
}

inline Archive model_archive(const TrainedModel& model, const AdamState* optimizer = nullptr) {
    Archive a;
    a.meta = {{"kind", "model"}, {"model_config", to_json(model.config)}, {"train_counts", model.train_counts.counts}};
    append_tensors(a, model.params, "");
    if (optimizer) {
        a.meta["optimizer"] = {{"step", optimizer->step}, {"beta1", optimizer->beta1}, {"beta2", optimizer->beta2}, {"epsilon", optimizer->epsilon}};
        const auto names = model.params.tensors();
        for (std::size_t i = 0; i < names.size(); ++i) {
            a.tensors.emplace_back("optimizer/m/" + names[i].name, optimizer->first_moment[i]);
            a.tensors.emplace_back("optimizer/v/" + names[i].name, optimizer->second_moment[i]);
        }
    }
    return a;
}

inline TrainedModel model_from_archive(const Archive& a) {
    if (a.meta.value("kind", "") != "model") throw CheckpointError("checkpoint does not contain a fine-tuned model");
    TrainedModel m;
    m.config = model_config_from_json(a.meta.at("model_config"));
    m.config.validate();
    m.params.encoder = shaped_encoder(m.config.encoder);
    m.params.classifier.hidden_weight = Matrix(m.config.encoder.d_model, m.config.hidden_dim());
    m.params.classifier.hidden_bias = Matrix(1, m.config.hidden_dim());
    m.params.classifier.output_weight = Matrix(m.config.hidden_dim(), kNumLabels);
    m.params.classifier.output_bias = Matrix(1, kNumLabels);
    m.params.classifier.dropout_rate = m.config.classifier_dropout;
    restore_tensors(a, m.params, "");
    m.train_counts.counts = a.meta.at("train_counts").get<std::array<std::size_t, kNumLabels>>();
    return m;
}

inline void save_model(const TrainedModel& model, const std::string& path, const AdamState* optimizer = nullptr) {
    write_archive(model_archive(model, optimizer), path);
}

inline TrainedModel load_model(const std::string& path) {
    const auto a = read_archive(path);
    try {
        return model_from_archive(a);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path + ": bad metadata: " + e.what());
    }
}

inline void save_encoder(const EncoderConfig& config, const EncoderParams& params, const std::string& path) {
    write_archive(encoder_archive(config, params), path);
}

inline EncoderCheckpoint load_encoder(const std::string& path) {
    const auto a = read_archive(path);
    try {
        return encoder_from_archive(a);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path + ": bad metadata: " + e.what());
    }
}

/// Stores the token list in the metadata so the archive can tokenize on its own.
inline void attach_vocab(Archive& a, const TokenVocabulary& vocab) { a.meta["vocab"] = vocab.tokens(); }

inline std::optional<TokenVocabulary> archive_vocab(const Archive& a) {
    if (!a.meta.contains("vocab")) return std::nullopt;
    try {
        return TokenVocabulary(a.meta.at("vocab").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint vocabulary is malformed: ") + e.what());
    }
}

/// Rounds every parameter to float32, i.e. what a save/load cycle produces.
template <ParameterSet P>
void round_to_float(P& params) {
    for (auto& t : params.tensors())
        for (double& v : t.tensor->values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace ctxemo
