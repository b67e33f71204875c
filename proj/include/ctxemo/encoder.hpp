#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxemo/corpus.hpp"
#include "ctxemo/errors.hpp"
#include "ctxemo/tensor.hpp"
#include "ctxemo/tokenizer.hpp"

namespace ctxemo {

enum class Activation { gelu, gelu_tanh, relu };

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::gelu: return "gelu";
        case Activation::gelu_tanh: return "gelu_tanh";
        case Activation::relu: return "relu";
    }
    return "gelu";
}

inline Activation parse_activation(const std::string& s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "gelu_tanh") return Activation::gelu_tanh;
    if (s == "relu") return Activation::relu;
    throw UsageError("unknown activation \"" + s + "\"");
}

struct EncoderConfig {
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_model = 64;
    std::size_t d_ff = 256;
    std::size_t max_positions = 512;
    std::size_t vocab_size = 0;
    double dropout_rate = 0.1;
    Activation activation = Activation::gelu;
    double layer_norm_eps = 1e-12;

    static EncoderConfig toy(std::size_t vocab_size) {
        EncoderConfig c;
        c.vocab_size = vocab_size;
        return c;
    }

    /// 12 layers, 12 heads, 768 hidden, 512 positions.
    static EncoderConfig paper_scale(std::size_t vocab_size) {
        EncoderConfig c;
        c.n_layers = 12;
        c.n_heads = 12;
        c.d_model = 768;
        c.d_ff = 3072;
        c.max_positions = 512;
        c.vocab_size = vocab_size;
        return c;
    }

    static EncoderConfig preset(const std::string& name, std::size_t vocab_size) {
        if (name == "toy") return toy(vocab_size);
        if (name == "paper-scale") return paper_scale(vocab_size);
        throw UsageError("unknown encoder preset \"" + name + "\" (expected toy or paper-scale)");
    }

    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0 || max_positions == 0 || vocab_size == 0) {
            throw UsageError("encoder config sizes must be positive");
        }
        if (d_model % n_heads != 0) {
            throw UsageError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
        }
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("encoder dropout_rate must be in [0, 1)");
    }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
    nlohmann::ordered_json j;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["d_model"] = c.d_model;
    j["d_ff"] = c.d_ff;
    j["max_positions"] = c.max_positions;
    j["vocab_size"] = c.vocab_size;
    j["dropout_rate"] = c.dropout_rate;
    j["activation"] = activation_name(c.activation);
    j["layer_norm_eps"] = c.layer_norm_eps;
    return j;
}

/// Missing keys keep the values already in `base`.
inline EncoderConfig encoder_config_from_json(const nlohmann::json& j, EncoderConfig base = {}) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("n_layers", base.n_layers);
    get("n_heads", base.n_heads);
    get("d_model", base.d_model);
    get("d_ff", base.d_ff);
    get("max_positions", base.max_positions);
    get("vocab_size", base.vocab_size);
    get("dropout_rate", base.dropout_rate);
    get("layer_norm_eps", base.layer_norm_eps);
    if (j.contains("activation")) base.activation = parse_activation(j.at("activation").get<std::string>());
    return base;
}

struct EncoderLayerParams {
    Matrix query, key, value, output;  // d_model x d_model
    Matrix ff_in, ff_in_bias;          // d_model x d_ff, 1 x d_ff
    Matrix ff_out, ff_out_bias;        // d_ff x d_model, 1 x d_model
    Matrix norm1_gain, norm1_bias;
    Matrix norm2_gain, norm2_bias;
};

struct EncoderParams {
    Matrix token_embedding;       // vocab x d_model
    Matrix positional_embedding;  // max_positions x d_model
    Matrix segment_embedding;     // 2 x d_model, pair inputs only
    std::vector<EncoderLayerParams> layers;
    Matrix mlm_weight, mlm_bias;  // d_model x vocab, 1 x vocab
    Matrix nsp_weight, nsp_bias;  // d_model x 2, 1 x 2

    /// normal(0, 0.02) weights, zero biases, unit layer-norm gains.
    static EncoderParams initialize(const EncoderConfig& config, Rng& rng, double stddev = 0.02) {
        config.validate();
        const std::size_t d = config.d_model;
        EncoderParams p;
        p.token_embedding = Matrix(config.vocab_size, d);
        p.positional_embedding = Matrix(config.max_positions, d);
        p.segment_embedding = Matrix(2, d);
        fill_normal(p.token_embedding, rng, stddev);
        fill_normal(p.positional_embedding, rng, stddev);
        fill_normal(p.segment_embedding, rng, stddev);
        for (std::size_t l = 0; l < config.n_layers; ++l) {
            EncoderLayerParams L;
            for (Matrix* m : {&L.query, &L.key, &L.value, &L.output}) {
                *m = Matrix(d, d);
                fill_normal(*m, rng, stddev);
            }
            L.ff_in = Matrix(d, config.d_ff);
            fill_normal(L.ff_in, rng, stddev);
            L.ff_in_bias = Matrix(1, config.d_ff);
            L.ff_out = Matrix(config.d_ff, d);
            fill_normal(L.ff_out, rng, stddev);
            L.ff_out_bias = Matrix(1, d);
            L.norm1_gain = Matrix(1, d, 1.0);
            L.norm1_bias = Matrix(1, d);
            L.norm2_gain = Matrix(1, d, 1.0);
            L.norm2_bias = Matrix(1, d);
            p.layers.push_back(std::move(L));
        }
        p.mlm_weight = Matrix(d, config.vocab_size);
        fill_normal(p.mlm_weight, rng, stddev);
        p.mlm_bias = Matrix(1, config.vocab_size);
        p.nsp_weight = Matrix(d, 2);
        fill_normal(p.nsp_weight, rng, stddev);
        p.nsp_bias = Matrix(1, 2);
        return p;
    }

    std::vector<NamedTensor> tensors() {
        std::vector<NamedTensor> out{{"token_embedding", &token_embedding},
                                     {"positional_embedding", &positional_embedding},
                                     {"segment_embedding", &segment_embedding}};
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto& L = layers[l];
            const std::string p = "layer" + std::to_string(l) + "/";
            out.push_back({p + "attention/query", &L.query});
            out.push_back({p + "attention/key", &L.key});
            out.push_back({p + "attention/value", &L.value});
            out.push_back({p + "attention/output", &L.output});
            out.push_back({p + "ffn/in", &L.ff_in});
            out.push_back({p + "ffn/in_bias", &L.ff_in_bias});
            out.push_back({p + "ffn/out", &L.ff_out});
            out.push_back({p + "ffn/out_bias", &L.ff_out_bias});
            out.push_back({p + "norm1/gain", &L.norm1_gain});
            out.push_back({p + "norm1/bias", &L.norm1_bias});
            out.push_back({p + "norm2/gain", &L.norm2_gain});
            out.push_back({p + "norm2/bias", &L.norm2_bias});
        }
        out.push_back({"mlm/weight", &mlm_weight});
        out.push_back({"mlm/bias", &mlm_bias});
        out.push_back({"nsp/weight", &nsp_weight});
        out.push_back({"nsp/bias", &nsp_bias});
        return out;
    }

    std::vector<ConstNamedTensor> tensors() const {
        auto mut = const_cast<EncoderParams*>(this)->tensors();
        std::vector<ConstNamedTensor> out;
        out.reserve(mut.size());
        for (auto& t : mut) out.push_back({std::move(t.name), t.tensor});
        return out;
    }

    friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
        auto ta = a.tensors();
        auto tb = b.tensors();
        if (ta.size() != tb.size()) return false;
        for (std::size_t i = 0; i < ta.size(); ++i) {
            if (ta[i].name != tb[i].name || !(*ta[i].tensor == *tb[i].tensor)) return false;
        }
        return true;
    }
};

// ---------------------------------------------------------------------------
// Embedding

/// Row t = token_embedding[id_t] + positional_embedding[t] (+ segment_embedding[seg_t] for pair inputs).
inline Matrix embed(std::span<const TokenId> token_ids, const EncoderParams& params, std::span<const int> segment_ids = {}) {
    const std::size_t d = params.token_embedding.cols();
    if (token_ids.size() > params.positional_embedding.rows()) {
        throw PositionError("sequence length " + std::to_string(token_ids.size()) + " exceeds max_positions " +
                            std::to_string(params.positional_embedding.rows()));
    }
    if (!segment_ids.empty() && segment_ids.size() != token_ids.size()) throw ShapeError("segment ids length mismatch");
    Matrix out(token_ids.size(), d);
    for (std::size_t t = 0; t < token_ids.size(); ++t) {
        const TokenId id = token_ids[t];
        if (id < 0 || static_cast<std::size_t>(id) >= params.token_embedding.rows()) {
            throw EmbeddingError("token id " + std::to_string(id) + " at position " + std::to_string(t) + " outside vocabulary of size " +
                                 std::to_string(params.token_embedding.rows()));
        }
        auto row = out.row(t);
        auto tok = params.token_embedding.row(static_cast<std::size_t>(id));
        auto pos = params.positional_embedding.row(t);
        for (std::size_t c = 0; c < d; ++c) row[c] = tok[c] + pos[c];
        if (!segment_ids.empty()) {
            const int s = segment_ids[t];
            if (s < 0 || s > 1) throw EmbeddingError("segment id must be 0 or 1");
            auto seg = params.segment_embedding.row(static_cast<std::size_t>(s));
            for (std::size_t c = 0; c < d; ++c) row[c] += seg[c];
        }
    }
    return out;
}

inline Matrix embed(const PackedDialogue& packed, const EncoderParams& params) { return embed(packed.token_ids, params); }

inline void embed_backward(const Matrix& grad, std::span<const TokenId> token_ids, std::span<const int> segment_ids, EncoderParams& grads) {
    for (std::size_t t = 0; t < token_ids.size(); ++t) {
        auto g = grad.row(t);
        auto tok = grads.token_embedding.row(static_cast<std::size_t>(token_ids[t]));
        auto pos = grads.positional_embedding.row(t);
        for (std::size_t c = 0; c < g.size(); ++c) {
            tok[c] += g[c];
            pos[c] += g[c];
        }
        if (!segment_ids.empty()) {
            auto seg = grads.segment_embedding.row(static_cast<std::size_t>(segment_ids[t]));
            for (std::size_t c = 0; c < g.size(); ++c) seg[c] += g[c];
        }
    }
}

// ---------------------------------------------------------------------------
// Building blocks

struct LayerNormCache {
    Matrix normalized;
    std::vector<double> inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps, LayerNormCache* cache = nullptr) {
    const std::size_t d = x.cols();
    Matrix normalized(x.rows(), d);
    Matrix out(x.rows(), d);
    std::vector<double> inv_std(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const double n = (xr[c] - mean) * is;
            normalized(r, c) = n;
            out(r, c) = n * gain(0, c) + bias(0, c);
        }
    }
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

inline Matrix layer_norm_backward(const Matrix& grad_out, const LayerNormCache& cache, const Matrix& gain, Matrix& grad_gain, Matrix& grad_bias) {
    const std::size_t d = grad_out.cols();
    Matrix grad_in(grad_out.rows(), d);
    std::vector<double> dn(d);
    for (std::size_t r = 0; r < grad_out.rows(); ++r) {
        double mean_dn = 0.0, mean_dn_n = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double g = grad_out(r, c);
            const double n = cache.normalized(r, c);
            grad_gain(0, c) += g * n;
            grad_bias(0, c) += g;
            dn[c] = g * gain(0, c);
            mean_dn += dn[c];
            mean_dn_n += dn[c] * n;
        }
        mean_dn /= static_cast<double>(d);
        mean_dn_n /= static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
            grad_in(r, c) = cache.inv_std[r] * (dn[c] - mean_dn - cache.normalized(r, c) * mean_dn_n);
        }
    }
    return grad_in;
}

inline double activate(double x, Activation a) {
    switch (a) {
        case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
        case Activation::gelu_tanh: {
            const double k = std::sqrt(2.0 / std::numbers::pi);
            return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
        }
        case Activation::relu: return x > 0.0 ? x : 0.0;
    }
    return x;
}

inline double activate_derivative(double x, Activation a) {
    switch (a) {
        case Activation::gelu: {
            const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + x * pdf;
        }
        case Activation::gelu_tanh: {
            const double k = std::sqrt(2.0 / std::numbers::pi);
            const double u = k * (x + 0.044715 * x * x * x);
            const double th = std::tanh(u);
            const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
        }
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// Encoder stack

struct EncoderLayerTrace {
    Matrix input;
    Matrix q, k, v;
    std::vector<Matrix> attention;  // per head, seq x seq
    Matrix context;
    Matrix attention_dropout;
    LayerNormCache norm1;
    Matrix hidden;  // output of norm1
    Matrix ff_pre;
    Matrix ff_act;
    Matrix ff_dropout;
    LayerNormCache norm2;
};

/// Everything the backward pass needs from one forward pass.
struct EncoderTrace {
    std::vector<EncoderLayerTrace> layers;
    std::vector<bool> mask;
};

/// Multi-layer post-norm self-attention encoder. Masked positions are excluded as attention keys.
/// In train mode `rng` drives dropout; in inference mode dropout is off.
inline Matrix encode(const Matrix& embeddings, const std::vector<bool>& attention_mask, const EncoderParams& params,
                     const EncoderConfig& config, Mode mode, Rng* rng = nullptr, EncoderTrace* trace = nullptr) {
    const std::size_t n = embeddings.rows();
    const std::size_t d = config.d_model;
    const std::size_t heads = config.n_heads;
    const std::size_t hd = config.head_dim();
    if (attention_mask.size() != n) throw ShapeError("attention mask length " + std::to_string(attention_mask.size()) + " != sequence length " + std::to_string(n));
    if (embeddings.cols() != d) throw ShapeError("embedding width " + std::to_string(embeddings.cols()) + " != d_model");
    if (params.layers.size() != config.n_layers) throw ShapeError("parameter layer count does not match config");
    const bool use_dropout = mode == Mode::train && config.dropout_rate > 0.0;
    if (use_dropout && rng == nullptr) throw UsageError("train-mode dropout requires a random generator");
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    if (trace) {
        trace->layers.clear();
        trace->mask = attention_mask;
    }
    Matrix x = embeddings;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const auto& L = params.layers[l];
        EncoderLayerTrace local;
        EncoderLayerTrace& t = trace ? trace->layers.emplace_back() : local;
        t.input = x;
        t.q = matmul(x, L.query);
        t.k = matmul(x, L.key);
        t.v = matmul(x, L.value);
        t.context = Matrix(n, d);
        t.attention.assign(heads, Matrix(n, n));
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * hd;
            Matrix& a = t.attention[h];
            for (std::size_t i = 0; i < n; ++i) {
                auto row = a.row(i);
                bool any = false;
                for (std::size_t j = 0; j < n; ++j) {
                    if (!attention_mask[j]) {
                        row[j] = -std::numeric_limits<double>::infinity();
                        continue;
                    }
                    any = true;
                    double s = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) s += t.q(i, off + c) * t.k(j, off + c);
                    row[j] = s * scale;
                }
                if (!any) throw NumericError("encoder layer " + std::to_string(l) + ": every attention key is masked");
                softmax_inplace(row);
                for (std::size_t j = 0; j < n; ++j) {
                    const double w = row[j];
                    if (w == 0.0) continue;
                    for (std::size_t c = 0; c < hd; ++c) t.context(i, off + c) += w * t.v(j, off + c);
                }
            }
        }
        Matrix attn_out = matmul(t.context, L.output);
        if (use_dropout) {
            t.attention_dropout = dropout_mask(n, d, config.dropout_rate, *rng);
            hadamard_inplace(attn_out, t.attention_dropout);
        }
        attn_out += x;
        t.hidden = layer_norm(attn_out, L.norm1_gain, L.norm1_bias, config.layer_norm_eps, &t.norm1);

        t.ff_pre = matmul(t.hidden, L.ff_in);
        add_row_bias(t.ff_pre, L.ff_in_bias);
        t.ff_act = t.ff_pre;
        for (double& v : t.ff_act.values()) v = activate(v, config.activation);
        Matrix ff_out = matmul(t.ff_act, L.ff_out);
        add_row_bias(ff_out, L.ff_out_bias);
        if (use_dropout) {
            t.ff_dropout = dropout_mask(n, d, config.dropout_rate, *rng);
            hadamard_inplace(ff_out, t.ff_dropout);
        }
        ff_out += t.hidden;
        x = layer_norm(ff_out, L.norm2_gain, L.norm2_bias, config.layer_norm_eps, &t.norm2);
        if (!x.all_finite()) throw NumericError("non-finite values in encoder layer " + std::to_string(l));
    }
    return x;
}

/// Back-propagates d(loss)/d(output) through the stack recorded in `trace`.
/// Accumulates parameter gradients into `grads` and returns d(loss)/d(embeddings).
inline Matrix encode_backward(const Matrix& grad_output, const EncoderTrace& trace, const EncoderParams& params,
                              const EncoderConfig& config, EncoderParams& grads) {
    const std::size_t heads = config.n_heads;
    const std::size_t hd = config.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Matrix g = grad_output;
    for (std::size_t li = trace.layers.size(); li-- > 0;) {
        const auto& t = trace.layers[li];
        const auto& L = params.layers[li];
        auto& G = grads.layers[li];
        const std::size_t n = t.input.rows();

        // out = LN2(hidden + dropout(ff))
        Matrix g_res2 = layer_norm_backward(g, t.norm2, L.norm2_gain, G.norm2_gain, G.norm2_bias);
        Matrix g_ff = g_res2;
        if (!t.ff_dropout.empty()) hadamard_inplace(g_ff, t.ff_dropout);
        accumulate_column_sums(g_ff, G.ff_out_bias);
        matmul_at_b_acc(t.ff_act, g_ff, G.ff_out);
        Matrix g_act = matmul_a_bt(g_ff, L.ff_out);
        {
            auto ga = g_act.values();
            auto pre = t.ff_pre.values();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= activate_derivative(pre[i], config.activation);
        }
        accumulate_column_sums(g_act, G.ff_in_bias);
        matmul_at_b_acc(t.hidden, g_act, G.ff_in);
        Matrix g_hidden = matmul_a_bt(g_act, L.ff_in);
        g_hidden += g_res2;

        // hidden = LN1(input + dropout(context * Wo))
        Matrix g_res1 = layer_norm_backward(g_hidden, t.norm1, L.norm1_gain, G.norm1_gain, G.norm1_bias);
        Matrix g_attn = g_res1;
        if (!t.attention_dropout.empty()) hadamard_inplace(g_attn, t.attention_dropout);
        matmul_at_b_acc(t.context, g_attn, G.output);
        Matrix g_ctx = matmul_a_bt(g_attn, L.output);

        Matrix g_q(n, config.d_model), g_k(n, config.d_model), g_v(n, config.d_model);
        std::vector<double> g_a(n);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * hd;
            const Matrix& a = t.attention[h];
            for (std::size_t i = 0; i < n; ++i) {
                // dA_ij = dctx_i . v_j ; dV_j += A_ij dctx_i
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double aij = a(i, j);
                    double s = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) s += g_ctx(i, off + c) * t.v(j, off + c);
                    g_a[j] = s;
                    dot += s * aij;
                    if (aij != 0.0) {
                        for (std::size_t c = 0; c < hd; ++c) g_v(j, off + c) += aij * g_ctx(i, off + c);
                    }
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const double aij = a(i, j);
                    if (aij == 0.0) continue;
                    const double gs = aij * (g_a[j] - dot) * scale;
                    for (std::size_t c = 0; c < hd; ++c) {
                        g_q(i, off + c) += gs * t.k(j, off + c);
                        g_k(j, off + c) += gs * t.q(i, off + c);
                    }
                }
            }
        }
        matmul_at_b_acc(t.input, g_q, G.query);
        matmul_at_b_acc(t.input, g_k, G.key);
        matmul_at_b_acc(t.input, g_v, G.value);
        Matrix g_in = g_res1;
        g_in += matmul_a_bt(g_q, L.query);
        g_in += matmul_a_bt(g_k, L.key);
        g_in += matmul_a_bt(g_v, L.value);
        g = std::move(g_in);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Post-training objectives

using MlmTargets = std::map<std::size_t, TokenId>;

struct MaskedTokens {
    std::vector<TokenId> corrupted;
    MlmTargets targets;
};

/// Selects each non-special position with probability `rate`; selected positions become
/// [MASK] (80%), a random ordinary token (10%), or stay unchanged (10%).
inline MaskedTokens mask_tokens(std::span<const TokenId> token_ids, const TokenVocabulary& vocab, double rate, Rng& rng) {
    if (!(rate > 0.0 && rate < 1.0)) throw UsageError("mask rate must be in (0, 1)");
    MaskedTokens out;
    out.corrupted.assign(token_ids.begin(), token_ids.end());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& ordinary = vocab.ordinary_ids();
    std::uniform_int_distribution<std::size_t> pick(0, ordinary.empty() ? 0 : ordinary.size() - 1);
    for (std::size_t t = 0; t < token_ids.size(); ++t) {
        if (vocab.is_special(token_ids[t])) continue;
        if (unit(rng) >= rate) continue;
        out.targets.emplace(t, token_ids[t]);
        const double r = unit(rng);
        if (r < 0.8) {
            out.corrupted[t] = vocab.mask();
        } else if (r < 0.9 && !ordinary.empty()) {
            out.corrupted[t] = ordinary[pick(rng)];
        }
    }
    return out;
}

/// Mean over target positions of -log softmax(reps[pos] * W + b)[original id].
/// With `grad_reps`/`grads` set, accumulates gradients of the returned loss.
inline double mlm_loss(const Matrix& reps, const MlmTargets& targets, const EncoderParams& params, Matrix* grad_reps = nullptr,
                       EncoderParams* grads = nullptr) {
    if (targets.empty()) throw LossError("mlm_loss needs at least one target position");
    const std::size_t d = params.mlm_weight.rows();
    const std::size_t vocab = params.mlm_weight.cols();
    const double inv = 1.0 / static_cast<double>(targets.size());
    double total = 0.0;
    std::vector<double> logits(vocab);
    for (const auto& [pos, id] : targets) {
        if (pos >= reps.rows()) throw ShapeError("mlm target position out of range");
        auto h = reps.row(pos);
        for (std::size_t v = 0; v < vocab; ++v) logits[v] = params.mlm_bias(0, v);
        for (std::size_t c = 0; c < d; ++c) {
            const double hc = h[c];
            auto wrow = params.mlm_weight.row(c);
            for (std::size_t v = 0; v < vocab; ++v) logits[v] += hc * wrow[v];
        }
        const double lse = log_sum_exp(logits);
        total += lse - logits[static_cast<std::size_t>(id)];
        if (grad_reps || grads) {
            // d/dlogit = (softmax - onehot) / |targets|
            std::vector<double> g(vocab);
            for (std::size_t v = 0; v < vocab; ++v) g[v] = std::exp(logits[v] - lse) * inv;
            g[static_cast<std::size_t>(id)] -= inv;
            if (grads) {
                for (std::size_t v = 0; v < vocab; ++v) grads->mlm_bias(0, v) += g[v];
                for (std::size_t c = 0; c < d; ++c) {
                    auto grow = grads->mlm_weight.row(c);
                    for (std::size_t v = 0; v < vocab; ++v) grow[v] += h[c] * g[v];
                }
            }
            if (grad_reps) {
                auto gr = grad_reps->row(pos);
                for (std::size_t c = 0; c < d; ++c) {
                    auto wrow = params.mlm_weight.row(c);
                    double s = 0.0;
                    for (std::size_t v = 0; v < vocab; ++v) s += wrow[v] * g[v];
                    gr[c] += s;
                }
            }
        }
    }
    return total * inv;
}

enum class NspLabel { consecutive = 0, random = 1 };

/// Cross-entropy of the 2-way softmax over the NSP projection of the [CLS] representation.
inline double nsp_loss(std::span<const double> cls_rep, NspLabel label, const EncoderParams& params, std::span<double> grad_cls = {},
                       EncoderParams* grads = nullptr) {
    const std::size_t d = params.nsp_weight.rows();
    if (cls_rep.size() != d) throw ShapeError("nsp_loss: representation width mismatch");
    std::array<double, 2> logits{params.nsp_bias(0, 0), params.nsp_bias(0, 1)};
    for (std::size_t c = 0; c < d; ++c) {
        logits[0] += cls_rep[c] * params.nsp_weight(c, 0);
        logits[1] += cls_rep[c] * params.nsp_weight(c, 1);
    }
    const double lse = log_sum_exp(logits);
    const auto y = static_cast<std::size_t>(label);
    const double loss = lse - logits[y];
    if (grads || !grad_cls.empty()) {
        std::array<double, 2> g{std::exp(logits[0] - lse), std::exp(logits[1] - lse)};
        g[y] -= 1.0;
        if (grads) {
            grads->nsp_bias(0, 0) += g[0];
            grads->nsp_bias(0, 1) += g[1];
            for (std::size_t c = 0; c < d; ++c) {
                grads->nsp_weight(c, 0) += cls_rep[c] * g[0];
                grads->nsp_weight(c, 1) += cls_rep[c] * g[1];
            }
        }
        if (!grad_cls.empty()) {
            for (std::size_t c = 0; c < d; ++c) grad_cls[c] += params.nsp_weight(c, 0) * g[0] + params.nsp_weight(c, 1) * g[1];
        }
    }
    return loss;
}

struct NspExample {
    PackedPair pair;
    NspLabel label = NspLabel::consecutive;
};

/// Draws next-sentence-prediction pairs from a corpus: half adjacent utterances of one dialogue,
/// half an utterance paired with one from a different dialogue.
class NspPairSampler {
public:
    NspPairSampler(const Corpus& corpus, const TokenVocabulary& vocab, std::size_t max_len) : vocab_(&vocab), max_len_(max_len) {
        if (corpus.dialogues.size() < 2) throw DataError("next-sentence pairs need at least 2 dialogues");
        tokens_.reserve(corpus.dialogues.size());
        for (std::size_t d = 0; d < corpus.dialogues.size(); ++d) {
            auto& dt = tokens_.emplace_back();
            for (const auto& u : corpus.dialogues[d].utterances) dt.push_back(tokenize_utterance(u.text, vocab));
            for (std::size_t i = 0; i + 1 < dt.size(); ++i) adjacent_.push_back({d, i});
        }
        if (adjacent_.empty()) throw DataError("next-sentence pairs need a dialogue with at least 2 utterances");
    }

    NspExample next(Rng& rng) const {
        std::bernoulli_distribution coin(0.5);
        std::uniform_int_distribution<std::size_t> pick_pair(0, adjacent_.size() - 1);
        const auto [d, i] = adjacent_[pick_pair(rng)];
        NspExample ex;
        if (coin(rng)) {
            ex.label = NspLabel::consecutive;
            ex.pair = pack_pair(tokens_[d][i], tokens_[d][i + 1], *vocab_, max_len_);
        } else {
            ex.label = NspLabel::random;
            std::uniform_int_distribution<std::size_t> pick_other(0, tokens_.size() - 2);
            std::size_t other = pick_other(rng);
            if (other >= d) ++other;
            std::uniform_int_distribution<std::size_t> pick_utt(0, tokens_[other].size() - 1);
            ex.pair = pack_pair(tokens_[d][i], tokens_[other][pick_utt(rng)], *vocab_, max_len_);
        }
        return ex;
    }

private:
    const TokenVocabulary* vocab_;
    std::size_t max_len_;
    std::vector<std::vector<std::vector<TokenId>>> tokens_;
    std::vector<std::pair<std::size_t, std::size_t>> adjacent_;
};

/// One masked, segment-tagged pair with its targets.
struct PretrainingExample {
    std::vector<TokenId> token_ids;  // after corruption
    std::vector<int> segment_ids;
    MlmTargets mlm_targets;
    NspLabel nsp_label = NspLabel::consecutive;
};

inline PretrainingExample make_pretraining_example(const NspExample& nsp, const TokenVocabulary& vocab, double mask_rate, Rng& rng) {
    auto masked = mask_tokens(nsp.pair.token_ids, vocab, mask_rate, rng);
    return {std::move(masked.corrupted), nsp.pair.segment_ids, std::move(masked.targets), nsp.label};
}

struct PretrainingLoss {
    double mlm = 0.0;  // 0 when no position was masked
    double nsp = 0.0;
    bool has_mlm = false;
    double total() const { return mlm + nsp; }
};

/// mlm_loss + nsp_loss through the full encoder; accumulates gradients into `grads` when given.
inline PretrainingLoss pretraining_loss(const PretrainingExample& ex, const EncoderParams& params, const EncoderConfig& config, Mode mode,
                                        Rng* rng = nullptr, EncoderParams* grads = nullptr) {
    const Matrix emb = embed(ex.token_ids, params, ex.segment_ids);
    const std::vector<bool> mask(ex.token_ids.size(), true);
    EncoderTrace trace;
    const Matrix reps = encode(emb, mask, params, config, mode, rng, grads ? &trace : nullptr);
    PretrainingLoss out;
    Matrix grad_reps;
    if (grads) grad_reps = Matrix(reps.rows(), reps.cols());
    if (!ex.mlm_targets.empty()) {
        out.has_mlm = true;
        out.mlm = mlm_loss(reps, ex.mlm_targets, params, grads ? &grad_reps : nullptr, grads);
    }
    out.nsp = nsp_loss(reps.row(0), ex.nsp_label, params, grads ? grad_reps.row(0) : std::span<double>{}, grads);
    if (grads) {
        const Matrix grad_emb = encode_backward(grad_reps, trace, params, config, *grads);
        embed_backward(grad_emb, ex.token_ids, ex.segment_ids, *grads);
    }
    return out;
}

}  // namespace ctxemo
