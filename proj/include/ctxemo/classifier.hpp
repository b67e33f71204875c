#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxemo/corpus.hpp"
#include "ctxemo/errors.hpp"
#include "ctxemo/tensor.hpp"

namespace ctxemo {

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

inline double selu(double x) { return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * (std::exp(x) - 1.0); }

inline double selu_derivative(double x) { return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x); }

/// linear(d_model -> d_hidden) -> SELU -> dropout -> linear(d_hidden -> 5)
struct ClassifierParams {
    Matrix hidden_weight;  // d_model x d_hidden
    Matrix hidden_bias;    // 1 x d_hidden
    Matrix output_weight;  // d_hidden x 5
    Matrix output_bias;    // 1 x 5
    double dropout_rate = 0.1;

    static ClassifierParams initialize(std::size_t d_model, std::size_t d_hidden, double dropout_rate, Rng& rng, double stddev = 0.02) {
        if (d_model == 0 || d_hidden == 0) throw UsageError("classifier sizes must be positive");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("classifier dropout_rate must be in [0, 1)");
        ClassifierParams p;
        p.hidden_weight = Matrix(d_model, d_hidden);
        fill_normal(p.hidden_weight, rng, stddev);
        p.hidden_bias = Matrix(1, d_hidden);
        p.output_weight = Matrix(d_hidden, kNumLabels);
        fill_normal(p.output_weight, rng, stddev);
        p.output_bias = Matrix(1, kNumLabels);
        p.dropout_rate = dropout_rate;
        return p;
    }

    std::size_t input_dim() const { return hidden_weight.rows(); }
    std::size_t hidden_dim() const { return hidden_weight.cols(); }

    std::vector<NamedTensor> tensors() {
        return {{"hidden/weight", &hidden_weight}, {"hidden/bias", &hidden_bias}, {"output/weight", &output_weight}, {"output/bias", &output_bias}};
    }
    std::vector<ConstNamedTensor> tensors() const {
        return {{"hidden/weight", &hidden_weight}, {"hidden/bias", &hidden_bias}, {"output/weight", &output_weight}, {"output/bias", &output_bias}};
    }

    friend bool operator==(const ClassifierParams&, const ClassifierParams&) = default;
};

struct PredictionDistribution {
    std::array<double, kNumLabels> probabilities{};
    EmotionLabel predicted_label = EmotionLabel::neutral;
};

inline PredictionDistribution distribution_from_logits(std::span<const double> logits) {
    PredictionDistribution d;
    auto p = softmax(logits);
    std::copy(p.begin(), p.end(), d.probabilities.begin());
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumLabels; ++i) {
        if (d.probabilities[i] > d.probabilities[best]) best = i;
    }
    d.predicted_label = label_at(best);
    return d;
}

struct ClassifierTrace {
    Matrix input;
    Matrix hidden_pre;
    Matrix hidden_act;  // after SELU and dropout
    Matrix dropout;
    Matrix logits;
};

inline Matrix classifier_logits(const Matrix& utt_reps, const ClassifierParams& params, Mode mode, Rng* rng = nullptr,
                                ClassifierTrace* trace = nullptr) {
    if (utt_reps.cols() != params.input_dim()) {
        throw ShapeError("classifier expects width " + std::to_string(params.input_dim()) + ", got " + std::to_string(utt_reps.cols()));
    }
    Matrix pre = matmul(utt_reps, params.hidden_weight);
    add_row_bias(pre, params.hidden_bias);
    Matrix act = pre;
    for (double& v : act.values()) v = selu(v);
    Matrix mask;
    if (mode == Mode::train && params.dropout_rate > 0.0) {
        if (rng == nullptr) throw UsageError("train-mode dropout requires a random generator");
        mask = dropout_mask(act.rows(), act.cols(), params.dropout_rate, *rng);
        hadamard_inplace(act, mask);
    }
    Matrix logits = matmul(act, params.output_weight);
    add_row_bias(logits, params.output_bias);
    if (trace) {
        trace->input = utt_reps;
        trace->hidden_pre = std::move(pre);
        trace->hidden_act = std::move(act);
        trace->dropout = std::move(mask);
        trace->logits = logits;
    }
    return logits;
}

/// One probability distribution over the five labels per utterance row.
inline std::vector<PredictionDistribution> classify(const Matrix& utt_reps, const ClassifierParams& params, Mode mode, Rng* rng = nullptr) {
    const Matrix logits = classifier_logits(utt_reps, params, mode, rng);
    std::vector<PredictionDistribution> out;
    out.reserve(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) out.push_back(distribution_from_logits(logits.row(r)));
    return out;
}

/// Accumulates parameter gradients; returns d(loss)/d(utterance representations).
inline Matrix classifier_backward(const Matrix& grad_logits, const ClassifierTrace& trace, const ClassifierParams& params, ClassifierParams& grads) {
    accumulate_column_sums(grad_logits, grads.output_bias);
    matmul_at_b_acc(trace.hidden_act, grad_logits, grads.output_weight);
    Matrix g = matmul_a_bt(grad_logits, params.output_weight);
    if (!trace.dropout.empty()) hadamard_inplace(g, trace.dropout);
    auto gv = g.values();
    auto pre = trace.hidden_pre.values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= selu_derivative(pre[i]);
    accumulate_column_sums(g, grads.hidden_bias);
    matmul_at_b_acc(trace.input, g, grads.hidden_weight);
    return matmul_a_bt(g, params.hidden_weight);
}

/// Per-class loss weights total/x_c. Classes with zero training count carry no weight.
struct ClassWeights {
    std::array<std::optional<double>, kNumLabels> weights{};

    static ClassWeights uniform() {
        ClassWeights w;
        w.weights.fill(1.0);
        return w;
    }

    double at(EmotionLabel l) const {
        const auto& w = weights[index_of(l)];
        if (!w) throw WeightError("no class weight for " + std::string(label_name(l)) + ": the class has no training samples");
        return *w;
    }

    ClassWeights scaled(double k) const {
        ClassWeights out = *this;
        for (auto& w : out.weights) {
            if (w) *w *= k;
        }
        return out;
    }
};

inline ClassWeights class_weights(const ClassCounts& counts, std::span<const EmotionLabel> required = {}) {
    const std::size_t total = counts.total();
    if (total == 0) throw WeightError("class counts are all zero");
    ClassWeights w;
    for (std::size_t i = 0; i < kNumLabels; ++i) {
        if (counts.counts[i] > 0) w.weights[i] = static_cast<double>(total) / static_cast<double>(counts.counts[i]);
    }
    for (auto l : required) {
        if (counts[l] == 0) throw WeightError("class " + std::string(label_name(l)) + " has zero training samples");
    }
    return w;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over utterances of weight[gold] * -log p[gold], with p clamped at 1e-12.
inline double wce_loss(std::span<const PredictionDistribution> predictions, std::span<const EmotionLabel> gold, const ClassWeights& weights) {
    if (predictions.size() != gold.size()) throw ShapeError("wce_loss: predictions and gold differ in length");
    if (predictions.empty()) throw LossError("wce_loss on an empty batch");
    double total = 0.0;
    for (std::size_t u = 0; u < gold.size(); ++u) {
        const double p = std::max(predictions[u].probabilities[index_of(gold[u])], kProbabilityFloor);
        total += weights.at(gold[u]) * -std::log(p);
    }
    return total / static_cast<double>(gold.size());
}

/// Gradient of wce_loss w.r.t. the logits that produced `predictions`, divided by `normalizer`
/// instead of the batch length when the loss is averaged over several calls.
inline Matrix wce_loss_grad(std::span<const PredictionDistribution> predictions, std::span<const EmotionLabel> gold, const ClassWeights& weights,
                            double normalizer) {
    Matrix g(predictions.size(), kNumLabels);
    for (std::size_t u = 0; u < gold.size(); ++u) {
        const std::size_t y = index_of(gold[u]);
        if (predictions[u].probabilities[y] < kProbabilityFloor) continue;  // clamped: flat
        const double w = weights.at(gold[u]) / normalizer;
        for (std::size_t k = 0; k < kNumLabels; ++k) g(u, k) = w * predictions[u].probabilities[k];
        g(u, y) -= w;
    }
    return g;
}

}  // namespace ctxemo
