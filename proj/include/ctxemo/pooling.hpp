#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ctxemo/errors.hpp"
#include "ctxemo/tensor.hpp"
#include "ctxemo/tokenizer.hpp"

namespace ctxemo {

enum class PoolingMode { max, mean };

inline std::string pooling_name(PoolingMode m) { return m == PoolingMode::max ? "max" : "mean"; }

inline PoolingMode parse_pooling(const std::string& s) {
    if (s == "max") return PoolingMode::max;
    if (s == "mean") return PoolingMode::mean;
    throw UsageError("unknown pooling mode \"" + s + "\" (expected max or mean)");
}

namespace detail {

inline void check_spans(const Matrix& reps, std::span<const Span> spans) {
    for (std::size_t u = 0; u < spans.size(); ++u) {
        if (spans[u].end <= spans[u].start) throw PoolingError("span " + std::to_string(u) + " is empty");
        if (spans[u].end > reps.rows()) {
            throw PoolingError("span " + std::to_string(u) + " ends at " + std::to_string(spans[u].end) + " beyond " +
                               std::to_string(reps.rows()) + " rows");
        }
    }
}

}  // namespace detail

/// Per-span, per-dimension maximum. One output row per span.
inline Matrix dynamic_max_pool(const Matrix& reps, std::span<const Span> spans) {
    detail::check_spans(reps, spans);
    Matrix out(spans.size(), reps.cols());
    for (std::size_t u = 0; u < spans.size(); ++u) {
        auto o = out.row(u);
        auto first = reps.row(spans[u].start);
        std::copy(first.begin(), first.end(), o.begin());
        for (std::size_t t = spans[u].start + 1; t < spans[u].end; ++t) {
            auto r = reps.row(t);
            for (std::size_t c = 0; c < o.size(); ++c) {
                if (r[c] > o[c]) o[c] = r[c];
            }
        }
    }
    return out;
}

inline Matrix dynamic_mean_pool(const Matrix& reps, std::span<const Span> spans) {
    detail::check_spans(reps, spans);
    Matrix out(spans.size(), reps.cols());
    for (std::size_t u = 0; u < spans.size(); ++u) {
        auto o = out.row(u);
        for (std::size_t t = spans[u].start; t < spans[u].end; ++t) {
            auto r = reps.row(t);
            for (std::size_t c = 0; c < o.size(); ++c) o[c] += r[c];
        }
        const double inv = 1.0 / static_cast<double>(spans[u].length());
        for (double& v : o) v *= inv;
    }
    return out;
}

inline Matrix pool(const Matrix& reps, std::span<const Span> spans, PoolingMode mode) {
    return mode == PoolingMode::max ? dynamic_max_pool(reps, spans) : dynamic_mean_pool(reps, spans);
}

/// Gradient w.r.t. the token rows. Max pooling routes each dimension's gradient to the first
/// (lowest-index) position attaining the maximum.
inline Matrix pool_backward(const Matrix& reps, std::span<const Span> spans, PoolingMode mode, const Matrix& grad_pooled) {
    Matrix grad(reps.rows(), reps.cols());
    for (std::size_t u = 0; u < spans.size(); ++u) {
        auto g = grad_pooled.row(u);
        if (mode == PoolingMode::mean) {
            const double inv = 1.0 / static_cast<double>(spans[u].length());
            for (std::size_t t = spans[u].start; t < spans[u].end; ++t) {
                auto gr = grad.row(t);
                for (std::size_t c = 0; c < g.size(); ++c) gr[c] += g[c] * inv;
            }
            continue;
        }
        for (std::size_t c = 0; c < g.size(); ++c) {
            std::size_t best = spans[u].start;
            for (std::size_t t = spans[u].start + 1; t < spans[u].end; ++t) {
                if (reps(t, c) > reps(best, c)) best = t;
            }
            grad(best, c) += g[c];
        }
    }
    return grad;
}

}  // namespace ctxemo
