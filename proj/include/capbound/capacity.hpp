#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "model_spec.hpp"

namespace capbound {

enum class BoundKind { feedforward, fixed_width, dropout, dropconnect, residual, robust };

inline const char* to_string(BoundKind kind) {
    switch (kind) {
        case BoundKind::feedforward: return "feedforward";
        case BoundKind::fixed_width: return "fixed_width";
        case BoundKind::dropout: return "dropout";
        case BoundKind::dropconnect: return "dropconnect";
        case BoundKind::residual: return "residual";
        case BoundKind::robust: return "robust";
    }
    return "feedforward";
}

struct BoundFactor {
    std::string label;
    double value;
};

// Capacity bound as an audited product: `value` is exactly the left-to-right
// product of `factors` (recomputed in log space once any partial product
// exceeds 1e300, in which case `saturated` is set).
struct BoundReport {
    BoundKind kind = BoundKind::feedforward;
    double value = 0.0;
    double value_floor = 0.0;
    bool saturated = false;
    std::vector<BoundFactor> factors;
};

namespace detail {

inline BoundReport finish_bound(BoundKind kind, std::vector<BoundFactor> factors) {
    double prod = 1.0;
    bool saturated = false;
    for (const auto& f : factors) {
        prod *= f.value;
        if (std::fabs(prod) > 1e300) saturated = true;
    }
    if (saturated) {
        double log_sum = 0.0;
        for (const auto& f : factors) log_sum += std::log(f.value);
        prod = std::exp(log_sum);
    }
    BoundReport report;
    report.kind = kind;
    report.value = prod;
    report.value_floor = std::floor(prod);
    report.saturated = saturated;
    report.factors = std::move(factors);
    return report;
}

inline std::string layer_label(const char* prefix, std::size_t k, const char* part) {
    return std::string(prefix) + std::to_string(k + 1) + "." + part;
}

// Shared per-layer tail: L^2, width, A^2 for each hidden layer, optionally
// preceded by that layer's keep probability. Keeping one emitter guarantees
// the bitwise reduction identities between the bound variants.
inline void push_layer_factors(const std::vector<LayerSpec>& layers, const double* keeps,
                               const char* keep_label, std::vector<BoundFactor>& factors) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& l = layers[k];
        if (keeps != nullptr)
            factors.push_back({layer_label("layer", k, keep_label), keeps[k]});
        const double lip = l.activation.lipschitz();
        factors.push_back({layer_label("layer", k, "L^2"), lip * lip});
        factors.push_back({layer_label("layer", k, "width"), static_cast<double>(l.width)});
        factors.push_back({layer_label("layer", k, "A^2"), l.max_norm * l.max_norm});
    }
}

}  // namespace detail

// Shatterable-set cap for the plain feed-forward class:
// R^2 A_out^2 prod_k L_k^2 h_k A_k^2. Mixed activations contribute their own
// per-layer Lipschitz factors.
inline BoundReport vc_bound_mlp(const NetworkSpec& spec, const DataStats& stats) {
    ensure_valid(spec);
    ensure_valid(stats);
    std::vector<BoundFactor> factors;
    factors.push_back({"R^2", stats.radius * stats.radius});
    factors.push_back({"A_out^2", spec.output_max_norm * spec.output_max_norm});
    detail::push_layer_factors(spec.hidden, nullptr, "", factors);
    return detail::finish_bound(BoundKind::feedforward, factors);
}

// Uniform-width restatement: R^2 A_out^2 (L^2 h)^P prod_k A_k^2, taking the
// per-layer norm caps A_1..A_{P+1} as a flat list. Bitwise-equal to
// vc_bound_mlp on the equivalent uniform spec.
inline BoundReport vc_bound_fixed_width(int depth, int width, const std::vector<double>& max_norms,
                                        double lipschitz, const DataStats& stats) {
    if (depth < 0) throw std::invalid_argument("depth must be >= 0");
    if (width < 1) throw std::invalid_argument("width must be >= 1");
    if (max_norms.size() != static_cast<std::size_t>(depth) + 1)
        throw std::invalid_argument("expected depth + 1 norm caps (hidden layers plus output)");
    for (double a : max_norms)
        if (!(std::isfinite(a) && a > 0.0))
            throw std::invalid_argument("norm caps must be finite and > 0");
    if (!(std::isfinite(lipschitz) && lipschitz > 0.0))
        throw std::invalid_argument("lipschitz constant must be finite and > 0");
    ensure_valid(stats);

    std::vector<BoundFactor> factors;
    factors.push_back({"R^2", stats.radius * stats.radius});
    factors.push_back({"A_out^2", max_norms.back() * max_norms.back()});
    for (int k = 0; k < depth; ++k) {
        const std::size_t uk = static_cast<std::size_t>(k);
        factors.push_back({detail::layer_label("layer", uk, "L^2"), lipschitz * lipschitz});
        factors.push_back({detail::layer_label("layer", uk, "width"), static_cast<double>(width)});
        factors.push_back({detail::layer_label("layer", uk, "A^2"), max_norms[uk] * max_norms[uk]});
    }
    return detail::finish_bound(BoundKind::fixed_width, factors);
}

// Unit-mask (dropout) variant: each layer's keep probability, the input's
// included, scales the product down. Keep probabilities 1 recover
// vc_bound_mlp bitwise.
inline BoundReport vc_bound_dropout(const NetworkSpec& spec, const DataStats& stats) {
    ensure_valid(spec);
    ensure_valid(stats);
    std::vector<BoundFactor> factors;
    factors.push_back({"keep_in", spec.input_keep_prob});
    factors.push_back({"R^2", stats.radius * stats.radius});
    factors.push_back({"A_out^2", spec.output_max_norm * spec.output_max_norm});
    std::vector<double> keeps;
    keeps.reserve(spec.hidden.size());
    for (const auto& l : spec.hidden) keeps.push_back(l.keep_prob);
    detail::push_layer_factors(spec.hidden, keeps.data(), "keep", factors);
    return detail::finish_bound(BoundKind::dropout, factors);
}

// Entry-mask (dropconnect) variant. The probability attached to hidden layer
// k masks its outgoing weight matrix; the input probability masks the first.
inline BoundReport vc_bound_dropconnect(const NetworkSpec& spec, const DataStats& stats) {
    ensure_valid(spec);
    ensure_valid(stats);
    std::vector<BoundFactor> factors;
    factors.push_back({"dc_in", spec.input_dc_keep_prob});
    factors.push_back({"R^2", stats.radius * stats.radius});
    factors.push_back({"A_out^2", spec.output_max_norm * spec.output_max_norm});
    std::vector<double> keeps;
    keeps.reserve(spec.hidden.size());
    for (const auto& l : spec.hidden) keeps.push_back(l.dc_keep_prob);
    detail::push_layer_factors(spec.hidden, keeps.data(), "dc", factors);
    return detail::finish_bound(BoundKind::dropconnect, factors);
}

// Residual variant. The dense tail contributes keep * L^2 * width * A^2 per
// layer as usual; the convolutional part contributes A_0 N_0 v_0^2 for the
// stem and, per stage r with u units, (A_r N_r v_r^2)^(3u) L^(4u) p_r^u.
inline BoundReport vc_bound_resnet(const ResNetSpec& spec, const DataStats& stats) {
    ensure_valid(spec);
    ensure_valid(stats);
    std::vector<BoundFactor> factors;
    factors.push_back({"R^2", stats.radius * stats.radius});
    factors.push_back({"A_out^2", spec.output_max_norm * spec.output_max_norm});
    for (std::size_t k = 0; k < spec.fc_tail.size(); ++k) {
        const auto& l = spec.fc_tail[k];
        factors.push_back({detail::layer_label("fc", k, "keep"), l.keep_prob});
        const double lip = l.activation.lipschitz();
        factors.push_back({detail::layer_label("fc", k, "L^2"), lip * lip});
        factors.push_back({detail::layer_label("fc", k, "width"), static_cast<double>(l.width)});
        factors.push_back({detail::layer_label("fc", k, "A^2"), l.max_norm * l.max_norm});
    }
    factors.push_back({"stem.ANv^2", spec.stem_max_norm * spec.stem_filters *
                                         spec.stem_filter_size * spec.stem_filter_size});
    const double lip = spec.activation.lipschitz();
    for (std::size_t r = 0; r < spec.blocks.size(); ++r) {
        const auto& b = spec.blocks[r];
        const double anv = b.max_norm * b.filters * b.filter_size * b.filter_size;
        const double u = static_cast<double>(b.units);
        factors.push_back({detail::layer_label("block", r, "(ANv^2)^3u"), std::pow(anv, 3.0 * u)});
        factors.push_back({detail::layer_label("block", r, "L^4u"), std::pow(lip, 4.0 * u)});
        factors.push_back({detail::layer_label("block", r, "keep^u"), std::pow(b.keep_prob, u)});
    }
    return detail::finish_bound(BoundKind::residual, factors);
}

// Adversarial variant: the data radius term R^2 becomes R^2 + c^2 for
// perturbations of l2 budget c. c = 0 recovers vc_bound_mlp bitwise.
inline BoundReport vc_bound_robust(const NetworkSpec& spec, const DataStats& stats) {
    ensure_valid(spec);
    ensure_valid(stats);
    std::vector<BoundFactor> factors;
    factors.push_back({"A_out^2", spec.output_max_norm * spec.output_max_norm});
    factors.push_back({"R^2+c^2", stats.radius * stats.radius +
                                      stats.noise_radius * stats.noise_radius});
    detail::push_layer_factors(spec.hidden, nullptr, "", factors);
    return detail::finish_bound(BoundKind::robust, factors);
}

// Cap on max_i ||phi_P(x_i)||^2 for feasible weights: R^2 prod_k L_k^2 h_k
// A_k^2, i.e. the feed-forward bound without its A_out^2 factor. With
// with_keep_probs set, every layer's keep probability (input included)
// multiplies in and the cap applies to the masked features in expectation.
inline double feature_radius_bound(const NetworkSpec& spec, const DataStats& stats,
                                   bool with_keep_probs = false) {
    ensure_valid(spec);
    ensure_valid(stats);
    double prod = with_keep_probs ? spec.input_keep_prob : 1.0;
    prod *= stats.radius * stats.radius;
    for (const auto& l : spec.hidden) {
        if (with_keep_probs) prod *= l.keep_prob;
        const double lip = l.activation.lipschitz();
        prod *= lip * lip;
        prod *= static_cast<double>(l.width);
        prod *= l.max_norm * l.max_norm;
    }
    return prod;
}

}
