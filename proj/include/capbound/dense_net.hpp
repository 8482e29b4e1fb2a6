#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "model_spec.hpp"
#include "rng.hpp"

namespace capbound {

// Stream tags for the counter RNG, so independent consumers never collide.
inline constexpr std::uint64_t kInitStream = 0x11;
inline constexpr std::uint64_t kMaskStream = 0x22;
inline constexpr std::uint64_t kShuffleStream = 0x33;
inline constexpr std::uint64_t kSpectralStream = 0x44;
inline constexpr std::uint64_t kSamplingStream = 0x55;

// Weight matrix k maps layer k to layer k+1 and has shape dims[k] x
// dims[k+1]; column t is the incoming weight vector of unit t, the object the
// max-norm caps apply to. The output matrix is the single column w.
struct DenseNet {
    NetworkSpec spec;
    std::vector<Eigen::MatrixXd> weights;
};

struct ForwardTrace {
    std::vector<Eigen::VectorXd> phis;  // phi_0 = x (masked if applicable), ..., phi_P
    std::vector<Eigen::VectorXd> zs;    // preactivations z_1..z_P
    double output = 0.0;
    bool hit_kink = false;  // some hidden preactivation sat exactly on a relu kink
};

enum class MaskPolicy { none, dropout, dropconnect };

inline const char* to_string(MaskPolicy policy) {
    switch (policy) {
        case MaskPolicy::none: return "none";
        case MaskPolicy::dropout: return "dropout";
        case MaskPolicy::dropconnect: return "dropconnect";
    }
    return "none";
}

// One realized mask. Dropout keeps `unit` (input mask u_0, then one mask per
// hidden layer's outputs); dropconnect keeps `weight` (one 0/1 matrix per
// weight matrix, the output column included).
struct MaskSample {
    MaskPolicy policy = MaskPolicy::none;
    std::vector<Eigen::VectorXd> unit;
    std::vector<Eigen::MatrixXd> weight;
};

// Rows are samples; labels are exactly +1 or -1.
struct Dataset {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;

    Eigen::Index size() const { return x.rows(); }
};

namespace detail {

inline void apply_activation(const Activation& act, const Eigen::VectorXd& z,
                             Eigen::VectorXd& out, bool& hit_kink) {
    out.resize(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        out[i] = act(z[i]);
        if (act.at_kink(z[i])) hit_kink = true;
    }
}

inline Eigen::VectorXd activation_derivative(const Activation& act, const Eigen::VectorXd& z) {
    Eigen::VectorXd d(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) d[i] = act.derivative(z[i]);
    return d;
}

}  // namespace detail

inline DenseNet init_net(const NetworkSpec& spec, std::uint64_t seed) {
    ensure_valid(spec);
    DenseNet net;
    net.spec = spec;
    const auto dims = spec.dims();
    net.weights.reserve(dims.size() - 1);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        CounterRng rng(seed, stream_id(kInitStream, k));
        // Uniform in [-a, a] with a = cap / sqrt(fan_in): every column is
        // feasible from the start, with norm at the cap only in the corner.
        const double a = spec.max_norm_for(static_cast<int>(k)) / std::sqrt(double(dims[k]));
        Eigen::MatrixXd w(dims[k], dims[k + 1]);
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-a, a);
        net.weights.push_back(std::move(w));
    }
    return net;
}

// Rescales every over-cap incoming weight column back onto its cap.
// Idempotent; columns at or under the cap are untouched.
inline void max_norm_project(DenseNet& net) {
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
        const double cap = net.spec.max_norm_for(static_cast<int>(k));
        auto& w = net.weights[k];
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            const double n = w.col(j).norm();
            if (n > cap) w.col(j) *= cap / n;
        }
    }
}

inline MaskSample sample_mask(const NetworkSpec& spec, MaskPolicy policy, CounterRng& rng) {
    MaskSample mask;
    mask.policy = policy;
    if (policy == MaskPolicy::none) return mask;
    const auto dims = spec.dims();
    if (policy == MaskPolicy::dropout) {
        // u_0 masks the input, u_k the outputs of hidden layer k; the scalar
        // output is never masked.
        mask.unit.reserve(dims.size() - 1);
        for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
            const double p = k == 0 ? spec.input_keep_prob : spec.hidden[k - 1].keep_prob;
            Eigen::VectorXd u(dims[k]);
            for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = rng.bernoulli(p) ? 1.0 : 0.0;
            mask.unit.push_back(std::move(u));
        }
        return mask;
    }
    mask.weight.reserve(dims.size() - 1);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        const double p = spec.dc_keep_prob_for(static_cast<int>(k));
        Eigen::MatrixXd m(dims[k], dims[k + 1]);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                m(i, j) = rng.bernoulli(p) ? 1.0 : 0.0;
        mask.weight.push_back(std::move(m));
    }
    return mask;
}

inline ForwardTrace forward_masked(const DenseNet& net, const Eigen::VectorXd& x,
                                   const MaskSample& mask) {
    if (x.size() != net.spec.input_dim)
        throw std::invalid_argument("input dimension mismatch");
    const int depth = net.spec.depth();
    ForwardTrace trace;
    trace.phis.reserve(static_cast<std::size_t>(depth) + 1);
    trace.zs.reserve(static_cast<std::size_t>(depth));

    Eigen::VectorXd phi = x;
    if (mask.policy == MaskPolicy::dropout) phi = mask.unit[0].cwiseProduct(phi);
    trace.phis.push_back(phi);

    for (int k = 0; k < depth; ++k) {
        const std::size_t uk = static_cast<std::size_t>(k);
        Eigen::VectorXd z;
        if (mask.policy == MaskPolicy::dropconnect)
            z = net.weights[uk].cwiseProduct(mask.weight[uk]).transpose() * phi;
        else
            z = net.weights[uk].transpose() * phi;
        trace.zs.push_back(z);
        Eigen::VectorXd a;
        detail::apply_activation(net.spec.hidden[uk].activation, z, a, trace.hit_kink);
        if (mask.policy == MaskPolicy::dropout) a = mask.unit[uk + 1].cwiseProduct(a);
        phi = std::move(a);
        trace.phis.push_back(phi);
    }

    const std::size_t last = static_cast<std::size_t>(depth);
    if (mask.policy == MaskPolicy::dropconnect)
        trace.output = net.weights[last].cwiseProduct(mask.weight[last]).col(0).dot(phi);
    else
        trace.output = net.weights[last].col(0).dot(phi);
    return trace;
}

inline ForwardTrace forward(const DenseNet& net, const Eigen::VectorXd& x) {
    return forward_masked(net, x, MaskSample{});
}

inline double forward_score(const DenseNet& net, const Eigen::VectorXd& x) {
    return forward(net, x).output;
}

inline double hinge_loss(double score, double label) {
    const double margin = 1.0 - label * score;
    return margin > 0.0 ? margin : 0.0;
}

inline double empirical_hinge(const DenseNet& net, const Dataset& data) {
    if (data.size() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i)
        total += hinge_loss(forward_score(net, data.x.row(i).transpose()), data.y[i]);
    return total / static_cast<double>(data.size());
}

// sign(0) matches neither label, so a zero score counts as an error.
inline double empirical_zero_one(const DenseNet& net, const Dataset& data) {
    if (data.size() == 0) return 0.0;
    double errors = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i)
        if (data.y[i] * forward_score(net, data.x.row(i).transpose()) <= 0.0) errors += 1.0;
    return errors / static_cast<double>(data.size());
}

inline std::vector<Eigen::MatrixXd> zero_like_weights(const DenseNet& net) {
    std::vector<Eigen::MatrixXd> grads;
    grads.reserve(net.weights.size());
    for (const auto& w : net.weights) grads.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    return grads;
}

namespace detail {

// Backward pass for dL/df = scale at a recorded trace. Handles both mask
// policies; masked matrix entries receive zero gradient under dropconnect.
inline void accumulate_output_grad(const DenseNet& net, const ForwardTrace& trace,
                                   const MaskSample& mask, double scale,
                                   std::vector<Eigen::MatrixXd>& grads) {
    const int depth = net.spec.depth();
    const std::size_t last = static_cast<std::size_t>(depth);
    const bool dropout = mask.policy == MaskPolicy::dropout;
    const bool dropconnect = mask.policy == MaskPolicy::dropconnect;

    Eigen::MatrixXd g_out = scale * trace.phis[last];
    if (dropconnect) g_out = mask.weight[last].col(0).cwiseProduct(g_out);
    grads[last].col(0) += g_out;

    if (depth == 0) return;
    Eigen::VectorXd dphi;
    if (dropconnect)
        dphi = scale * net.weights[last].cwiseProduct(mask.weight[last]).col(0);
    else
        dphi = scale * net.weights[last].col(0);

    for (int k = depth; k >= 1; --k) {
        const std::size_t uk = static_cast<std::size_t>(k);
        if (dropout) dphi = mask.unit[uk].cwiseProduct(dphi);
        const Eigen::VectorXd dz =
            activation_derivative(net.spec.hidden[uk - 1].activation, trace.zs[uk - 1])
                .cwiseProduct(dphi);
        Eigen::MatrixXd dw = trace.phis[uk - 1] * dz.transpose();
        if (dropconnect) dw = dw.cwiseProduct(mask.weight[uk - 1]);
        grads[uk - 1] += dw;
        if (k > 1) {
            if (dropconnect)
                dphi = net.weights[uk - 1].cwiseProduct(mask.weight[uk - 1]) * dz;
            else
                dphi = net.weights[uk - 1] * dz;
        }
    }
}

}  // namespace detail

// Mean hinge subgradient over the batch; the hinge is inactive (zero
// contribution) at margin >= 1, including exactly at the threshold. One mask
// per sample when `masks` is supplied.
inline std::vector<Eigen::MatrixXd> grad_hinge(const DenseNet& net, const Dataset& batch,
                                               const std::vector<MaskSample>* masks = nullptr) {
    if (masks && static_cast<Eigen::Index>(masks->size()) != batch.size())
        throw std::invalid_argument("expected one mask per batch sample");
    auto grads = zero_like_weights(net);
    if (batch.size() == 0) return grads;
    const MaskSample none{};
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const MaskSample& mask = masks ? (*masks)[static_cast<std::size_t>(i)] : none;
        const auto trace = forward_masked(net, batch.x.row(i).transpose(), mask);
        if (1.0 - batch.y[i] * trace.output > 0.0)
            detail::accumulate_output_grad(net, trace, mask, -batch.y[i] / double(batch.size()),
                                           grads);
    }
    return grads;
}

// One projected subgradient step. Masks are redrawn per (step, sample) from
// the counter RNG, so a run is replayable from (seed, step) alone.
inline void sgd_step(DenseNet& net, const Dataset& batch, double lr, MaskPolicy policy,
                     std::uint64_t seed, std::uint64_t step) {
    std::vector<MaskSample> masks;
    const std::vector<MaskSample>* mask_ptr = nullptr;
    if (policy != MaskPolicy::none) {
        masks.reserve(static_cast<std::size_t>(batch.size()));
        for (Eigen::Index i = 0; i < batch.size(); ++i) {
            CounterRng rng(seed, stream_id(kMaskStream, step, static_cast<std::uint64_t>(i)));
            masks.push_back(sample_mask(net.spec, policy, rng));
        }
        mask_ptr = &masks;
    }
    const auto grads = grad_hinge(net, batch, mask_ptr);
    for (std::size_t k = 0; k < net.weights.size(); ++k) net.weights[k] -= lr * grads[k];
    max_norm_project(net);
}

// Jacobian of the feature map phi_P at x (h_P x d), the identity when P = 0.
// Relu kinks contribute derivative 0; the trace flags them.
inline Eigen::MatrixXd jacobian_feature(const DenseNet& net, const Eigen::VectorXd& x) {
    const auto trace = forward(net, x);
    Eigen::MatrixXd j = Eigen::MatrixXd::Identity(net.spec.input_dim, net.spec.input_dim);
    for (int k = 0; k < net.spec.depth(); ++k) {
        const std::size_t uk = static_cast<std::size_t>(k);
        const Eigen::VectorXd d =
            detail::activation_derivative(net.spec.hidden[uk].activation, trace.zs[uk]);
        j = d.asDiagonal() * (net.weights[uk].transpose() * j);
    }
    return j;
}

// Gradient row of the scalar output: w^T J_phi.
inline Eigen::RowVectorXd jacobian_output(const DenseNet& net, const Eigen::VectorXd& x) {
    return net.weights.back().col(0).transpose() * jacobian_feature(net, x);
}

inline double jacobian_frobenius(const DenseNet& net, const Eigen::VectorXd& x) {
    return jacobian_feature(net, x).norm();
}

struct SpectralNorm {
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Largest singular value by power iteration on m^T m, seeded start vector,
// |lambda_{t+1} - lambda_t| <= 1e-10 max(1, lambda) stop, 10000 iteration cap.
inline SpectralNorm spectral_norm(const Eigen::MatrixXd& m, std::uint64_t seed = 0) {
    constexpr double tol = 1e-10;
    constexpr int max_iters = 10000;
    if (m.rows() == 0 || m.cols() == 0) return {0.0, true, 0};
    CounterRng rng(seed, stream_id(kSpectralStream));
    Eigen::VectorXd v(m.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1.0, 1.0);
    v /= v.norm();
    double lambda = 0.0;
    for (int it = 1; it <= max_iters; ++it) {
        const Eigen::VectorXd w = m.transpose() * (m * v);
        const double next = v.dot(w);  // Rayleigh quotient at unit v
        const double wn = w.norm();
        if (wn == 0.0) return {0.0, true, it};
        v = w / wn;
        if (std::fabs(next - lambda) <= tol * std::max(1.0, std::fabs(next)))
            return {std::sqrt(std::max(next, 0.0)), true, it};
        lambda = next;
    }
    return {std::sqrt(std::max(lambda, 0.0)), false, max_iters};
}

inline SpectralNorm jacobian_spectral(const DenseNet& net, const Eigen::VectorXd& x,
                                      std::uint64_t seed = 0) {
    return spectral_norm(jacobian_feature(net, x), seed);
}

}
