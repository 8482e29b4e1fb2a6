#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dense_net.hpp"

namespace capbound {

// Knobs for the margin and robustness machinery. penalty_weight is tied to
// noise_radius * A_out; build instances through make_robust_config so the tie
// holds.
struct RobustConfig {
    double noise_radius = 0.0;
    double penalty_weight = 0.0;
    int ball_samples = 256;
    double bisection_tol = 0.0;  // 0 picks 1e-6 * R at the point of use
};

inline RobustConfig make_robust_config(double noise_radius, const NetworkSpec& spec,
                                       int ball_samples = 256, double bisection_tol = 0.0) {
    if (!(std::isfinite(noise_radius) && noise_radius >= 0.0))
        throw std::invalid_argument("noise radius must be finite and >= 0");
    if (ball_samples < 1) throw std::invalid_argument("ball_samples must be >= 1");
    RobustConfig cfg;
    cfg.noise_radius = noise_radius;
    cfg.penalty_weight = noise_radius * spec.output_max_norm;
    cfg.ball_samples = ball_samples;
    cfg.bisection_tol = bisection_tol;
    return cfg;
}

// Distance of phi_P(x) from the output hyperplane {v : v . w = 0}:
// |phi_P(x) . w| / ||w||. Zero weights give margin 0.
inline double output_margin(const DenseNet& net, const Eigen::VectorXd& x) {
    const auto trace = forward(net, x);
    const double wn = net.weights.back().col(0).norm();
    return wn == 0.0 ? 0.0 : std::fabs(trace.output) / wn;
}

inline double mean_output_margin(const DenseNet& net, const Dataset& data) {
    if (data.size() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i)
        total += output_margin(net, data.x.row(i).transpose());
    return total / static_cast<double>(data.size());
}

struct InputMargin {
    double distance = std::numeric_limits<double>::infinity();
    bool found = false;
};

// Upper estimate of the input-space margin: walk the steepest-descent ray
// -sign(f(x)) grad f(x) out to the first sign change within search_radius,
// then bisect the bracket down to tol. No crossing (or no usable gradient
// direction) reports found = false with an infinite distance.
inline InputMargin input_margin_upper(const DenseNet& net, const Eigen::VectorXd& x, double tol,
                                      double search_radius) {
    if (!(tol > 0.0) || !(search_radius > 0.0))
        throw std::invalid_argument("tol and search_radius must be > 0");
    const double f0 = forward_score(net, x);
    if (f0 == 0.0) return {0.0, true};
    const Eigen::RowVectorXd g = jacobian_output(net, x);
    const double gn = g.norm();
    if (gn == 0.0) return {};
    const Eigen::VectorXd dir = -(f0 > 0.0 ? 1.0 : -1.0) * g.transpose() / gn;

    const int scan_steps = 4096;
    const auto flipped = [f0](double f) { return f0 > 0.0 ? f <= 0.0 : f >= 0.0; };
    double lo = 0.0;
    for (int i = 1; i <= scan_steps; ++i) {
        const double t = search_radius * static_cast<double>(i) / scan_steps;
        if (!flipped(forward_score(net, x + t * dir))) {
            lo = t;
            continue;
        }
        double hi = t;
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            if (flipped(forward_score(net, x + mid * dir)))
                hi = mid;
            else
                lo = mid;
        }
        return {0.5 * (lo + hi), true};
    }
    return {};
}

// gamma_op / sup ||J||_2: dividing the feature-space margin by a bound on the
// feature map's stretch lower-bounds the input-space margin.
inline double certificate_from(double gamma_op, double jacobian_sup) {
    if (jacobian_sup == 0.0)
        return gamma_op == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return gamma_op / jacobian_sup;
}

struct MarginCertificate {
    double certificate = 0.0;
    double gamma_op = 0.0;
    double jacobian_sup = 0.0;
    InputMargin upper;
};

// Certified lower estimate of the input margin at x. The spectral norm of the
// feature Jacobian is maximized over sampled points of the ball of radius
// gamma_ip_upper around x (segment samples plus, when a crossing was found,
// deterministic samples along the crossing ray, which dominate the sup for
// piecewise-linear nets).
inline MarginCertificate input_margin_certificate(const DenseNet& net, const Eigen::VectorXd& x,
                                                  const DataStats& stats, const RobustConfig& cfg,
                                                  std::uint64_t seed = 0) {
    ensure_valid(stats);
    MarginCertificate cert;
    cert.gamma_op = output_margin(net, x);
    const double tol = cfg.bisection_tol > 0.0 ? cfg.bisection_tol : 1e-6 * stats.radius;
    cert.upper = input_margin_upper(net, x, tol, 4.0 * stats.radius);
    const double ball = cert.upper.found ? cert.upper.distance : 4.0 * stats.radius;

    double sup = jacobian_spectral(net, x, seed).value;
    CounterRng rng(seed, stream_id(kSamplingStream, 1));
    const int budget = cfg.ball_samples;
    int ray_budget = 0;
    if (cert.upper.found && cert.upper.distance > 0.0) ray_budget = budget / 3;
    if (ray_budget > 0) {
        const Eigen::RowVectorXd g = jacobian_output(net, x);
        const Eigen::VectorXd dir =
            -(forward_score(net, x) > 0.0 ? 1.0 : -1.0) * g.transpose() / g.norm();
        for (int i = 1; i <= ray_budget; ++i) {
            const double t = cert.upper.distance * static_cast<double>(i) / ray_budget;
            sup = std::max(sup, jacobian_spectral(net, x + t * dir, seed).value);
        }
    }
    const int d = net.spec.input_dim;
    for (int i = ray_budget; i < budget; ++i) {
        Eigen::VectorXd u(d);
        for (int j = 0; j < d; ++j) u[j] = rng.normal();
        const double un = u.norm();
        if (un == 0.0) continue;
        const double radius = ball * std::pow(rng.uniform01(), 1.0 / d);
        const Eigen::VectorXd target = x + (radius / un) * u;
        const double t = rng.uniform01();
        sup = std::max(sup, jacobian_spectral(net, x + t * (target - x), seed).value);
    }
    cert.jacobian_sup = sup;
    cert.certificate = certificate_from(cert.gamma_op, sup);
    return cert;
}

// Smoothness-penalized hinge: mean hinge + penalty_weight * mean ||J_phi||_F.
// The gradient of the Frobenius term goes through the activation derivatives
// (full second-order term for smooth activations); for relu the activation
// pattern is locally constant and the second-order term vanishes on its own.
struct RobustObjective {
    double value = 0.0;
    double hinge_term = 0.0;
    double penalty_term = 0.0;
    std::vector<Eigen::MatrixXd> grad;
};

namespace detail {

// d ||J_phi(x)||_F / dW via forward tangents (columns of J) and a reverse
// sweep that also tracks the dependence of sigma'(z) on the weights.
inline void accumulate_penalty_grad(const DenseNet& net, const ForwardTrace& trace, double scale,
                                    std::vector<Eigen::MatrixXd>& grads, double& frobenius_out) {
    const int depth = net.spec.depth();
    const int d = net.spec.input_dim;

    std::vector<Eigen::MatrixXd> tangents;  // T_k = J of phi_k, k = 0..P
    std::vector<Eigen::MatrixXd> pre_tangents;  // U_k = W_{k-1}^T T_{k-1}, k = 1..P
    tangents.reserve(static_cast<std::size_t>(depth) + 1);
    pre_tangents.reserve(static_cast<std::size_t>(depth));
    tangents.push_back(Eigen::MatrixXd::Identity(d, d));
    for (int k = 1; k <= depth; ++k) {
        const std::size_t uk = static_cast<std::size_t>(k);
        const Activation& act = net.spec.hidden[uk - 1].activation;
        Eigen::MatrixXd u = net.weights[uk - 1].transpose() * tangents[uk - 1];
        const Eigen::VectorXd s = activation_derivative(act, trace.zs[uk - 1]);
        tangents.push_back(s.asDiagonal() * u);
        pre_tangents.push_back(std::move(u));
    }

    const double fro = tangents.back().norm();
    frobenius_out = fro;
    if (fro == 0.0 || depth == 0) return;  // constant penalty or flat region

    // d fro / dtheta = d (fro^2) / dtheta / (2 fro)
    const double outer = scale / (2.0 * fro);
    Eigen::MatrixXd tau = 2.0 * tangents.back();           // dL/dT_P for L = fro^2
    Eigen::VectorXd psi = Eigen::VectorXd::Zero(
        net.spec.hidden.back().width);                     // dL/dphi_P
    for (int k = depth; k >= 1; --k) {
        const std::size_t uk = static_cast<std::size_t>(k);
        const Activation& act = net.spec.hidden[uk - 1].activation;
        const Eigen::VectorXd s = activation_derivative(act, trace.zs[uk - 1]);
        Eigen::VectorXd curv(trace.zs[uk - 1].size());
        for (Eigen::Index i = 0; i < curv.size(); ++i)
            curv[i] = act.second_derivative(trace.zs[uk - 1][i]);
        const Eigen::MatrixXd du = s.asDiagonal() * tau;   // dL/dU_k
        const Eigen::VectorXd q = tau.cwiseProduct(pre_tangents[uk - 1]).rowwise().sum();
        const Eigen::VectorXd zeta = psi.cwiseProduct(s) + curv.cwiseProduct(q);
        grads[uk - 1] += outer * (trace.phis[uk - 1] * zeta.transpose() +
                                  tangents[uk - 1] * du.transpose());
        if (k > 1) {
            psi = net.weights[uk - 1] * zeta;
            tau = net.weights[uk - 1] * du;
        }
    }
}

}  // namespace detail

inline RobustObjective robust_objective(const DenseNet& net, const Dataset& batch,
                                        const RobustConfig& cfg) {
    RobustObjective obj;
    obj.grad = zero_like_weights(net);
    if (batch.size() == 0) return obj;
    const double m = static_cast<double>(batch.size());
    const MaskSample none{};
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const auto trace = forward(net, batch.x.row(i).transpose());
        obj.hinge_term += hinge_loss(trace.output, batch.y[i]) / m;
        if (1.0 - batch.y[i] * trace.output > 0.0)
            detail::accumulate_output_grad(net, trace, none, -batch.y[i] / m, obj.grad);
        double fro = 0.0;
        detail::accumulate_penalty_grad(net, trace, cfg.penalty_weight / m, obj.grad, fro);
        obj.penalty_term += cfg.penalty_weight * fro / m;
    }
    obj.value = obj.hinge_term + obj.penalty_term;
    return obj;
}

// Hinge after the first-order worst-case perturbation, re-evaluated exactly:
// delta = -c y J_out(x)^T / ||J_out(x)||. The unperturbed point stays in the
// candidate set, so the result never drops below the plain hinge.
inline double robust_hinge_explicit(const DenseNet& net, const Dataset& batch,
                                    const RobustConfig& cfg) {
    if (batch.size() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const Eigen::VectorXd x = batch.x.row(i).transpose();
        const double y = batch.y[i];
        double worst = hinge_loss(forward_score(net, x), y);
        const Eigen::RowVectorXd g = jacobian_output(net, x);
        const double gn = g.norm();
        if (gn > 0.0 && cfg.noise_radius > 0.0) {
            const Eigen::VectorXd delta = -(cfg.noise_radius * y / gn) * g.transpose();
            worst = std::max(worst, hinge_loss(forward_score(net, x + delta), y));
        }
        total += worst;
    }
    return total / static_cast<double>(batch.size());
}

// Per-sample margin summary. Misclassified samples (y f <= 0) carry zero
// margins and correct = false; aggregates cover correctly classified rows.
struct MarginRow {
    int index = 0;
    double label = 0.0;
    double score = 0.0;
    bool correct = false;
    double gamma_op = 0.0;
    double gamma_ip_upper = 0.0;
    bool upper_found = false;
    double gamma_cert = 0.0;
    double jacobian_sup = 0.0;
};

struct MarginReport {
    std::vector<MarginRow> rows;
    int correct_count = 0;
    double mean_gamma_op = 0.0;
    double min_gamma_op = 0.0;
    double mean_gamma_cert = 0.0;
    double min_gamma_cert = 0.0;
    std::uint64_t seed = 0;
};

inline MarginReport margin_report(const DenseNet& net, const Dataset& data,
                                  const DataStats& stats, const RobustConfig& cfg,
                                  std::uint64_t seed = 0) {
    MarginReport report;
    report.seed = seed;
    report.rows.reserve(static_cast<std::size_t>(data.size()));
    double sum_op = 0.0, sum_cert = 0.0;
    double min_op = std::numeric_limits<double>::infinity();
    double min_cert = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        MarginRow row;
        row.index = static_cast<int>(i);
        row.label = data.y[i];
        const Eigen::VectorXd x = data.x.row(i).transpose();
        row.score = forward_score(net, x);
        row.correct = row.label * row.score > 0.0;
        if (row.correct) {
            const auto cert = input_margin_certificate(
                net, x, stats, cfg, stream_id(seed, static_cast<std::uint64_t>(i)));
            row.gamma_op = cert.gamma_op;
            row.gamma_ip_upper = cert.upper.distance;
            row.upper_found = cert.upper.found;
            row.gamma_cert = cert.certificate;
            row.jacobian_sup = cert.jacobian_sup;
            sum_op += row.gamma_op;
            sum_cert += row.gamma_cert;
            min_op = std::min(min_op, row.gamma_op);
            min_cert = std::min(min_cert, row.gamma_cert);
            ++report.correct_count;
        }
        report.rows.push_back(row);
    }
    if (report.correct_count > 0) {
        report.mean_gamma_op = sum_op / report.correct_count;
        report.mean_gamma_cert = sum_cert / report.correct_count;
        report.min_gamma_op = min_op;
        report.min_gamma_cert = min_cert;
    }
    return report;
}

enum class Objective { hinge, robust };

inline const char* to_string(Objective objective) {
    return objective == Objective::hinge ? "hinge" : "robust";
}

struct TrainSchedule {
    int epochs = 100;
    double lr = 0.1;
    int batch_size = 32;
    std::uint64_t seed = 0;
    int margin_every = 0;  // 0 disables periodic margin reports
};

struct HistoryRow {
    int epoch = 0;
    double hinge = 0.0;
    double zero_one = 0.0;
    double mean_output_margin = 0.0;
    double penalty = 0.0;  // robust objective only, else 0
};

struct EpochMargins {
    int epoch = 0;
    MarginReport report;
};

struct TrainResult {
    DenseNet net;
    std::vector<HistoryRow> history;
    std::vector<EpochMargins> margin_probes;
    bool diverged = false;
    std::string diagnostic;
};

// Projected subgradient training. Deterministic given the schedule seed:
// shuffles, masks and metrics all replay. A non-finite epoch metric reverts
// to the last finite checkpoint and stops.
inline TrainResult train(const DenseNet& start, const Dataset& data,
                         const TrainSchedule& schedule, Objective objective, MaskPolicy policy,
                         const RobustConfig* robust = nullptr, const DataStats* stats = nullptr) {
    if (schedule.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (schedule.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(std::isfinite(schedule.lr) && schedule.lr >= 0.0))
        throw std::invalid_argument("learning rate must be finite and >= 0");
    if (data.size() == 0) throw std::invalid_argument("training data is empty");
    if (objective == Objective::robust && robust == nullptr)
        throw std::invalid_argument("robust objective requires a RobustConfig");
    if (objective == Objective::robust && policy != MaskPolicy::none)
        throw std::invalid_argument("mask sampling and the smoothness penalty do not combine");
    if (schedule.margin_every > 0 && stats == nullptr)
        throw std::invalid_argument("margin probes require data stats");

    TrainResult result;
    result.net = start;
    max_norm_project(result.net);

    const auto n = data.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::uint64_t step = 0;

    const RobustConfig probe_cfg = robust ? *robust : RobustConfig{};

    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        const DenseNet checkpoint = result.net;
        CounterRng shuffle_rng(schedule.seed, stream_id(kShuffleStream, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.below(i))]);

        for (Eigen::Index begin = 0; begin < n; begin += schedule.batch_size) {
            const Eigen::Index count = std::min<Eigen::Index>(schedule.batch_size, n - begin);
            Dataset batch;
            batch.x.resize(count, data.x.cols());
            batch.y.resize(count);
            for (Eigen::Index r = 0; r < count; ++r) {
                batch.x.row(r) = data.x.row(order[static_cast<std::size_t>(begin + r)]);
                batch.y[r] = data.y[order[static_cast<std::size_t>(begin + r)]];
            }
            if (objective == Objective::hinge) {
                sgd_step(result.net, batch, schedule.lr, policy, schedule.seed, step);
            } else {
                const auto obj = robust_objective(result.net, batch, *robust);
                for (std::size_t k = 0; k < result.net.weights.size(); ++k)
                    result.net.weights[k] -= schedule.lr * obj.grad[k];
                max_norm_project(result.net);
            }
            ++step;
        }

        HistoryRow row;
        row.epoch = epoch + 1;
        row.hinge = empirical_hinge(result.net, data);
        row.zero_one = empirical_zero_one(result.net, data);
        row.mean_output_margin = mean_output_margin(result.net, data);
        if (objective == Objective::robust)
            row.penalty = robust_objective(result.net, data, *robust).penalty_term;
        if (!std::isfinite(row.hinge) || !std::isfinite(row.mean_output_margin) ||
            !std::isfinite(row.penalty)) {
            result.net = checkpoint;
            result.diverged = true;
            result.diagnostic = "non-finite training metrics at epoch " + std::to_string(epoch + 1) +
                                "; reverted to the last finite checkpoint";
            break;
        }
        result.history.push_back(row);
        if (schedule.margin_every > 0 && (epoch + 1) % schedule.margin_every == 0)
            result.margin_probes.push_back(
                {epoch + 1, margin_report(result.net, data, *stats, probe_cfg, schedule.seed)});
    }
    return result;
}

}
