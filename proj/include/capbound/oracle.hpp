#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "capacity.hpp"
#include "margins.hpp"
#include "text_util.hpp"

namespace capbound {

// One verification outcome. Convention: passed iff statistic <= threshold,
// with `aux` carrying an oracle-specific secondary measurement (documented at
// each oracle). Monte Carlo oracles use 4 sigma-hat / sqrt(N) thresholds.
struct OracleResult {
    std::string name;
    bool passed = false;
    double statistic = 0.0;
    double threshold = 0.0;
    double aux = 0.0;
    long long samples = 0;
    std::uint64_t seed = 0;
    std::string note;
};

namespace detail {

inline Eigen::VectorXd random_in_ball(int dim, double radius, CounterRng& rng) {
    Eigen::VectorXd u(dim);
    double un = 0.0;
    do {
        for (int j = 0; j < dim; ++j) u[j] = rng.normal();
        un = u.norm();
    } while (un == 0.0);
    const double r = radius * std::pow(rng.uniform01(), 1.0 / dim);
    return (r / un) * u;
}

// Feasible net with a mix of interior and at-cap columns: random init, random
// per-matrix rescale, then projection.
inline DenseNet random_feasible_net(const NetworkSpec& spec, std::uint64_t seed) {
    DenseNet net = init_net(spec, seed);
    CounterRng rng(seed, stream_id(kSamplingStream, 7));
    for (auto& w : net.weights) w *= rng.uniform(0.5, 3.0);
    max_norm_project(net);
    return net;
}

struct RunningStats {
    double mean = 0.0;
    double m2 = 0.0;
    long long n = 0;

    void add(double v) {
        ++n;
        const double d = v - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v - mean);
    }
    double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
    double stddev() const { return std::sqrt(variance()); }
};

}  // namespace detail

// E ||u . v||^2 over Bernoulli(p) unit masks u equals p ||v||^2. aux holds the
// analytic value.
inline OracleResult mc_masked_norm(const Eigen::VectorXd& v, double keep_prob, long long trials,
                                   std::uint64_t seed) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0))
        throw std::invalid_argument("keep probability must be in (0, 1]");
    if (trials < 2) throw std::invalid_argument("need at least 2 trials");
    CounterRng rng(seed, stream_id(kSamplingStream, 11));
    detail::RunningStats stats;
    for (long long t = 0; t < trials; ++t) {
        double sq = 0.0;
        for (Eigen::Index i = 0; i < v.size(); ++i)
            if (rng.bernoulli(keep_prob)) sq += v[i] * v[i];
        stats.add(sq);
    }
    // Same summation order as the estimator, so the p = 1 case (zero
    // variance) compares exactly.
    double norm_sq = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) norm_sq += v[i] * v[i];
    const double expected = keep_prob * norm_sq;
    OracleResult r;
    r.name = "mask_second_moment";
    r.statistic = std::fabs(stats.mean - expected);
    r.threshold = 4.0 * stats.stddev() / std::sqrt(static_cast<double>(trials));
    r.aux = expected;
    r.samples = trials;
    r.seed = seed;
    r.passed = r.statistic <= r.threshold;
    return r;
}

// Independent uniform labels: E[y_i y_j] is 0 off the diagonal and exactly 1
// on it. statistic is the worst off-diagonal mean over all pairs.
inline OracleResult label_orthogonality(int m, long long trials, std::uint64_t seed) {
    if (m < 2) throw std::invalid_argument("need at least 2 labels");
    if (trials < 1) throw std::invalid_argument("need at least 1 trial");
    CounterRng rng(seed, stream_id(kSamplingStream, 13));
    const int pairs = m * (m - 1) / 2;
    std::vector<double> sums(static_cast<std::size_t>(pairs), 0.0);
    std::vector<double> y(static_cast<std::size_t>(m));
    long long diag_violations = 0;
    for (long long t = 0; t < trials; ++t) {
        for (auto& yi : y) yi = rng.bernoulli(0.5) ? 1.0 : -1.0;
        for (const auto& yi : y)
            if (yi * yi != 1.0) ++diag_violations;
        int pair = 0;
        for (int i = 0; i < m; ++i)
            for (int j = i + 1; j < m; ++j) sums[static_cast<std::size_t>(pair++)] += y[i] * y[j];
    }
    double worst = 0.0;
    for (double s : sums) worst = std::max(worst, std::fabs(s / static_cast<double>(trials)));
    OracleResult r;
    r.name = "label_orthogonality";
    r.statistic = worst;
    r.threshold = 4.0 / std::sqrt(static_cast<double>(trials));  // each product has variance 1
    r.aux = static_cast<double>(diag_violations);
    r.samples = trials;
    r.seed = seed;
    r.passed = r.statistic <= r.threshold && diag_violations == 0;
    r.note = std::to_string(pairs) + " pairs";
    return r;
}

// Two labels, all four labelings enumerated: the off-diagonal mean is 0 with
// no sampling error at all.
inline OracleResult label_orthogonality_enumerated() {
    double sum = 0.0;
    for (int a : {-1, 1})
        for (int b : {-1, 1}) sum += static_cast<double>(a * b);
    OracleResult r;
    r.name = "label_orthogonality_enumerated";
    r.statistic = std::fabs(sum / 4.0);
    r.threshold = 0.0;
    r.samples = 4;
    r.passed = r.statistic <= r.threshold;
    return r;
}

// Two-point contraction |sigma(a) - sigma(b)| <= L |a - b| on stratified
// random pairs (global, local, near-origin local), plus the one-point norm
// form for origin-passing activations. Pass l_override to probe a constant
// other than the declared one; statistic is the worst relative violation.
inline OracleResult lipschitz_check(const Activation& act, long long trials, std::uint64_t seed,
                                    double l_override = -1.0) {
    if (trials < 3) throw std::invalid_argument("need at least 3 trials");
    const double lip = l_override > 0.0 ? l_override : act.lipschitz();
    CounterRng rng(seed, stream_id(kSamplingStream, 17));
    const int dim = 4;
    double worst = -std::numeric_limits<double>::infinity();
    const auto check_pair = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        double lhs = 0.0;
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            const double d = act(a[i]) - act(b[i]);
            lhs += d * d;
        }
        const double rhs = lip * (a - b).norm();
        if (rhs > 0.0) worst = std::max(worst, std::sqrt(lhs) / rhs - 1.0);
    };
    Eigen::VectorXd a(dim), b(dim);
    for (long long t = 0; t < trials; ++t) {
        const int stratum = static_cast<int>(t % 3);
        for (int i = 0; i < dim; ++i) {
            if (stratum == 0) {
                a[i] = rng.uniform(-10.0, 10.0);
                b[i] = rng.uniform(-10.0, 10.0);
            } else if (stratum == 1) {
                a[i] = rng.uniform(-10.0, 10.0);
                b[i] = a[i] + rng.uniform(-0.1, 0.1);
            } else {
                a[i] = rng.uniform(-0.5, 0.5);
                b[i] = a[i] + rng.uniform(-0.01, 0.01);
            }
        }
        check_pair(a, b);
        if (act.passes_through_origin()) check_pair(a, Eigen::VectorXd::Zero(dim));
    }
    OracleResult r;
    r.name = std::string("lipschitz_") + to_string(act.kind);
    r.statistic = worst;
    r.threshold = 1e-12;
    r.aux = lip;
    r.samples = trials;
    r.seed = seed;
    r.passed = r.statistic <= r.threshold;
    return r;
}

// max_i ||phi_P(x_i)||^2 over feasible weights never exceeds the layer-peeling
// cap. Deterministic inequality; the threshold only absorbs rounding.
inline OracleResult feature_radius_check(const NetworkSpec& spec, const DataStats& stats,
                                         int num_nets, int num_points, std::uint64_t seed) {
    const double bound = feature_radius_bound(spec, stats);
    CounterRng rng(seed, stream_id(kSamplingStream, 19));
    double worst = -std::numeric_limits<double>::infinity();
    for (int n = 0; n < num_nets; ++n) {
        const DenseNet net = detail::random_feasible_net(spec, stream_id(seed, 23, n));
        for (int i = 0; i < num_points; ++i) {
            const Eigen::VectorXd x = detail::random_in_ball(spec.input_dim, stats.radius, rng);
            const double measured = forward(net, x).phis.back().squaredNorm();
            worst = std::max(worst, (measured - bound) / bound);
        }
    }
    OracleResult r;
    r.name = "feature_radius";
    r.statistic = worst;
    r.threshold = 1e-12;
    r.aux = bound;
    r.samples = static_cast<long long>(num_nets) * num_points;
    r.seed = seed;
    r.passed = r.statistic <= r.threshold;
    return r;
}

// Alignment construction that meets the cap: boundary input, every column a
// cap-norm copy of the previous feature direction, relu throughout. The
// measured feature norm must sit on the bound to rounding.
inline OracleResult feature_radius_tightness(const NetworkSpec& spec, const DataStats& stats) {
    for (const auto& l : spec.hidden)
        if (l.activation.kind != ActivationKind::relu)
            throw std::invalid_argument("the tightness construction needs relu layers");
    ensure_valid(spec);
    ensure_valid(stats);
    DenseNet net;
    net.spec = spec;
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(spec.input_dim);
    phi[0] = stats.radius;
    const auto dims = spec.dims();
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        const double cap = spec.max_norm_for(static_cast<int>(k));
        const Eigen::VectorXd dir = phi / phi.norm();
        Eigen::MatrixXd w(dims[k], dims[k + 1]);
        for (Eigen::Index j = 0; j < w.cols(); ++j) w.col(j) = cap * dir;
        net.weights.push_back(w);
        if (k + 2 < dims.size()) phi = (w.transpose() * phi).cwiseMax(0.0);
    }
    const double measured = forward(net, Eigen::VectorXd::Unit(spec.input_dim, 0) * stats.radius)
                                .phis.back()
                                .squaredNorm();
    const double bound = feature_radius_bound(spec, stats);
    OracleResult r;
    r.name = "feature_radius_tightness";
    r.statistic = std::fabs(measured / bound - 1.0);
    r.threshold = 1e-9;
    r.aux = measured;
    r.samples = 1;
    r.passed = r.statistic <= r.threshold;
    return r;
}

// Masked features against the keep-probability cap, in expectation: for every
// (net, point), the Monte Carlo mean of ||masked phi_P||^2 may exceed the cap
// only within 4 sigma-hat.
inline OracleResult feature_radius_dropout_check(const NetworkSpec& spec, const DataStats& stats,
                                                 int num_nets, int num_points, long long mask_trials,
                                                 std::uint64_t seed) {
    if (mask_trials < 2) throw std::invalid_argument("need at least 2 mask trials");
    const double bound = feature_radius_bound(spec, stats, true);
    CounterRng rng(seed, stream_id(kSamplingStream, 29));
    double worst = -std::numeric_limits<double>::infinity();
    for (int n = 0; n < num_nets; ++n) {
        const DenseNet net = detail::random_feasible_net(spec, stream_id(seed, 31, n));
        for (int i = 0; i < num_points; ++i) {
            const Eigen::VectorXd x = detail::random_in_ball(spec.input_dim, stats.radius, rng);
            detail::RunningStats ms;
            for (long long t = 0; t < mask_trials; ++t) {
                CounterRng mask_rng(seed, stream_id(37, static_cast<std::uint64_t>(n * num_points + i),
                                                    static_cast<std::uint64_t>(t)));
                const MaskSample mask = sample_mask(spec, MaskPolicy::dropout, mask_rng);
                ms.add(forward_masked(net, x, mask).phis.back().squaredNorm());
            }
            const double slack = 4.0 * ms.stddev() / std::sqrt(static_cast<double>(mask_trials));
            worst = std::max(worst, (ms.mean - bound - slack) / bound);
        }
    }
    OracleResult r;
    r.name = "feature_radius_dropout";
    r.statistic = worst;
    r.threshold = 1e-12;
    r.aux = bound;
    r.samples = static_cast<long long>(num_nets) * num_points * mask_trials;
    r.seed = seed;
    r.passed = r.statistic <= r.threshold;
    return r;
}

// Perturbed feature radius. Sound form: ||phi_P(x + delta)||^2 <= (R + c)^2 *
// prod L^2 h A^2 (triangle inequality on the input norm). The tighter
// R^2 + c^2 form is measured but not asserted; aux reports its worst relative
// excess (positive means it was violated) and the note says which held.
inline OracleResult robust_radius_check(const NetworkSpec& spec, const DataStats& stats,
                                        int num_nets, int num_points, int num_dirs,
                                        std::uint64_t seed) {
    ensure_valid(spec);
    ensure_valid(stats);
    const double r_ = stats.radius;
    const double c = stats.noise_radius;
    const DataStats unit{1.0, 0.0};
    const double layer_prod = feature_radius_bound(spec, unit);
    const double sound = (r_ + c) * (r_ + c) * layer_prod;
    const double tight = (r_ * r_ + c * c) * layer_prod;
    CounterRng rng(seed, stream_id(kSamplingStream, 41));
    double worst_sound = -std::numeric_limits<double>::infinity();
    double worst_tight = -std::numeric_limits<double>::infinity();
    for (int n = 0; n < num_nets; ++n) {
        const DenseNet net = detail::random_feasible_net(spec, stream_id(seed, 43, n));
        for (int i = 0; i < num_points; ++i) {
            // Boundary points and aligned perturbations are the worst case;
            // probe them deterministically alongside the random draws.
            Eigen::VectorXd x = detail::random_in_ball(spec.input_dim, r_, rng);
            if (i == 0) x = Eigen::VectorXd::Unit(spec.input_dim, 0) * r_;
            double measured = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < num_dirs; ++k) {
                Eigen::VectorXd delta(spec.input_dim);
                if (k == 0 && x.norm() > 0.0)
                    delta = (c / x.norm()) * x;
                else {
                    for (int j = 0; j < spec.input_dim; ++j) delta[j] = rng.normal();
                    const double dn = delta.norm();
                    delta = dn == 0.0 ? Eigen::VectorXd::Zero(spec.input_dim)
                                      : Eigen::VectorXd((c / dn) * delta);
                }
                measured = std::max(measured, forward(net, x + delta).phis.back().squaredNorm());
            }
            worst_sound = std::max(worst_sound, (measured - sound) / sound);
            worst_tight = std::max(worst_tight, (measured - tight) / tight);
        }
    }
    OracleResult r;
    r.name = "robust_radius";
    r.statistic = worst_sound;
    r.threshold = 1e-12;
    r.aux = worst_tight;
    r.samples = static_cast<long long>(num_nets) * num_points * num_dirs;
    r.seed = seed;
    r.passed = r.statistic <= r.threshold;
    r.note = worst_tight <= 1e-12
                 ? "R^2+c^2 form held as well"
                 : "R^2+c^2 form exceeded by a factor of " + fmt_double(1.0 + worst_tight) +
                       "; only the (R+c)^2 form holds";
    return r;
}

struct ShatterBudget {
    int epochs = 2000;
    double lr = 0.05;
    int restarts = 5;
};

struct ShatterOutcome {
    OracleResult result;
    int realized = 0;
    int labelings = 0;
};

// Tries to realize every labeling of m random points with functional margin
// >= 1 under the spec's norm caps. Fully shattering more points than the
// capacity bound allows falsifies it; anything short of a full shatter is
// inconclusive and recorded as a pass with a note.
inline ShatterOutcome shattering_probe(const NetworkSpec& spec, const DataStats& stats, int m,
                                       const ShatterBudget& budget, std::uint64_t seed) {
    if (m < 1 || m > 12) throw std::invalid_argument("m must be in [1, 12]");
    ensure_valid(spec);
    ensure_valid(stats);
    CounterRng rng(seed, stream_id(kSamplingStream, 47));
    Dataset points;
    points.x.resize(m, spec.input_dim);
    points.y.resize(m);
    for (int i = 0; i < m; ++i)
        points.x.row(i) = detail::random_in_ball(spec.input_dim, stats.radius, rng).transpose();

    const int labelings = 1 << m;
    int realized = 0;
    for (int bits = 0; bits < labelings; ++bits) {
        for (int i = 0; i < m; ++i) points.y[i] = (bits >> i) & 1 ? 1.0 : -1.0;
        bool ok = false;
        for (int restart = 0; restart < budget.restarts && !ok; ++restart) {
            DenseNet net = init_net(spec, stream_id(seed, static_cast<std::uint64_t>(bits),
                                                    static_cast<std::uint64_t>(restart)));
            max_norm_project(net);
            std::uint64_t step = 0;
            for (int epoch = 0; epoch < budget.epochs; ++epoch) {
                double worst_margin = std::numeric_limits<double>::infinity();
                for (int i = 0; i < m; ++i)
                    worst_margin = std::min(worst_margin,
                                            points.y[i] * forward_score(net, points.x.row(i).transpose()));
                if (worst_margin >= 1.0) {
                    ok = true;
                    break;
                }
                sgd_step(net, points, budget.lr, MaskPolicy::none, seed, step++);
            }
        }
        if (ok) ++realized;
    }

    const double bound = vc_bound_mlp(spec, stats).value;
    const bool full_shatter = realized == labelings;
    ShatterOutcome outcome;
    outcome.realized = realized;
    outcome.labelings = labelings;
    OracleResult& r = outcome.result;
    r.name = "shattering_probe";
    r.statistic = full_shatter && static_cast<double>(m) > bound ? 1.0 : 0.0;
    r.threshold = 0.0;
    r.aux = bound;
    r.samples = labelings;
    r.seed = seed;
    r.passed = r.statistic <= r.threshold;
    r.note = "realized " + std::to_string(realized) + "/" + std::to_string(labelings) +
             " labelings at m = " + std::to_string(m) + ", bound " + fmt_double(bound) +
             (full_shatter ? "" : " (no full shatter exhibited: inconclusive, cannot falsify)");
    return outcome;
}

namespace detail {

// Mixed relative error with an absolute floor, the usual guard against
// dividing finite-difference noise by a near-zero derivative.
inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
    return std::fabs(analytic - numeric) / denom;
}

inline NetworkSpec probe_spec(ActivationKind kind, int depth, CounterRng& rng) {
    NetworkSpec spec;
    spec.input_dim = 3;
    spec.output_max_norm = rng.uniform(0.8, 2.0);
    for (int k = 0; k < depth; ++k) {
        LayerSpec layer;
        layer.width = 3 + static_cast<int>(rng.below(3));
        layer.activation.kind = kind;
        layer.max_norm = rng.uniform(0.8, 2.0);
        spec.hidden.push_back(layer);
    }
    return spec;
}

// Generic probe point: away from relu kinks and away from the hinge
// threshold, so central differences see a smooth function.
inline bool generic_at(const DenseNet& net, const Dataset& batch) {
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const auto trace = forward(net, batch.x.row(i).transpose());
        if (trace.hit_kink) return false;
        for (const auto& z : trace.zs)
            for (Eigen::Index j = 0; j < z.size(); ++j)
                if (std::fabs(z[j]) < 1e-3) return false;
        if (std::fabs(1.0 - batch.y[i] * trace.output) < 1e-3) return false;
    }
    return true;
}

}  // namespace detail

// Central-difference validation (h = 1e-5) of the analytic derivatives:
// output gradient in x, hinge subgradient in the weights, and the penalized
// objective's weight gradient, across smooth (tanh) nets and relu nets at
// generic points. statistic = worst relative error (threshold 1e-2);
// aux = fraction of probes within 1e-4, which must reach 0.95.
inline OracleResult finite_diff_suite(int probes, std::uint64_t seed) {
    if (probes < 1) throw std::invalid_argument("need at least 1 probe");
    constexpr double h = 1e-5;
    CounterRng rng(seed, stream_id(kSamplingStream, 53));
    double worst = 0.0;
    long long within = 0;
    long long total = 0;
    const auto record = [&](double analytic, double numeric) {
        const double e = detail::rel_err(analytic, numeric);
        worst = std::max(worst, e);
        if (e <= 1e-4) ++within;
        ++total;
    };

    while (total < probes) {
        const ActivationKind kind =
            rng.bernoulli(0.5) ? ActivationKind::tanh : ActivationKind::relu;
        const int depth = 1 + static_cast<int>(rng.below(2));
        const NetworkSpec spec = detail::probe_spec(kind, depth, rng);
        DenseNet net = detail::random_feasible_net(spec, rng());
        const RobustConfig cfg = make_robust_config(rng.uniform(0.1, 1.0), spec);

        Dataset batch;
        batch.x.resize(2, spec.input_dim);
        batch.y.resize(2);
        bool generic = false;
        for (int attempt = 0; attempt < 64 && !generic; ++attempt) {
            for (Eigen::Index i = 0; i < 2; ++i) {
                batch.x.row(i) = detail::random_in_ball(spec.input_dim, 1.0, rng).transpose();
                batch.y[i] = rng.bernoulli(0.5) ? 1.0 : -1.0;
            }
            generic = detail::generic_at(net, batch);
        }
        if (!generic) continue;

        // d f / d x_j against the output jacobian
        {
            Eigen::VectorXd x = batch.x.row(0).transpose();
            const Eigen::RowVectorXd g = jacobian_output(net, x);
            const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.input_dim)));
            Eigen::VectorXd xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            record(g[j], (forward_score(net, xp) - forward_score(net, xm)) / (2.0 * h));
        }

        // d mean hinge / d W entry and d robust objective / d W entry
        const auto hinge_grads = grad_hinge(net, batch);
        const auto robust = robust_objective(net, batch, cfg);
        for (int rep = 0; rep < 2; ++rep) {
            const std::size_t k = static_cast<std::size_t>(rng.below(net.weights.size()));
            const Eigen::Index i =
                static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(net.weights[k].rows())));
            const Eigen::Index j =
                static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(net.weights[k].cols())));
            DenseNet plus = net, minus = net;
            plus.weights[k](i, j) += h;
            minus.weights[k](i, j) -= h;
            record(hinge_grads[k](i, j),
                   (empirical_hinge(plus, batch) - empirical_hinge(minus, batch)) / (2.0 * h));
            record(robust.grad[k](i, j), (robust_objective(plus, batch, cfg).value -
                                          robust_objective(minus, batch, cfg).value) /
                                             (2.0 * h));
        }
    }

    OracleResult r;
    r.name = "finite_diff";
    r.statistic = worst;
    r.threshold = 1e-2;
    r.aux = static_cast<double>(within) / static_cast<double>(total);
    r.samples = total;
    r.seed = seed;
    r.passed = r.statistic <= r.threshold && r.aux >= 0.95;
    r.note = fmt_double(r.aux * 100.0) + "% of probes within 1e-4";
    return r;
}

// Depth-0 nets are linear in the weights and the input, so central
// differences match the analytic gradient to rounding.
inline OracleResult finite_diff_linear_exact(std::uint64_t seed) {
    constexpr double h = 1e-5;
    CounterRng rng(seed, stream_id(kSamplingStream, 59));
    NetworkSpec spec;
    spec.input_dim = 4;
    spec.output_max_norm = 3.0;
    DenseNet net = detail::random_feasible_net(spec, rng());
    Dataset batch;
    batch.x.resize(3, spec.input_dim);
    batch.y.resize(3);
    for (Eigen::Index i = 0; i < 3; ++i) {
        batch.x.row(i) = detail::random_in_ball(spec.input_dim, 1.0, rng).transpose();
        batch.y[i] = rng.bernoulli(0.5) ? 1.0 : -1.0;
    }
    while (!detail::generic_at(net, batch))
        batch.x.row(0) = detail::random_in_ball(spec.input_dim, 1.0, rng).transpose();

    const auto grads = grad_hinge(net, batch);
    const Eigen::RowVectorXd g = jacobian_output(net, batch.x.row(0).transpose());
    double worst = 0.0;
    for (Eigen::Index i = 0; i < net.weights[0].rows(); ++i) {
        DenseNet plus = net, minus = net;
        plus.weights[0](i, 0) += h;
        minus.weights[0](i, 0) -= h;
        const double fd =
            (empirical_hinge(plus, batch) - empirical_hinge(minus, batch)) / (2.0 * h);
        worst = std::max(worst, std::fabs(fd - grads[0](i, 0)));
        Eigen::VectorXd xp = batch.x.row(0).transpose(), xm = xp;
        xp[i] += h;
        xm[i] -= h;
        const double fdx = (forward_score(net, xp) - forward_score(net, xm)) / (2.0 * h);
        worst = std::max(worst, std::fabs(fdx - g[i]));
    }
    OracleResult r;
    r.name = "finite_diff_linear_exact";
    r.statistic = worst;
    r.threshold = 1e-10;
    r.samples = 2 * net.weights[0].rows();
    r.seed = seed;
    r.passed = r.statistic <= r.threshold;
    return r;
}

// gamma_cert <= gamma_ip_upper + tol on every correctly classified sample.
// statistic is the worst signed violation in input-space units.
inline OracleResult margin_inequality_check(const DenseNet& net, const Dataset& data,
                                            const DataStats& stats, const RobustConfig& cfg,
                                            std::uint64_t seed) {
    const double tol = cfg.bisection_tol > 0.0 ? cfg.bisection_tol : 1e-6 * stats.radius;
    double worst = -std::numeric_limits<double>::infinity();
    long long checked = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const Eigen::VectorXd x = data.x.row(i).transpose();
        if (data.y[i] * forward_score(net, x) <= 0.0) continue;
        const auto cert =
            input_margin_certificate(net, x, stats, cfg, stream_id(seed, static_cast<std::uint64_t>(i)));
        ++checked;
        if (!cert.upper.found) continue;  // certificate <= infinity trivially
        worst = std::max(worst, cert.certificate - (cert.upper.distance + tol));
    }
    OracleResult r;
    r.name = "margin_inequality";
    r.statistic = checked > 0 && std::isfinite(worst) ? worst : 0.0;
    r.threshold = 1e-12 * stats.radius;
    r.samples = checked;
    r.seed = seed;
    r.passed = r.statistic <= r.threshold;
    r.note = std::to_string(checked) + " correctly classified samples";
    return r;
}

struct BruteForceMargin {
    double distance = std::numeric_limits<double>::infinity();
    bool found = false;
    double resolution = 0.0;
};

// Ground-truth input margin for 2-d inputs: dense grid over the box of
// half-width 4R around x, nearest point where the score changes sign (or
// vanishes). Resolution is the cell diagonal.
inline BruteForceMargin brute_force_input_margin(const DenseNet& net, const Eigen::VectorXd& x,
                                                 const DataStats& stats, int grid_n = 2001) {
    if (net.spec.input_dim != 2)
        throw std::invalid_argument("the brute-force margin search is 2-d only");
    if (grid_n < 2) throw std::invalid_argument("grid_n must be >= 2");
    const double f0 = forward_score(net, x);
    BruteForceMargin out;
    const double half = 4.0 * stats.radius;
    const double step = 2.0 * half / (grid_n - 1);
    out.resolution = step * std::sqrt(2.0);
    if (f0 == 0.0) {
        out.distance = 0.0;
        out.found = true;
        return out;
    }
    Eigen::VectorXd z(2);
    for (int gi = 0; gi < grid_n; ++gi) {
        z[0] = x[0] - half + step * gi;
        for (int gj = 0; gj < grid_n; ++gj) {
            z[1] = x[1] - half + step * gj;
            if (f0 * forward_score(net, z) <= 0.0) {
                const double d = (z - x).norm();
                if (d < out.distance) {
                    out.distance = d;
                    out.found = true;
                }
            }
        }
    }
    return out;
}

// ---- suite ------------------------------------------------------------

struct OracleSuiteOptions {
    std::uint64_t seed = 0;
    std::string only;         // substring filter on oracle names; empty runs all
    double trial_scale = 1.0; // scales Monte Carlo sample counts
};

namespace detail {

inline NetworkSpec suite_mlp_spec() {
    NetworkSpec spec;
    spec.input_dim = 2;
    LayerSpec layer;
    layer.width = 2;
    layer.activation.kind = ActivationKind::relu;
    layer.max_norm = 1.0;
    spec.hidden = {layer, layer};
    spec.output_max_norm = 1.0;
    return spec;
}

inline long long scaled(long long base, double scale) {
    const long long v = static_cast<long long>(static_cast<double>(base) * scale);
    return std::max<long long>(v, 16);
}

}  // namespace detail

inline std::vector<OracleResult> run_oracle_suite(const OracleSuiteOptions& options = {}) {
    std::vector<OracleResult> results;
    const auto wanted = [&](const std::string& name) {
        return options.only.empty() || name.find(options.only) != std::string::npos;
    };
    const auto add = [&](OracleResult r) {
        if (wanted(r.name)) results.push_back(std::move(r));
    };
    const std::uint64_t seed = options.seed;
    const double scale = options.trial_scale;

    for (ActivationKind kind : {ActivationKind::relu, ActivationKind::leaky_relu,
                                ActivationKind::tanh, ActivationKind::sigmoid})
        add(lipschitz_check(Activation{kind}, detail::scaled(10000, scale), seed));
    {
        // A too-small constant must be refuted: pass means a counterexample
        // was found.
        OracleResult wrong =
            lipschitz_check(Activation{ActivationKind::sigmoid}, detail::scaled(10000, scale),
                            seed, 0.2);
        OracleResult r;
        r.name = "lipschitz_sigmoid_refutation";
        r.statistic = wrong.passed ? 1.0 : 0.0;
        r.threshold = 0.0;
        r.aux = wrong.statistic;
        r.samples = wrong.samples;
        r.seed = seed;
        r.passed = r.statistic <= r.threshold;
        r.note = r.passed ? "counterexample found near the origin, as it must be"
                          : "no counterexample found for L = 0.2";
        add(r);
    }

    if (wanted("mask_second_moment")) {
        // 20 (v, p) cases folded into one row: statistic is the worst
        // |estimate - analytic| / (4 sigma-hat / sqrt(N)) ratio.
        CounterRng rng(seed, stream_id(kSamplingStream, 61));
        double worst_ratio = 0.0;
        long long total = 0;
        const long long trials = detail::scaled(100000, scale);
        for (int case_i = 0; case_i < 20; ++case_i) {
            const int dim = 1 + static_cast<int>(rng.below(8));
            Eigen::VectorXd v(dim);
            for (int j = 0; j < dim; ++j) v[j] = rng.uniform(-2.0, 2.0);
            const double p = case_i % 5 == 0 ? 1.0 : rng.uniform(0.2, 0.95);
            const auto c = mc_masked_norm(v, p, trials, stream_id(seed, 67, case_i));
            total += c.samples;
            const double ratio = c.threshold > 0.0 ? c.statistic / c.threshold
                                                   : (c.statistic == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
            worst_ratio = std::max(worst_ratio, ratio);
        }
        OracleResult r;
        r.name = "mask_second_moment";
        r.statistic = worst_ratio;
        r.threshold = 1.0;
        r.samples = total;
        r.seed = seed;
        r.passed = r.statistic <= r.threshold;
        r.note = "20 (v, p) cases, statistic normalized to each case's 4 sigma band";
        add(r);
    }

    add(label_orthogonality(8, detail::scaled(100000, scale), seed));
    add(label_orthogonality_enumerated());

    {
        const NetworkSpec spec = detail::suite_mlp_spec();
        const DataStats stats{1.0, 0.0};
        add(feature_radius_check(spec, stats, static_cast<int>(detail::scaled(200, scale) / 4), 64,
                                 seed));
        add(feature_radius_tightness(spec, stats));
        NetworkSpec dropped = spec;
        dropped.input_keep_prob = 0.5;
        for (auto& l : dropped.hidden) l.keep_prob = 0.5;
        add(feature_radius_dropout_check(dropped, stats,
                                         static_cast<int>(detail::scaled(40, scale) / 4), 8,
                                         detail::scaled(2000, scale), seed));
        add(robust_radius_check(spec, DataStats{1.0, 1.0}, 16, 16, 16, seed));
    }
    {
        // Depth-0 aligned hand case: x = R e1, delta = c e1 drives the
        // measured radius to (R + c)^2, past the tighter form at c = R.
        NetworkSpec linear;
        linear.input_dim = 2;
        linear.output_max_norm = 1.0;
        OracleResult r = robust_radius_check(linear, DataStats{1.0, 1.0}, 4, 8, 8, seed);
        r.name = "robust_radius_aligned";
        add(r);
    }

    if (wanted("shattering")) {
        const ShatterBudget budget;
        NetworkSpec linear;
        linear.input_dim = 2;
        linear.output_max_norm = 10.0;
        NetworkSpec one_hidden;
        one_hidden.input_dim = 2;
        LayerSpec layer;
        layer.width = 4;
        layer.max_norm = 2.0;
        one_hidden.hidden = {layer};
        one_hidden.output_max_norm = 5.0;
        NetworkSpec tiny;
        tiny.input_dim = 2;
        tiny.output_max_norm = 0.5;  // capacity product 0.25 < 1
        const DataStats stats{1.0, 0.0};
        for (int m : {1, 2, 3}) {
            auto lin = shattering_probe(linear, stats, m, budget, stream_id(seed, 71, m));
            lin.result.name = "shattering_linear_m" + std::to_string(m);
            add(lin.result);
            auto hid = shattering_probe(one_hidden, stats, m, budget, stream_id(seed, 73, m));
            hid.result.name = "shattering_hidden_m" + std::to_string(m);
            add(hid.result);
        }
        auto below = shattering_probe(tiny, stats, 1, budget, stream_id(seed, 79));
        below.result.name = "shattering_capacity_below_one";
        // Here even one point must resist: the score is capped below 1.
        below.result.passed = below.result.passed && below.realized == 0;
        below.result.statistic = static_cast<double>(below.realized);
        below.result.note = "realized " + std::to_string(below.realized) +
                            "/2 labelings with margin 1 under a capacity product of 0.25";
        add(below.result);
    }

    add(finite_diff_suite(static_cast<int>(detail::scaled(500, scale)), seed));
    add(finite_diff_linear_exact(seed));

    if (wanted("margin_inequality")) {
        // Hand-built two-region relu net plus its dataset.
        NetworkSpec spec;
        spec.input_dim = 2;
        LayerSpec layer;
        layer.width = 2;
        layer.max_norm = 2.0;
        spec.hidden = {layer};
        spec.output_max_norm = 2.0;
        DenseNet net;
        net.spec = spec;
        net.weights = {Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd(2, 1)};
        net.weights[1] << 1.0, -1.0;
        Dataset data;
        data.x.resize(4, 2);
        data.x << 1.0, -1.0, 0.5, -0.25, 2.0, 0.5, -0.5, 1.0;
        data.y.resize(4);
        data.y << 1.0, 1.0, 1.0, -1.0;
        const DataStats stats{2.5, 0.0};
        add(margin_inequality_check(net, data, stats, make_robust_config(0.0, spec), seed));
    }

    return results;
}

}
