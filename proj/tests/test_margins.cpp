#include <catch2/catch_amalgamated.hpp>

#include <capbound/io.hpp>
#include <capbound/margins.hpp>

#include <cmath>

using namespace capbound;

namespace {

DenseNet linear_net(std::initializer_list<double> w, double cap = 10.0) {
    DenseNet net;
    net.spec.input_dim = static_cast<int>(w.size());
    net.spec.output_max_norm = cap;
    net.weights = {Eigen::MatrixXd(net.spec.input_dim, 1)};
    Eigen::Index i = 0;
    for (double v : w) net.weights[0](i++, 0) = v;
    return net;
}

NetworkSpec tanh_spec(int d, int width, double cap) {
    NetworkSpec spec;
    spec.input_dim = d;
    LayerSpec layer;
    layer.width = width;
    layer.activation.kind = ActivationKind::tanh;
    layer.max_norm = cap;
    spec.hidden = {layer};
    spec.output_max_norm = cap;
    return spec;
}

Dataset dataset_from(std::initializer_list<std::initializer_list<double>> xs,
                     std::initializer_list<double> ys) {
    Dataset data;
    data.x.resize(static_cast<Eigen::Index>(xs.size()),
                  static_cast<Eigen::Index>(xs.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : xs) {
        Eigen::Index j = 0;
        for (double v : row) data.x(i, j++) = v;
        ++i;
    }
    data.y.resize(static_cast<Eigen::Index>(ys.size()));
    i = 0;
    for (double v : ys) data.y[i++] = v;
    return data;
}

}  // namespace

TEST_CASE("output margin is the score over the output norm", "[margins]") {
    const DenseNet net = linear_net({3.0, 4.0});
    Eigen::VectorXd x(2);
    x << 1.0, 0.0;
    CHECK(output_margin(net, x) == Catch::Approx(0.6));  // |3| / 5
    x << 0.0, 1.0;
    CHECK(output_margin(net, x) == Catch::Approx(0.8));
}

TEST_CASE("input margin of a linear separator is the scaled score", "[margins]") {
    // w = (1, 0): distance from (0.5, 7) to the boundary x1 = 0 is 0.5
    const DenseNet net = linear_net({1.0, 0.0});
    Eigen::VectorXd x(2);
    x << 0.5, 7.0;
    const auto m = input_margin_upper(net, x, 1e-9, 40.0);
    REQUIRE(m.found);
    CHECK(m.distance == Catch::Approx(0.5).margin(1e-8));
}

TEST_CASE("input margin reports not-found when no flip is reachable", "[margins]") {
    // a relu pair keeps the score positive on the whole search segment
    DenseNet net;
    net.spec = tanh_spec(2, 2, 10.0);
    net.spec.hidden[0].activation.kind = ActivationKind::relu;
    net.weights = {Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd(2, 1)};
    net.weights[1] << 1.0, 1.0;  // f >= 0 everywhere, zero set has empty interior
    Eigen::VectorXd x(2);
    x << 1.0, 1.0;
    const auto m = input_margin_upper(net, x, 1e-6, 4.0);
    // the gradient direction crosses f = 0 only at the orthant boundary;
    // either a genuine crossing is found or infinity is reported
    if (m.found) CHECK(m.distance <= 4.0);
    const auto far = input_margin_upper(linear_net({1.0, 0.0}), x, 1e-6, 0.5);
    CHECK_FALSE(far.found);  // search radius too small to reach x1 = 0
    CHECK(std::isinf(far.distance));
}

TEST_CASE("a point on the boundary has zero margin", "[margins]") {
    const DenseNet net = linear_net({1.0, 0.0});
    Eigen::VectorXd x(2);
    x << 0.0, 1.0;
    const auto m = input_margin_upper(net, x, 1e-9, 4.0);
    REQUIRE(m.found);
    CHECK(m.distance == 0.0);
}

TEST_CASE("certificate equals the upper bound for linear models", "[margins]") {
    const DenseNet net = linear_net({2.0, -1.0});
    const DataStats stats{3.0, 0.0};
    const RobustConfig cfg = make_robust_config(0.0, net.spec, 128, 1e-10);
    CounterRng rng(14, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd x(2);
        x << rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0);
        if (std::fabs(forward_score(net, x)) < 1e-6) continue;
        const auto cert = input_margin_certificate(net, x, stats, cfg, trial);
        REQUIRE(cert.upper.found);
        // gamma_op / sup ||J|| collapses to the exact distance: J is constant
        CHECK(cert.certificate == Catch::Approx(cert.upper.distance).margin(1e-8));
    }
}

TEST_CASE("certificate formula homogeneity", "[margins]") {
    CHECK(certificate_from(1.0, 2.0) == 0.5);
    CHECK(certificate_from(3.0, 2.0) == 3.0 * certificate_from(1.0, 2.0));
    CHECK(certificate_from(1.0, 4.0) == 0.5 * certificate_from(1.0, 2.0));
    CHECK(certificate_from(0.0, 0.0) == 0.0);
    CHECK(std::isinf(certificate_from(1.0, 0.0)));
}

TEST_CASE("certificate never exceeds the bisection upper bound", "[margins]") {
    const NetworkSpec spec = tanh_spec(2, 4, 2.0);
    const DataStats stats{1.5, 0.0};
    const RobustConfig cfg = make_robust_config(0.0, spec, 256, 0.0);
    CounterRng rng(77, 0);
    int checked = 0;
    for (int trial = 0; trial < 30; ++trial) {
        DenseNet net = init_net(spec, rng());
        for (auto& w : net.weights) w *= rng.uniform(1.0, 3.0);
        max_norm_project(net);
        Eigen::VectorXd x(2);
        x << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
        if (std::fabs(forward_score(net, x)) < 1e-4) continue;
        const auto cert = input_margin_certificate(net, x, stats, cfg, trial);
        if (!cert.upper.found) continue;
        ++checked;
        CHECK(cert.certificate <= cert.upper.distance + 1e-6 * stats.radius);
    }
    CHECK(checked > 10);
}

TEST_CASE("robust config ties the penalty weight to the budget", "[margins]") {
    NetworkSpec spec = tanh_spec(2, 3, 2.5);
    const RobustConfig cfg = make_robust_config(0.4, spec);
    CHECK(cfg.noise_radius == 0.4);
    CHECK(cfg.penalty_weight == 0.4 * 2.5);
    CHECK_THROWS_AS(make_robust_config(-1.0, spec), std::invalid_argument);
}

TEST_CASE("robust objective on a linear model has a constant penalty", "[margins]") {
    // depth 0: J is the weight row, independent of both x and the batch
    const DenseNet net = linear_net({3.0, 4.0});
    const Dataset data = dataset_from({{0.2, 0.1}, {-0.5, 0.3}}, {1.0, -1.0});
    RobustConfig cfg = make_robust_config(0.5, net.spec);
    const auto obj = robust_objective(net, data, cfg);
    // penalty_weight * ||J||_F with ||J||_F = sqrt(d) for the feature map
    CHECK(obj.penalty_term ==
          Catch::Approx(cfg.penalty_weight * std::sqrt(2.0)));
    CHECK(obj.value == Catch::Approx(obj.hinge_term + obj.penalty_term));
    // and its gradient contribution vanishes
    const auto plain = grad_hinge(net, data);
    for (std::size_t k = 0; k < plain.size(); ++k)
        CHECK((obj.grad[k] - plain[k]).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("feature jacobian norm scales with each layer cap", "[margins]") {
    // scaling every weight matrix by 1/2 scales ||J_feat||_F by (1/2)^P
    NetworkSpec spec = tanh_spec(2, 3, 5.0);
    DenseNet net = init_net(spec, 6);
    DenseNet half = net;
    for (auto& w : half.weights) w *= 0.5;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(2);  // tanh'(0) = 1 for both
    CHECK(jacobian_frobenius(half, x) ==
          Catch::Approx(0.5 * jacobian_frobenius(net, x)));
}

TEST_CASE("robust gradient matches central differences", "[margins]") {
    const NetworkSpec spec = tanh_spec(2, 3, 2.0);
    const DenseNet net = init_net(spec, 18);
    const Dataset data = dataset_from({{0.7, -0.4}, {-0.2, 0.9}, {0.1, 0.3}}, {1.0, -1.0, 1.0});
    const RobustConfig cfg = make_robust_config(0.3, spec);
    const auto obj = robust_objective(net, data, cfg);
    const double h = 1e-6;
    for (std::size_t k = 0; k < net.weights.size(); ++k)
        for (Eigen::Index i = 0; i < net.weights[k].rows(); ++i)
            for (Eigen::Index j = 0; j < net.weights[k].cols(); ++j) {
                DenseNet plus = net, minus = net;
                plus.weights[k](i, j) += h;
                minus.weights[k](i, j) -= h;
                const double fd = (robust_objective(plus, data, cfg).value -
                                   robust_objective(minus, data, cfg).value) /
                                  (2.0 * h);
                CHECK(obj.grad[k](i, j) == Catch::Approx(fd).margin(1e-5));
            }
}

TEST_CASE("zero budget makes the robust objective the hinge bitwise", "[margins]") {
    const NetworkSpec spec = tanh_spec(2, 3, 2.0);
    const DenseNet net = init_net(spec, 23);
    const Dataset data = dataset_from({{0.5, 0.2}, {-0.3, 0.8}}, {1.0, -1.0});
    const RobustConfig cfg = make_robust_config(0.0, spec);
    const auto obj = robust_objective(net, data, cfg);
    CHECK(obj.value == empirical_hinge(net, data));
    CHECK(obj.penalty_term == 0.0);
    CHECK(robust_hinge_explicit(net, data, cfg) == empirical_hinge(net, data));
}

TEST_CASE("explicit robust hinge closed form on linear models", "[margins]") {
    // max(0, 1 - y w.x + c ||w||) for each sample
    const DenseNet net = linear_net({3.0, 4.0});
    const Dataset data = dataset_from({{0.5, 0.5}, {-0.1, 0.2}}, {1.0, -1.0});
    for (double c : {0.0, 0.1, 0.5}) {
        const RobustConfig cfg = make_robust_config(c, net.spec);
        double expected = 0.0;
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            const double score = forward_score(net, data.x.row(i).transpose());
            expected += std::max(0.0, 1.0 - data.y[i] * score + c * 5.0);
        }
        expected /= static_cast<double>(data.size());
        CHECK(robust_hinge_explicit(net, data, cfg) == Catch::Approx(expected).margin(1e-10));
    }
}

TEST_CASE("robust chain of inequalities on random nets", "[margins]") {
    CounterRng rng(41, 0);
    for (int trial = 0; trial < 100; ++trial) {
        NetworkSpec spec = tanh_spec(2, 2 + static_cast<int>(rng.below(3)), 1.5);
        if (rng.bernoulli(0.5)) spec.hidden[0].activation.kind = ActivationKind::relu;
        DenseNet net = init_net(spec, rng());
        for (auto& w : net.weights) w *= rng.uniform(0.5, 2.0);
        max_norm_project(net);
        Dataset data;
        data.x.resize(4, 2);
        data.y.resize(4);
        for (Eigen::Index i = 0; i < 4; ++i) {
            data.x(i, 0) = rng.uniform(-1.0, 1.0);
            data.x(i, 1) = rng.uniform(-1.0, 1.0);
            data.y[i] = rng.bernoulli(0.5) ? 1.0 : -1.0;
        }
        const RobustConfig cfg = make_robust_config(rng.uniform(0.0, 0.5), spec);
        const double plain = empirical_hinge(net, data);
        const double explicit_form = robust_hinge_explicit(net, data, cfg);
        const double penalized = robust_objective(net, data, cfg).value;
        CHECK(explicit_form >= plain - 1e-12);
        CHECK(penalized >= explicit_form - 1e-9);
    }
}

TEST_CASE("margin report flags misclassified rows and skips their margins", "[margins]") {
    const DenseNet net = linear_net({1.0, 0.0});
    const Dataset data = dataset_from({{1.0, 0.0}, {-1.0, 0.0}, {0.5, 0.5}}, {1.0, 1.0, -1.0});
    const DataStats stats{1.5, 0.0};
    const RobustConfig cfg = make_robust_config(0.0, net.spec, 32);
    const auto report = margin_report(net, data, stats, cfg, 5);
    REQUIRE(report.rows.size() == 3);
    CHECK(report.correct_count == 1);
    CHECK(report.rows[0].correct);
    CHECK_FALSE(report.rows[1].correct);
    CHECK(report.rows[1].gamma_op == 0.0);
    CHECK(report.rows[1].gamma_cert == 0.0);
    CHECK_FALSE(report.rows[2].correct);
    CHECK(report.rows[0].gamma_op == Catch::Approx(1.0));
    CHECK(report.mean_gamma_op == Catch::Approx(1.0));
    CHECK(report.seed == 5);
}

TEST_CASE("training drives the hinge down and is deterministic", "[margins][train]") {
    const Dataset data =
        dataset_from({{1.0, 0.2}, {0.8, -0.1}, {-0.9, 0.1}, {-1.0, -0.3}}, {1.0, 1.0, -1.0, -1.0});
    NetworkSpec spec = tanh_spec(2, 4, 3.0);
    TrainSchedule schedule;
    schedule.epochs = 80;
    schedule.lr = 0.2;
    schedule.batch_size = 2;
    schedule.seed = 3;
    const DenseNet start = init_net(spec, schedule.seed);
    const auto a = train(start, data, schedule, Objective::hinge, MaskPolicy::none);
    const auto b = train(start, data, schedule, Objective::hinge, MaskPolicy::none);
    REQUIRE_FALSE(a.diverged);
    REQUIRE(a.history.size() == 80);
    DenseNet projected = start;
    max_norm_project(projected);
    CHECK(a.history.back().hinge < empirical_hinge(projected, data));
    CHECK(a.history.back().zero_one == 0.0);
    CHECK(a.net.weights[0] == b.net.weights[0]);
    for (std::size_t i = 0; i < a.history.size(); ++i)
        CHECK(a.history[i].hinge == b.history[i].hinge);
}

TEST_CASE("training with masks and the robust objective stays feasible", "[margins][train]") {
    const Dataset data =
        dataset_from({{1.0, 0.2}, {0.8, -0.1}, {-0.9, 0.1}, {-1.0, -0.3}}, {1.0, 1.0, -1.0, -1.0});
    NetworkSpec spec = tanh_spec(2, 4, 2.0);
    spec.hidden[0].keep_prob = 0.8;
    TrainSchedule schedule;
    schedule.epochs = 30;
    schedule.seed = 9;

    const auto masked =
        train(init_net(spec, 9), data, schedule, Objective::hinge, MaskPolicy::dropout);
    REQUIRE_FALSE(masked.diverged);
    for (std::size_t k = 0; k < masked.net.weights.size(); ++k)
        for (Eigen::Index t = 0; t < masked.net.weights[k].cols(); ++t)
            CHECK(masked.net.weights[k].col(t).norm() <= spec.max_norm_for(k) + 1e-12);

    const RobustConfig cfg = make_robust_config(0.2, spec);
    const auto robust =
        train(init_net(spec, 9), data, schedule, Objective::robust, MaskPolicy::none, &cfg);
    REQUIRE_FALSE(robust.diverged);
    CHECK(robust.history.back().penalty > 0.0);

    // robust training with masks is undefined and must be rejected up front
    CHECK_THROWS_AS(
        train(init_net(spec, 9), data, schedule, Objective::robust, MaskPolicy::dropout, &cfg),
        std::invalid_argument);
    CHECK_THROWS_AS(train(init_net(spec, 9), data, schedule, Objective::robust, MaskPolicy::none),
                    std::invalid_argument);
}

TEST_CASE("margin probes run on the requested cadence", "[margins][train]") {
    const Dataset data = dataset_from({{1.0, 0.0}, {-1.0, 0.0}}, {1.0, -1.0});
    NetworkSpec spec = tanh_spec(2, 2, 2.0);
    TrainSchedule schedule;
    schedule.epochs = 10;
    schedule.margin_every = 4;
    const DataStats stats{1.0, 0.0};
    const auto result = train(init_net(spec, 2), data, schedule, Objective::hinge,
                              MaskPolicy::none, nullptr, &stats);
    REQUIRE(result.margin_probes.size() == 2);
    CHECK(result.margin_probes[0].epoch == 4);
    CHECK(result.margin_probes[1].epoch == 8);
    CHECK_THROWS_AS(
        train(init_net(spec, 2), data, schedule, Objective::hinge, MaskPolicy::none, nullptr,
              nullptr),
        std::invalid_argument);
}

TEST_CASE("divergence reverts to the last finite checkpoint", "[margins][train]") {
    // a start that misclassifies huge coordinates plus a huge step overflows
    // the first update to inf; the projection then yields nan and the epoch
    // metric catches it
    const Dataset data = dataset_from({{1e200, 0.0}, {-1e200, 0.0}}, {1.0, -1.0});
    NetworkSpec spec;
    spec.input_dim = 2;
    spec.output_max_norm = 1.0;
    DenseNet start;
    start.spec = spec;
    start.weights = {Eigen::MatrixXd(2, 1)};
    start.weights[0] << -0.5, 0.0;
    TrainSchedule schedule;
    schedule.epochs = 60;
    schedule.lr = 1e200;
    const auto result = train(start, data, schedule, Objective::hinge, MaskPolicy::none);
    CHECK(result.diverged);
    CHECK_FALSE(result.diagnostic.empty());
    CHECK(result.net.weights[0].allFinite());
    CHECK(result.history.size() < 60);
}

TEST_CASE("the bundled two-moons set trains to low risk", "[margins][train]") {
    const Dataset data = load_dataset(std::string(CAPBOUND_DATA_DIR) + "/two_moons.csv");
    REQUIRE(data.size() == 200);
    const std::string text =
        read_text_file(std::string(CAPBOUND_DATA_DIR) + "/moons_net.spec");
    const NetworkSpec spec = parse_network_spec(text);
    CHECK(data_radius(data) <= parse_data_stats(text).radius);

    TrainSchedule schedule;
    schedule.epochs = 200;
    schedule.lr = 0.1;
    schedule.batch_size = 16;
    schedule.seed = 1;
    const auto result =
        train(init_net(spec, schedule.seed), data, schedule, Objective::hinge, MaskPolicy::none);
    REQUIRE_FALSE(result.diverged);
    CHECK(result.history.back().zero_one <= 0.1);
}
