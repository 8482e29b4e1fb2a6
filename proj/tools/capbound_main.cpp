// capbound: capacity bounds, margin reports, training, and self-verification
// for small feed-forward nets under max-norm weight caps.

#include <CLI11.hpp>

#include <capbound/capbound.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace capbound;

// Exit codes: 0 success, 1 computation failure, 2 configuration failure.
constexpr int kOk = 0;
constexpr int kComputationError = 1;
constexpr int kConfigError = 2;

struct ConfigFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty())
        std::cout << text;
    else
        write_text_file(out_path, text);
}

// Re-throws parse errors with the offending file's path prepended.
template <typename F>
auto with_path(const std::string& path, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigFailure(path + ": " + e.what());
    }
}

std::optional<std::uint64_t> env_seed_override() {
    const char* raw = std::getenv("CAPBOUND_SEED");
    if (raw == nullptr) return std::nullopt;
    try {
        return static_cast<std::uint64_t>(parse_int(raw));
    } catch (const std::exception&) {
        throw ConfigFailure(std::string("CAPBOUND_SEED is not an integer: '") + raw + "'");
    }
}

// All hidden layers share a width and an activation: the fixed-width bound
// applies on top of the general one.
bool uniform_hidden(const NetworkSpec& spec) {
    if (spec.hidden.empty()) return false;
    for (const auto& layer : spec.hidden)
        if (layer.width != spec.hidden.front().width ||
            !same_activation(layer.activation, spec.hidden.front().activation))
            return false;
    return true;
}

struct BoundArgs {
    std::string spec_path;
    std::string out_path;
    std::string format = "json";
    double radius = -1.0;  // <0 keeps the value declared in the spec document
    double robust_c = -1.0;
};

int run_bound(const BoundArgs& args) {
    const std::string text = read_text_file(args.spec_path);
    DataStats stats = with_path(args.spec_path, [&] { return parse_data_stats(text); });
    if (args.radius >= 0.0) stats.radius = args.radius;
    if (args.robust_c >= 0.0) stats.noise_radius = args.robust_c;
    ensure_valid(stats);

    std::vector<BoundReport> reports;
    ReportMeta meta;
    if (with_path(args.spec_path, [&] { return spec_document_type(text); }) == "resnet") {
        if (args.robust_c >= 0.0)
            throw ConfigFailure(args.spec_path +
                                ": --robust applies to feed-forward specs only");
        const ResNetSpec spec = with_path(args.spec_path, [&] { return parse_resnet_spec(text); });
        ensure_valid(spec);
        meta.spec_hash = to_hex(fnv1a64(serialize(spec)));
        reports.push_back(vc_bound_resnet(spec, stats));
    } else {
        const NetworkSpec spec =
            with_path(args.spec_path, [&] { return parse_network_spec(text); });
        ensure_valid(spec);
        meta.spec_hash = to_hex(fnv1a64(serialize(spec)));
        reports.push_back(vc_bound_mlp(spec, stats));
        if (uniform_hidden(spec)) {
            std::vector<double> caps;
            for (std::size_t k = 0; k <= spec.hidden.size(); ++k)
                caps.push_back(spec.max_norm_for(k));
            reports.push_back(vc_bound_fixed_width(static_cast<int>(spec.hidden.size()),
                                                   spec.hidden.front().width, caps,
                                                   spec.hidden.front().activation.lipschitz(),
                                                   stats));
        }
        reports.push_back(vc_bound_dropout(spec, stats));
        reports.push_back(vc_bound_dropconnect(spec, stats));
        if (args.robust_c >= 0.0) reports.push_back(vc_bound_robust(spec, stats));
    }
    emit(render_bound_reports(reports, meta, parse_report_format(args.format)), args.out_path);
    return kOk;
}

struct TrainArgs {
    std::string spec_path;
    std::string data_path;
    std::string model_out = "model.json";
    std::string history_out = "history.csv";
    TrainSchedule schedule;
    std::string objective = "hinge";
    std::string mask = "none";
    double robust_c = 0.0;
};

int run_train(const TrainArgs& args) {
    const std::string text = read_text_file(args.spec_path);
    const NetworkSpec spec = with_path(args.spec_path, [&] { return parse_network_spec(text); });
    ensure_valid(spec);
    const Dataset data = load_dataset(args.data_path);
    if (data.x.cols() != spec.input_dim)
        throw ConfigFailure(args.data_path + ": dataset has " + std::to_string(data.x.cols()) +
                            " features, spec declares input_dim " +
                            std::to_string(spec.input_dim));

    DataStats stats = with_path(args.spec_path, [&] { return parse_data_stats(text); });
    const double measured = data_radius(data);
    if (measured > stats.radius * (1.0 + 1e-12)) {
        std::cerr << "warning: dataset radius " << fmt_double(measured)
                  << " exceeds the declared radius " << fmt_double(stats.radius)
                  << "; using the measured radius\n";
        stats.radius = measured;
    }

    Objective objective;
    if (args.objective == "hinge")
        objective = Objective::hinge;
    else if (args.objective == "robust")
        objective = Objective::robust;
    else
        throw ConfigFailure("unknown objective '" + args.objective + "'");

    MaskPolicy policy;
    if (args.mask == "none")
        policy = MaskPolicy::none;
    else if (args.mask == "dropout")
        policy = MaskPolicy::dropout;
    else if (args.mask == "dropconnect")
        policy = MaskPolicy::dropconnect;
    else
        throw ConfigFailure("unknown mask policy '" + args.mask + "'");

    const DenseNet start = init_net(spec, args.schedule.seed);
    TrainResult result;
    if (objective == Objective::robust) {
        const RobustConfig cfg = make_robust_config(args.robust_c, spec);
        result = train(start, data, args.schedule, objective, policy, &cfg, &stats);
    } else {
        result = train(start, data, args.schedule, objective, policy, nullptr, &stats);
    }

    save_model(args.model_out, result.net);
    write_text_file(args.history_out,
                    serialize_history_csv(result.history, objective == Objective::robust));
    if (result.diverged) {
        std::cerr << "training diverged: " << result.diagnostic
                  << " (last finite checkpoint written)\n";
        return kComputationError;
    }
    if (!result.history.empty()) {
        const auto& last = result.history.back();
        std::cerr << "final epoch " << last.epoch << ": hinge " << fmt_double(last.hinge)
                  << ", zero_one " << fmt_double(last.zero_one) << "\n";
    }
    return kOk;
}

struct MarginArgs {
    std::string model_path;
    std::string data_path;
    std::string out_path;
    std::string format = "json";
    double tol = 0.0;
    int ball_samples = 256;
    double radius = -1.0;  // <0 measures from the dataset
    std::uint64_t seed = 0;
};

int run_margins(const MarginArgs& args) {
    const DenseNet net = load_model(args.model_path);
    const Dataset data = load_dataset(args.data_path);
    if (data.x.cols() != net.spec.input_dim)
        throw ConfigFailure(args.data_path + ": dataset has " + std::to_string(data.x.cols()) +
                            " features, model expects " + std::to_string(net.spec.input_dim));
    DataStats stats;
    stats.radius = args.radius >= 0.0 ? args.radius : data_radius(data);
    if (stats.radius <= 0.0) stats.radius = 1.0;
    const RobustConfig cfg = make_robust_config(0.0, net.spec, args.ball_samples, args.tol);
    const MarginReport report = margin_report(net, data, stats, cfg, args.seed);
    ReportMeta meta;
    meta.spec_hash = to_hex(fnv1a64(serialize(net.spec)));
    meta.seed = args.seed;
    emit(render_margin_report(report, cfg.ball_samples, meta, parse_report_format(args.format)),
         args.out_path);
    return kOk;
}

struct VerifyArgs {
    std::string spec_path;
    std::string out_path;
    std::string format = "json";
    OracleSuiteOptions options;
    long long trials = 10000;
};

int run_verify(const VerifyArgs& args) {
    OracleSuiteOptions options = args.options;
    options.trial_scale = static_cast<double>(args.trials) / 10000.0;
    if (options.trial_scale <= 0.0) throw ConfigFailure("--trials must be positive");

    ReportMeta meta;
    meta.seed = options.seed;
    meta.spec_hash = "builtin";
    std::vector<OracleResult> results = run_oracle_suite(options);

    if (!args.spec_path.empty()) {
        const std::string text = read_text_file(args.spec_path);
        if (with_path(args.spec_path, [&] { return spec_document_type(text); }) != "mlp")
            throw ConfigFailure(args.spec_path + ": verification oracles need an mlp spec");
        const NetworkSpec spec =
            with_path(args.spec_path, [&] { return parse_network_spec(text); });
        ensure_valid(spec);
        DataStats stats = with_path(args.spec_path, [&] { return parse_data_stats(text); });
        meta.spec_hash = to_hex(fnv1a64(serialize(spec)));
        const auto wanted = [&](const std::string& name) {
            return options.only.empty() || name.find(options.only) != std::string::npos;
        };
        OracleResult fr = feature_radius_check(spec, stats, 50, 64, options.seed);
        fr.name = "feature_radius_user_spec";
        if (wanted(fr.name)) results.push_back(fr);
        stats.noise_radius = std::max(stats.noise_radius, 0.5 * stats.radius);
        OracleResult rr = robust_radius_check(spec, stats, 8, 16, 16, options.seed);
        rr.name = "robust_radius_user_spec";
        if (wanted(rr.name)) results.push_back(rr);
    }

    emit(render_oracle_results(results, meta, parse_report_format(args.format)), args.out_path);
    bool all_passed = !results.empty();
    for (const auto& r : results) all_passed = all_passed && r.passed;
    for (const auto& r : results)
        if (!r.passed)
            std::cerr << "oracle failed: " << r.name << " (statistic " << fmt_double(r.statistic)
                      << " vs threshold " << fmt_double(r.threshold) << ")\n";
    if (results.empty()) std::cerr << "no oracle matched the --only filter\n";
    return all_passed ? kOk : kComputationError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Capacity bounds and margin verification for capped feed-forward nets"};
    app.require_subcommand(1);

    BoundArgs bound_args;
    auto* bound = app.add_subcommand("bound", "Evaluate capacity bounds for a declared spec");
    bound->add_option("--spec", bound_args.spec_path, "Spec document")->required();
    bound->add_option("--radius", bound_args.radius, "Override the data radius R");
    bound->add_option("--robust", bound_args.robust_c,
                      "Perturbation radius c; adds the robust bound");
    bound->add_option("--out", bound_args.out_path, "Output file (default stdout)");
    bound->add_option("--format", bound_args.format, "json, markdown, or csv");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train a net under the spec's caps");
    train_cmd->add_option("--spec", train_args.spec_path, "Spec document")->required();
    train_cmd->add_option("--data", train_args.data_path, "Dataset CSV")->required();
    train_cmd->add_option("--epochs", train_args.schedule.epochs, "Training epochs");
    train_cmd->add_option("--lr", train_args.schedule.lr, "Learning rate");
    train_cmd->add_option("--batch", train_args.schedule.batch_size, "Batch size");
    train_cmd->add_option("--seed", train_args.schedule.seed, "RNG seed");
    train_cmd->add_option("--objective", train_args.objective, "hinge or robust");
    train_cmd->add_option("--c", train_args.robust_c, "Perturbation radius for robust");
    train_cmd->add_option("--mask", train_args.mask, "none, dropout, or dropconnect");
    train_cmd->add_option("--model-out", train_args.model_out, "Model JSON path");
    train_cmd->add_option("--history-out", train_args.history_out, "History CSV path");

    MarginArgs margin_args;
    auto* margins = app.add_subcommand("margins", "Margin report for a trained model");
    margins->add_option("--model", margin_args.model_path, "Model JSON")->required();
    margins->add_option("--data", margin_args.data_path, "Dataset CSV")->required();
    margins->add_option("--tol", margin_args.tol, "Bisection tolerance (0 picks 1e-6 R)");
    margins->add_option("--ball-samples", margin_args.ball_samples,
                        "Jacobian samples for the certificate");
    margins->add_option("--radius", margin_args.radius, "Data radius (default: measured)");
    margins->add_option("--seed", margin_args.seed, "RNG seed");
    margins->add_option("--out", margin_args.out_path, "Output file (default stdout)");
    margins->add_option("--format", margin_args.format, "json, markdown, or csv");

    VerifyArgs verify_args;
    auto* verify = app.add_subcommand("verify", "Run the verification oracle suite");
    verify->add_option("--spec", verify_args.spec_path,
                       "Optional spec; adds spec-specific oracle rows");
    verify->add_option("--trials", verify_args.trials,
                       "Monte Carlo trials per oracle (base 10000)");
    verify->add_option("--seed", verify_args.options.seed, "RNG seed");
    verify->add_option("--only", verify_args.options.only, "Substring filter on oracle names");
    verify->add_option("--out", verify_args.out_path, "Output file (default stdout)");
    verify->add_option("--format", verify_args.format, "json, markdown, or csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (const auto seed = env_seed_override()) {
            train_args.schedule.seed = *seed;
            margin_args.seed = *seed;
            verify_args.options.seed = *seed;
        }
        if (bound->parsed()) return run_bound(bound_args);
        if (train_cmd->parsed()) return run_train(train_args);
        if (margins->parsed()) return run_margins(margin_args);
        if (verify->parsed()) return run_verify(verify_args);
        std::cerr << "no subcommand\n";
        return kConfigError;
    } catch (const ConfigFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kComputationError;
    }
}
