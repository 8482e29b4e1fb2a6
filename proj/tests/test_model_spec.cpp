#include <catch2/catch_amalgamated.hpp>

#include <capbound/model_spec.hpp>

using namespace capbound;

namespace {

NetworkSpec two_layer_relu() {
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

}  // namespace

TEST_CASE("activation values and slopes", "[model_spec]") {
    Activation relu{ActivationKind::relu};
    CHECK(relu(2.0) == 2.0);
    CHECK(relu(-2.0) == 0.0);
    CHECK(relu.derivative(3.0) == 1.0);
    CHECK(relu.derivative(-3.0) == 0.0);
    // the kink itself reports a zero derivative and is flagged
    CHECK(relu.derivative(0.0) == 0.0);
    CHECK(relu.at_kink(0.0));
    CHECK_FALSE(relu.at_kink(0.5));

    Activation leaky{ActivationKind::leaky_relu, 0.1};
    CHECK(leaky(-2.0) == -0.2);
    CHECK(leaky.derivative(-2.0) == 0.1);
    CHECK(leaky.lipschitz() == 1.0);

    Activation steep_leaky{ActivationKind::leaky_relu, 3.0};
    CHECK(steep_leaky.lipschitz() == 3.0);

    Activation th{ActivationKind::tanh};
    CHECK(th(0.0) == 0.0);
    CHECK(th.derivative(0.0) == 1.0);
    CHECK(th.lipschitz() == 1.0);

    Activation sig{ActivationKind::sigmoid};
    CHECK(sig(0.0) == 0.5);
    CHECK(sig.derivative(0.0) == 0.25);
    CHECK(sig.lipschitz() == 0.25);
}

TEST_CASE("origin passing distinguishes sigmoid", "[model_spec]") {
    CHECK(Activation{ActivationKind::relu}.passes_through_origin());
    CHECK(Activation{ActivationKind::leaky_relu}.passes_through_origin());
    CHECK(Activation{ActivationKind::tanh}.passes_through_origin());
    CHECK_FALSE(Activation{ActivationKind::sigmoid}.passes_through_origin());
}

TEST_CASE("activation names round trip", "[model_spec]") {
    for (auto kind : {ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::tanh,
                      ActivationKind::sigmoid})
        CHECK(parse_activation_kind(to_string(kind)) == kind);
    CHECK_THROWS_AS(parse_activation_kind("softplus"), std::invalid_argument);
}

TEST_CASE("network spec dims and per-matrix caps", "[model_spec]") {
    NetworkSpec spec = two_layer_relu();
    spec.hidden[0].width = 3;
    spec.hidden[1].max_norm = 2.5;
    spec.output_max_norm = 0.5;
    CHECK(spec.depth() == 2);
    const auto dims = spec.dims();
    REQUIRE(dims.size() == 4);
    CHECK(dims[0] == 2);
    CHECK(dims[1] == 3);
    CHECK(dims[2] == 2);
    CHECK(dims[3] == 1);
    // weights[k] feeds layer k+1; its cap is that layer's incoming norm bound
    CHECK(spec.max_norm_for(0) == 1.0);
    CHECK(spec.max_norm_for(1) == 2.5);
    CHECK(spec.max_norm_for(2) == 0.5);
}

TEST_CASE("dropconnect probability bookkeeping", "[model_spec]") {
    NetworkSpec spec = two_layer_relu();
    spec.input_dc_keep_prob = 0.9;
    spec.hidden[0].dc_keep_prob = 0.8;
    spec.hidden[1].dc_keep_prob = 0.7;
    // matrix k = 0 is masked by the input probability, matrix k >= 1 by the
    // probability of the hidden layer whose outputs it consumes
    CHECK(spec.dc_keep_prob_for(0) == 0.9);
    CHECK(spec.dc_keep_prob_for(1) == 0.8);
    CHECK(spec.dc_keep_prob_for(2) == 0.7);
}

TEST_CASE("validation accepts the demo spec", "[model_spec]") {
    CHECK(validate(two_layer_relu()).empty());
    CHECK_NOTHROW(ensure_valid(two_layer_relu()));
}

TEST_CASE("validation rejects bad fields with a reason each", "[model_spec]") {
    NetworkSpec spec = two_layer_relu();
    spec.input_dim = 0;
    spec.hidden[0].width = -1;
    spec.hidden[0].max_norm = 0.0;
    spec.hidden[1].keep_prob = 0.0;
    spec.output_max_norm = std::numeric_limits<double>::infinity();
    const auto errors = validate(spec);
    CHECK(errors.size() >= 5);
    CHECK_THROWS_AS(ensure_valid(spec), std::invalid_argument);
}

TEST_CASE("sigmoid hidden layers are rejected", "[model_spec]") {
    NetworkSpec spec = two_layer_relu();
    spec.hidden[1].activation.kind = ActivationKind::sigmoid;
    const auto errors = validate(spec);
    REQUIRE_FALSE(errors.empty());
    // the diagnostic explains the structural reason, not just the rule
    bool mentions_origin = false;
    for (const auto& e : errors)
        mentions_origin = mentions_origin || e.find("origin") != std::string::npos;
    CHECK(mentions_origin);
}

TEST_CASE("keep probabilities must stay in (0, 1]", "[model_spec]") {
    NetworkSpec spec = two_layer_relu();
    spec.input_keep_prob = 1.2;
    CHECK_FALSE(validate(spec).empty());
    spec.input_keep_prob = 1.0;
    spec.hidden[0].dc_keep_prob = 0.0;
    CHECK_FALSE(validate(spec).empty());
}

TEST_CASE("resnet validation", "[model_spec]") {
    ResNetSpec spec;
    spec.stem_max_norm = 1.0;
    spec.stem_filters = 2;
    spec.stem_filter_size = 1;
    ResNetBlockSpec block;
    block.units = 1;
    block.max_norm = 1.0;
    block.filters = 2;
    block.filter_size = 1;
    block.keep_prob = 0.5;
    spec.blocks = {block};
    LayerSpec tail;
    tail.width = 2;
    tail.max_norm = 1.0;
    spec.fc_tail = {tail};
    spec.output_max_norm = 1.0;
    CHECK(validate(spec).empty());

    spec.blocks[0].units = 0;
    CHECK_FALSE(validate(spec).empty());
    spec.blocks[0].units = 1;
    spec.activation.kind = ActivationKind::sigmoid;
    CHECK_FALSE(validate(spec).empty());
}

TEST_CASE("data stats validation", "[model_spec]") {
    DataStats stats;
    CHECK(validate(stats).empty());
    stats.radius = 0.0;
    CHECK_FALSE(validate(stats).empty());
    stats.radius = 1.0;
    stats.noise_radius = -0.5;
    CHECK_FALSE(validate(stats).empty());
}

TEST_CASE("output margin target is the inverse sample count", "[model_spec]") {
    CHECK(output_margin_gamma(1.0) == 1.0);
    CHECK(output_margin_gamma(5.0) == 0.2);
    CHECK(output_margin_gamma(0.5) == 2.0);
    CHECK_THROWS_AS(output_margin_gamma(0.0), std::invalid_argument);
    CHECK_THROWS_AS(output_margin_gamma(-3.0), std::invalid_argument);
}

TEST_CASE("same_activation ignores the slope unless it matters", "[model_spec]") {
    Activation a{ActivationKind::relu, 0.01};
    Activation b{ActivationKind::relu, 0.5};
    CHECK(same_activation(a, b));
    Activation c{ActivationKind::leaky_relu, 0.01};
    Activation d{ActivationKind::leaky_relu, 0.5};
    CHECK_FALSE(same_activation(c, d));
}
