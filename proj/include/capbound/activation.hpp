#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace capbound {

enum class ActivationKind { relu, leaky_relu, tanh, sigmoid };

// Scalar activation together with the constants the capacity bounds consume:
// the Lipschitz constant sup|sigma'| and whether sigma(0) == 0. The latter is
// what lets ||sigma(z)|| <= L ||z|| stand in for the two-point contraction.
struct Activation {
    ActivationKind kind = ActivationKind::relu;
    double slope = 0.01;  // leaky_relu only

    double operator()(double z) const {
        switch (kind) {
            case ActivationKind::relu: return z > 0.0 ? z : 0.0;
            case ActivationKind::leaky_relu: return z > 0.0 ? z : slope * z;
            case ActivationKind::tanh: return std::tanh(z);
            case ActivationKind::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        }
        return 0.0;
    }

    // Kink convention: relu uses the 0 branch at z == 0, leaky_relu the slope
    // branch. Both are valid subderivatives; callers that care test at_kink.
    double derivative(double z) const {
        switch (kind) {
            case ActivationKind::relu: return z > 0.0 ? 1.0 : 0.0;
            case ActivationKind::leaky_relu: return z > 0.0 ? 1.0 : slope;
            case ActivationKind::tanh: {
                const double t = std::tanh(z);
                return 1.0 - t * t;
            }
            case ActivationKind::sigmoid: {
                const double s = (*this)(z);
                return s * (1.0 - s);
            }
        }
        return 0.0;
    }

    double second_derivative(double z) const {
        switch (kind) {
            case ActivationKind::relu:
            case ActivationKind::leaky_relu: return 0.0;
            case ActivationKind::tanh: {
                const double t = std::tanh(z);
                return -2.0 * t * (1.0 - t * t);
            }
            case ActivationKind::sigmoid: {
                const double s = (*this)(z);
                return s * (1.0 - s) * (1.0 - 2.0 * s);
            }
        }
        return 0.0;
    }

    double lipschitz() const {
        switch (kind) {
            case ActivationKind::relu: return 1.0;
            case ActivationKind::leaky_relu: return slope > 1.0 ? slope : 1.0;
            case ActivationKind::tanh: return 1.0;
            case ActivationKind::sigmoid: return 0.25;
        }
        return 1.0;
    }

    bool passes_through_origin() const { return kind != ActivationKind::sigmoid; }

    bool at_kink(double z) const {
        return (kind == ActivationKind::relu || kind == ActivationKind::leaky_relu) && z == 0.0;
    }
};

inline const char* to_string(ActivationKind kind) {
    switch (kind) {
        case ActivationKind::relu: return "relu";
        case ActivationKind::leaky_relu: return "leaky_relu";
        case ActivationKind::tanh: return "tanh";
        case ActivationKind::sigmoid: return "sigmoid";
    }
    return "relu";
}

inline ActivationKind parse_activation_kind(const std::string& name) {
    if (name == "relu") return ActivationKind::relu;
    if (name == "leaky_relu") return ActivationKind::leaky_relu;
    if (name == "tanh") return ActivationKind::tanh;
    if (name == "sigmoid") return ActivationKind::sigmoid;
    throw std::invalid_argument("unknown activation '" + name +
                                "' (expected relu, leaky_relu, tanh, or sigmoid)");
}

}
