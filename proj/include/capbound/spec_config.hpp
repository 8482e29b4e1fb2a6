#pragma once

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "model_spec.hpp"
#include "text_util.hpp"

namespace capbound {

// Architecture documents are flat key/value text with repeatable sections:
//
//   type = mlp
//   input_dim = 2
//   output_max_norm = 1
//
//   [data]
//   radius = 1
//
//   [layer]
//   width = 2
//   activation = relu
//   max_norm = 1
//
// '#' starts a comment. Every key is optional and defaulted; unknown keys and
// duplicates are errors that cite the offending line.

class ConfigError : public std::runtime_error {
public:
    ConfigError(int line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

namespace detail {

struct ConfigEntry {
    std::string key;
    std::string value;
    int line = 0;
};

struct ConfigSection {
    std::string name;
    int line = 0;
    std::vector<ConfigEntry> entries;
};

struct ConfigDoc {
    std::vector<ConfigEntry> top;
    std::vector<ConfigSection> sections;
};

inline ConfigDoc parse_config_doc(const std::string& text) {
    ConfigDoc doc;
    ConfigSection* current = nullptr;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = trim(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = trim(line.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(line_no, "unterminated section header");
            const std::string name(trim(line.substr(1, line.size() - 2)));
            if (name.empty()) throw ConfigError(line_no, "empty section name");
            doc.sections.push_back({name, line_no, {}});
            current = &doc.sections.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(line_no, "expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) throw ConfigError(line_no, "empty key");
        if (value.empty()) throw ConfigError(line_no, "empty value for key '" + key + "'");
        auto& target = current ? current->entries : doc.top;
        for (const auto& e : target)
            if (e.key == key)
                throw ConfigError(line_no, "duplicate key '" + key + "' (first set on line " +
                                               std::to_string(e.line) + ")");
        target.push_back({key, value, line_no});
    }
    return doc;
}

// Typed view over one entry list with unknown-key detection.
class EntryReader {
public:
    EntryReader(const std::vector<ConfigEntry>& entries, std::string scope)
        : entries_(entries), scope_(std::move(scope)) {}

    std::optional<std::string> str(const std::string& key) {
        for (const auto& e : entries_) {
            if (e.key == key) {
                seen_.insert(key);
                return e.value;
            }
        }
        return std::nullopt;
    }

    double number(const std::string& key, double fallback) {
        for (const auto& e : entries_) {
            if (e.key == key) {
                seen_.insert(key);
                try {
                    return parse_double(e.value);
                } catch (const std::invalid_argument& ex) {
                    throw ConfigError(e.line, std::string(ex.what()) + " for key '" + key + "'");
                }
            }
        }
        return fallback;
    }

    int integer(const std::string& key, int fallback) {
        for (const auto& e : entries_) {
            if (e.key == key) {
                seen_.insert(key);
                try {
                    const long long v = parse_int(e.value);
                    if (v < -(1ll << 31) || v > (1ll << 31))
                        throw ConfigError(e.line, "integer out of range for key '" + key + "'");
                    return static_cast<int>(v);
                } catch (const std::invalid_argument& ex) {
                    throw ConfigError(e.line, std::string(ex.what()) + " for key '" + key + "'");
                }
            }
        }
        return fallback;
    }

    void finish() const {
        for (const auto& e : entries_)
            if (seen_.count(e.key) == 0)
                throw ConfigError(e.line, "unknown key '" + e.key + "' in " + scope_);
    }

private:
    const std::vector<ConfigEntry>& entries_;
    std::string scope_;
    std::set<std::string> seen_;
};

inline Activation read_activation(EntryReader& reader, int section_line) {
    Activation act;
    if (const auto name = reader.str("activation")) {
        try {
            act.kind = parse_activation_kind(*name);
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(section_line, ex.what());
        }
    }
    act.slope = reader.number("slope", act.slope);
    return act;
}

inline LayerSpec read_layer(const ConfigSection& section) {
    EntryReader reader(section.entries, "[" + section.name + "]");
    LayerSpec layer;
    layer.width = reader.integer("width", layer.width);
    layer.activation = read_activation(reader, section.line);
    layer.max_norm = reader.number("max_norm", layer.max_norm);
    layer.keep_prob = reader.number("keep_prob", layer.keep_prob);
    layer.dc_keep_prob = reader.number("dc_keep_prob", layer.dc_keep_prob);
    reader.finish();
    return layer;
}

}  // namespace detail

inline std::string spec_document_type(const std::string& text) {
    const auto doc = detail::parse_config_doc(text);
    for (const auto& e : doc.top)
        if (e.key == "type") return e.value;
    return "mlp";
}

inline NetworkSpec parse_network_spec(const std::string& text) {
    const auto doc = detail::parse_config_doc(text);
    detail::EntryReader top(doc.top, "the top level");
    if (const auto type = top.str("type"); type && *type != "mlp")
        throw ConfigError(1, "expected a document of type 'mlp', got '" + *type + "'");
    NetworkSpec spec;
    spec.input_dim = top.integer("input_dim", spec.input_dim);
    spec.input_keep_prob = top.number("input_keep_prob", spec.input_keep_prob);
    spec.input_dc_keep_prob = top.number("input_dc_keep_prob", spec.input_dc_keep_prob);
    spec.output_max_norm = top.number("output_max_norm", spec.output_max_norm);
    top.finish();
    for (const auto& section : doc.sections) {
        if (section.name == "layer") {
            spec.hidden.push_back(detail::read_layer(section));
        } else if (section.name == "data") {
            detail::EntryReader data(section.entries, "[data]");
            data.number("radius", 1.0);
            data.number("noise_radius", 0.0);
            data.finish();
        } else {
            throw ConfigError(section.line, "unknown section [" + section.name + "] in an mlp document");
        }
    }
    return spec;
}

inline ResNetSpec parse_resnet_spec(const std::string& text) {
    const auto doc = detail::parse_config_doc(text);
    detail::EntryReader top(doc.top, "the top level");
    const auto type = top.str("type");
    if (!type || *type != "resnet")
        throw ConfigError(1, "expected a document of type 'resnet'");
    ResNetSpec spec;
    spec.activation = detail::read_activation(top, 1);
    spec.output_max_norm = top.number("output_max_norm", spec.output_max_norm);
    top.finish();
    bool saw_stem = false;
    for (const auto& section : doc.sections) {
        if (section.name == "stem") {
            if (saw_stem) throw ConfigError(section.line, "duplicate [stem] section");
            saw_stem = true;
            detail::EntryReader stem(section.entries, "[stem]");
            spec.stem_max_norm = stem.number("max_norm", spec.stem_max_norm);
            spec.stem_filters = stem.integer("filters", spec.stem_filters);
            spec.stem_filter_size = stem.integer("filter_size", spec.stem_filter_size);
            stem.finish();
        } else if (section.name == "block") {
            detail::EntryReader block(section.entries, "[block]");
            ResNetBlockSpec b;
            b.units = block.integer("units", b.units);
            b.max_norm = block.number("max_norm", b.max_norm);
            b.filters = block.integer("filters", b.filters);
            b.filter_size = block.integer("filter_size", b.filter_size);
            b.stride = block.integer("stride", b.stride);
            b.keep_prob = block.number("keep_prob", b.keep_prob);
            block.finish();
            spec.blocks.push_back(b);
        } else if (section.name == "fc") {
            spec.fc_tail.push_back(detail::read_layer(section));
        } else if (section.name == "data") {
            detail::EntryReader data(section.entries, "[data]");
            data.number("radius", 1.0);
            data.number("noise_radius", 0.0);
            data.finish();
        } else {
            throw ConfigError(section.line, "unknown section [" + section.name + "] in a resnet document");
        }
    }
    return spec;
}

// Data geometry can ride along in the same document under [data]; absent keys
// default to the unit ball with no perturbation budget.
inline DataStats parse_data_stats(const std::string& text) {
    const auto doc = detail::parse_config_doc(text);
    DataStats stats;
    for (const auto& section : doc.sections) {
        if (section.name != "data") continue;
        detail::EntryReader data(section.entries, "[data]");
        stats.radius = data.number("radius", stats.radius);
        stats.noise_radius = data.number("noise_radius", stats.noise_radius);
        data.finish();
    }
    return stats;
}

namespace detail {

inline void write_activation(std::string& out, const Activation& act) {
    out += "activation = ";
    out += to_string(act.kind);
    out += "\n";
    if (act.kind == ActivationKind::leaky_relu) {
        out += "slope = " + fmt_double(act.slope) + "\n";
    }
}

inline void write_layer(std::string& out, const char* name, const LayerSpec& layer) {
    out += std::string("\n[") + name + "]\n";
    out += "width = " + std::to_string(layer.width) + "\n";
    write_activation(out, layer.activation);
    out += "max_norm = " + fmt_double(layer.max_norm) + "\n";
    out += "keep_prob = " + fmt_double(layer.keep_prob) + "\n";
    out += "dc_keep_prob = " + fmt_double(layer.dc_keep_prob) + "\n";
}

inline void write_data_stats(std::string& out, const DataStats& stats) {
    out += "\n[data]\n";
    out += "radius = " + fmt_double(stats.radius) + "\n";
    out += "noise_radius = " + fmt_double(stats.noise_radius) + "\n";
}

}  // namespace detail

inline std::string serialize(const NetworkSpec& spec, const DataStats* stats = nullptr) {
    std::string out;
    out += "type = mlp\n";
    out += "input_dim = " + std::to_string(spec.input_dim) + "\n";
    out += "input_keep_prob = " + fmt_double(spec.input_keep_prob) + "\n";
    out += "input_dc_keep_prob = " + fmt_double(spec.input_dc_keep_prob) + "\n";
    out += "output_max_norm = " + fmt_double(spec.output_max_norm) + "\n";
    if (stats) detail::write_data_stats(out, *stats);
    for (const auto& layer : spec.hidden) detail::write_layer(out, "layer", layer);
    return out;
}

inline std::string serialize(const ResNetSpec& spec, const DataStats* stats = nullptr) {
    std::string out;
    out += "type = resnet\n";
    detail::write_activation(out, spec.activation);
    out += "output_max_norm = " + fmt_double(spec.output_max_norm) + "\n";
    if (stats) detail::write_data_stats(out, *stats);
    out += "\n[stem]\n";
    out += "max_norm = " + fmt_double(spec.stem_max_norm) + "\n";
    out += "filters = " + std::to_string(spec.stem_filters) + "\n";
    out += "filter_size = " + std::to_string(spec.stem_filter_size) + "\n";
    for (const auto& b : spec.blocks) {
        out += "\n[block]\n";
        out += "units = " + std::to_string(b.units) + "\n";
        out += "max_norm = " + fmt_double(b.max_norm) + "\n";
        out += "filters = " + std::to_string(b.filters) + "\n";
        out += "filter_size = " + std::to_string(b.filter_size) + "\n";
        out += "stride = " + std::to_string(b.stride) + "\n";
        out += "keep_prob = " + fmt_double(b.keep_prob) + "\n";
    }
    for (const auto& layer : spec.fc_tail) detail::write_layer(out, "fc", layer);
    return out;
}

}
