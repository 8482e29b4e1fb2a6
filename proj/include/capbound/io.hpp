#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "capacity.hpp"
#include "dense_net.hpp"
#include "margins.hpp"
#include "oracle.hpp"
#include "spec_config.hpp"
#include "text_util.hpp"
#include "version.hpp"

namespace capbound {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << content;
    if (!out) throw IoError(path + ": write failed");
}

// ---- dataset CSV --------------------------------------------------------
// Headerless, comma separated: d feature columns then a label in {-1, +1}.
// LF line endings only. Errors cite path and 1-based line.

inline Dataset parse_dataset_csv(const std::string& text, const std::string& path = "<string>") {
    std::vector<std::vector<double>> rows;
    Eigen::Index width = -1;
    std::size_t pos = 0;
    int line_no = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        const std::string line =
            text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() : nl + 1;
        ++line_no;
        const auto where = [&] { return path + ":" + std::to_string(line_no) + ": "; };
        if (line.find('\r') != std::string::npos)
            throw IoError(where() + "carriage return found; the dataset format is LF only");
        if (trim(line).empty()) {
            if (pos < text.size()) throw IoError(where() + "blank line inside the dataset");
            continue;  // a trailing newline leaves one empty remainder
        }
        std::vector<double> fields;
        std::size_t fp = 0;
        while (true) {
            std::size_t comma = line.find(',', fp);
            const std::string cell(trim(
                line.substr(fp, comma == std::string::npos ? std::string::npos : comma - fp)));
            try {
                fields.push_back(parse_double(cell));
            } catch (const std::exception&) {
                throw IoError(where() + "cannot parse '" + cell + "' as a number");
            }
            if (comma == std::string::npos) break;
            fp = comma + 1;
        }
        if (fields.size() < 2)
            throw IoError(where() + "need at least one feature column and a label column");
        if (width < 0) width = static_cast<Eigen::Index>(fields.size());
        if (static_cast<Eigen::Index>(fields.size()) != width)
            throw IoError(where() + "expected " + std::to_string(width) + " columns, found " +
                          std::to_string(fields.size()));
        const double label = fields.back();
        if (label != 1.0 && label != -1.0)
            throw IoError(where() + "label must be -1 or +1, found " + fmt_double(label));
        rows.push_back(std::move(fields));
    }
    if (rows.empty()) throw IoError(path + ": dataset is empty");

    Dataset data;
    data.x.resize(static_cast<Eigen::Index>(rows.size()), width - 1);
    data.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Eigen::Index j = 0; j + 1 < width; ++j)
            data.x(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
        data.y[static_cast<Eigen::Index>(i)] = rows[i].back();
    }
    return data;
}

inline Dataset load_dataset(const std::string& path) {
    return parse_dataset_csv(read_text_file(path), path);
}

inline std::string serialize_dataset_csv(const Dataset& data) {
    std::string out;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
            out += fmt_double(data.x(i, j));
            out += ',';
        }
        out += fmt_double(data.y[i]);
        out += '\n';
    }
    return out;
}

inline void save_dataset(const std::string& path, const Dataset& data) {
    write_text_file(path, serialize_dataset_csv(data));
}

inline double data_radius(const Dataset& data) {
    double r = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i) r = std::max(r, data.x.row(i).norm());
    return r;
}

// ---- model JSON ---------------------------------------------------------
// Versioned document: spec object plus row-major weight arrays. nlohmann
// emits doubles in shortest round-trip form, so save/load is lossless.

inline nlohmann::ordered_json spec_to_json(const NetworkSpec& spec) {
    nlohmann::ordered_json j;
    j["type"] = "mlp";
    j["input_dim"] = spec.input_dim;
    j["input_keep_prob"] = spec.input_keep_prob;
    j["input_dc_keep_prob"] = spec.input_dc_keep_prob;
    j["output_max_norm"] = spec.output_max_norm;
    j["hidden"] = nlohmann::ordered_json::array();
    for (const auto& layer : spec.hidden) {
        nlohmann::ordered_json l;
        l["width"] = layer.width;
        l["activation"] = to_string(layer.activation.kind);
        if (layer.activation.kind == ActivationKind::leaky_relu)
            l["slope"] = layer.activation.slope;
        l["max_norm"] = layer.max_norm;
        l["keep_prob"] = layer.keep_prob;
        l["dc_keep_prob"] = layer.dc_keep_prob;
        j["hidden"].push_back(std::move(l));
    }
    return j;
}

inline NetworkSpec spec_from_json(const nlohmann::ordered_json& j) {
    NetworkSpec spec;
    if (j.value("type", "mlp") != std::string("mlp"))
        throw IoError("model spec type must be 'mlp'");
    spec.input_dim = j.at("input_dim").get<int>();
    spec.input_keep_prob = j.value("input_keep_prob", 1.0);
    spec.input_dc_keep_prob = j.value("input_dc_keep_prob", 1.0);
    spec.output_max_norm = j.at("output_max_norm").get<double>();
    for (const auto& l : j.value("hidden", nlohmann::ordered_json::array())) {
        LayerSpec layer;
        layer.width = l.at("width").get<int>();
        layer.activation.kind = parse_activation_kind(l.at("activation").get<std::string>());
        layer.activation.slope = l.value("slope", layer.activation.slope);
        layer.max_norm = l.at("max_norm").get<double>();
        layer.keep_prob = l.value("keep_prob", 1.0);
        layer.dc_keep_prob = l.value("dc_keep_prob", 1.0);
        spec.hidden.push_back(layer);
    }
    return spec;
}

inline std::string serialize_model(const DenseNet& net) {
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["tool_version"] = kToolVersion;
    j["spec"] = spec_to_json(net.spec);
    j["weights"] = nlohmann::ordered_json::array();
    for (const auto& w : net.weights) {
        nlohmann::ordered_json m;
        m["rows"] = w.rows();
        m["cols"] = w.cols();
        auto data = nlohmann::ordered_json::array();
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) data.push_back(w(r, c));
        m["data"] = std::move(data);
        j["weights"].push_back(std::move(m));
    }
    return j.dump(2) + "\n";
}

inline void save_model(const std::string& path, const DenseNet& net) {
    write_text_file(path, serialize_model(net));
}

inline DenseNet parse_model(const std::string& text, const std::string& path = "<string>") {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    try {
        const int version = j.at("format_version").get<int>();
        if (version != 1)
            throw IoError(path + ": unsupported format_version " + std::to_string(version));
        DenseNet net;
        net.spec = spec_from_json(j.at("spec"));
        ensure_valid(net.spec);
        const auto dims = net.spec.dims();
        const auto& arrays = j.at("weights");
        if (arrays.size() + 1 != dims.size())
            throw IoError(path + ": expected " + std::to_string(dims.size() - 1) +
                          " weight matrices, found " + std::to_string(arrays.size()));
        for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
            const auto& m = arrays[k];
            const Eigen::Index rows = m.at("rows").get<Eigen::Index>();
            const Eigen::Index cols = m.at("cols").get<Eigen::Index>();
            if (rows != dims[k] || cols != dims[k + 1])
                throw IoError(path + ": weight matrix " + std::to_string(k) + " is " +
                              std::to_string(rows) + "x" + std::to_string(cols) +
                              ", spec requires " + std::to_string(dims[k]) + "x" +
                              std::to_string(dims[k + 1]));
            const auto& data = m.at("data");
            if (static_cast<Eigen::Index>(data.size()) != rows * cols)
                throw IoError(path + ": weight matrix " + std::to_string(k) +
                              " carries the wrong number of entries");
            Eigen::MatrixXd w(rows, cols);
            Eigen::Index idx = 0;
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c)
                    w(r, c) = data[static_cast<std::size_t>(idx++)].get<double>();
            net.weights.push_back(std::move(w));
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
}

inline DenseNet load_model(const std::string& path) {
    return parse_model(read_text_file(path), path);
}

// ---- report rendering ---------------------------------------------------
// Every report embeds the spec hash, the seed, and the tool version, so an
// output file identifies the run that produced it.

enum class ReportFormat { json, markdown, csv };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "json") return ReportFormat::json;
    if (s == "markdown") return ReportFormat::markdown;
    if (s == "csv") return ReportFormat::csv;
    throw IoError("unknown report format '" + s + "' (expected json, markdown, or csv)");
}

struct ReportMeta {
    std::string spec_hash;  // fnv1a64 over the canonical spec serialization
    std::uint64_t seed = 0;
};

namespace detail {

// JSON cannot carry infinities; nlohmann serializes them as null, which is
// what a missing upper bound should read as anyway.
inline nlohmann::ordered_json json_meta(const ReportMeta& meta) {
    nlohmann::ordered_json j;
    j["tool_version"] = kToolVersion;
    j["spec_hash"] = meta.spec_hash;
    j["seed"] = meta.seed;
    return j;
}

inline std::string markdown_meta(const ReportMeta& meta) {
    std::string out;
    out += "- tool_version: " + std::string(kToolVersion) + "\n";
    out += "- spec_hash: " + meta.spec_hash + "\n";
    out += "- seed: " + std::to_string(meta.seed) + "\n\n";
    return out;
}

inline std::string csv_meta(const ReportMeta& meta) {
    std::string out;
    out += "# tool_version=" + std::string(kToolVersion) + "\n";
    out += "# spec_hash=" + meta.spec_hash + "\n";
    out += "# seed=" + std::to_string(meta.seed) + "\n";
    return out;
}

}  // namespace detail

inline std::string render_bound_reports(const std::vector<BoundReport>& reports,
                                        const ReportMeta& meta, ReportFormat format) {
    switch (format) {
        case ReportFormat::json: {
            nlohmann::ordered_json j = detail::json_meta(meta);
            j["bounds"] = nlohmann::ordered_json::array();
            for (const auto& r : reports) {
                nlohmann::ordered_json b;
                b["kind"] = to_string(r.kind);
                b["value"] = r.value;
                b["value_floor"] = r.value_floor;
                b["saturated"] = r.saturated;
                b["factors"] = nlohmann::ordered_json::array();
                for (const auto& f : r.factors)
                    b["factors"].push_back({{"label", f.label}, {"value", f.value}});
                j["bounds"].push_back(std::move(b));
            }
            return j.dump(2) + "\n";
        }
        case ReportFormat::markdown: {
            std::string out = "# Capacity bounds\n\n" + detail::markdown_meta(meta);
            for (const auto& r : reports) {
                out += "## " + std::string(to_string(r.kind)) + "\n\n";
                out += "value: " + fmt_double(r.value) + " (floor " + fmt_double(r.value_floor) +
                       (r.saturated ? ", saturated, recomputed in log space" : "") + ")\n\n";
                out += "| factor | value |\n|---|---|\n";
                for (const auto& f : r.factors)
                    out += "| " + f.label + " | " + fmt_double(f.value) + " |\n";
                out += "\n";
            }
            return out;
        }
        case ReportFormat::csv: {
            std::string out = detail::csv_meta(meta);
            out += "kind,value,value_floor,saturated,factor_label,factor_value\n";
            for (const auto& r : reports)
                for (const auto& f : r.factors)
                    out += std::string(to_string(r.kind)) + "," + fmt_double(r.value) + "," +
                           fmt_double(r.value_floor) + "," + (r.saturated ? "1" : "0") + "," +
                           f.label + "," + fmt_double(f.value) + "\n";
            return out;
        }
    }
    throw std::logic_error("unreachable");
}

inline std::string render_margin_report(const MarginReport& report, int certificate_samples,
                                        const ReportMeta& meta, ReportFormat format) {
    const auto row_cells = [](const MarginRow& r) {
        std::vector<std::string> c;
        c.push_back(std::to_string(r.index));
        c.push_back(fmt_double(r.label));
        c.push_back(fmt_double(r.score));
        c.push_back(r.correct ? "1" : "0");
        c.push_back(fmt_double(r.gamma_op));
        c.push_back(r.upper_found ? fmt_double(r.gamma_ip_upper) : "inf");
        c.push_back(r.upper_found ? "1" : "0");
        c.push_back(fmt_double(r.gamma_cert));
        c.push_back(fmt_double(r.jacobian_sup));
        return c;
    };
    static const char* kHeader[] = {"index",          "label",       "score",
                                    "correct",        "gamma_op",    "gamma_ip_upper",
                                    "upper_found",    "gamma_cert",  "jacobian_sup"};
    switch (format) {
        case ReportFormat::json: {
            nlohmann::ordered_json j = detail::json_meta(meta);
            j["certificate_samples"] = certificate_samples;
            j["rows"] = nlohmann::ordered_json::array();
            for (const auto& r : report.rows) {
                nlohmann::ordered_json row;
                row["index"] = r.index;
                row["label"] = r.label;
                row["score"] = r.score;
                row["correct"] = r.correct;
                row["gamma_op"] = r.gamma_op;
                row["gamma_ip_upper"] =
                    r.upper_found ? nlohmann::ordered_json(r.gamma_ip_upper)
                                  : nlohmann::ordered_json(nullptr);
                row["upper_found"] = r.upper_found;
                row["gamma_cert"] = r.gamma_cert;
                row["jacobian_sup"] = r.jacobian_sup;
                j["rows"].push_back(std::move(row));
            }
            j["aggregate"] = {{"samples", report.rows.size()},
                              {"correct_count", report.correct_count},
                              {"mean_gamma_op", report.mean_gamma_op},
                              {"min_gamma_op", report.min_gamma_op},
                              {"mean_gamma_cert", report.mean_gamma_cert},
                              {"min_gamma_cert", report.min_gamma_cert}};
            return j.dump(2) + "\n";
        }
        case ReportFormat::markdown: {
            std::string out = "# Margin report\n\n" + detail::markdown_meta(meta);
            out += "- certificate_samples: " + std::to_string(certificate_samples) + "\n";
            out += "- correct: " + std::to_string(report.correct_count) + "/" +
                   std::to_string(report.rows.size()) + "\n";
            out += "- mean/min gamma_op: " + fmt_double(report.mean_gamma_op) + " / " +
                   fmt_double(report.min_gamma_op) + "\n";
            out += "- mean/min gamma_cert: " + fmt_double(report.mean_gamma_cert) + " / " +
                   fmt_double(report.min_gamma_cert) + "\n\n";
            out += "|";
            for (const char* h : kHeader) out += std::string(" ") + h + " |";
            out += "\n|";
            for (std::size_t i = 0; i < std::size(kHeader); ++i) out += "---|";
            out += "\n";
            for (const auto& r : report.rows) {
                out += "|";
                for (const auto& c : row_cells(r)) out += " " + c + " |";
                out += "\n";
            }
            return out;
        }
        case ReportFormat::csv: {
            std::string out = detail::csv_meta(meta);
            out += "# certificate_samples=" + std::to_string(certificate_samples) + "\n";
            std::string header;
            for (const char* h : kHeader) {
                if (!header.empty()) header += ',';
                header += h;
            }
            out += header + "\n";
            for (const auto& r : report.rows) {
                std::string line;
                for (const auto& c : row_cells(r)) {
                    if (!line.empty()) line += ',';
                    line += c;
                }
                out += line + "\n";
            }
            return out;
        }
    }
    throw std::logic_error("unreachable");
}

inline std::string render_oracle_results(const std::vector<OracleResult>& results,
                                         const ReportMeta& meta, ReportFormat format) {
    bool all_passed = true;
    for (const auto& r : results) all_passed = all_passed && r.passed;
    switch (format) {
        case ReportFormat::json: {
            nlohmann::ordered_json j = detail::json_meta(meta);
            j["all_passed"] = all_passed;
            j["oracles"] = nlohmann::ordered_json::array();
            for (const auto& r : results) {
                nlohmann::ordered_json row;
                row["name"] = r.name;
                row["passed"] = r.passed;
                row["statistic"] = std::isfinite(r.statistic)
                                       ? nlohmann::ordered_json(r.statistic)
                                       : nlohmann::ordered_json(nullptr);
                row["threshold"] = r.threshold;
                row["aux"] = r.aux;
                row["samples"] = r.samples;
                row["seed"] = r.seed;
                row["note"] = r.note;
                j["oracles"].push_back(std::move(row));
            }
            return j.dump(2) + "\n";
        }
        case ReportFormat::markdown: {
            std::string out = "# Verification report\n\n" + detail::markdown_meta(meta);
            out += std::string("- all_passed: ") + (all_passed ? "true" : "false") + "\n\n";
            out += "| oracle | passed | statistic | threshold | aux | samples | note |\n";
            out += "|---|---|---|---|---|---|---|\n";
            for (const auto& r : results)
                out += "| " + r.name + " | " + (r.passed ? "pass" : "FAIL") + " | " +
                       fmt_double(r.statistic) + " | " + fmt_double(r.threshold) + " | " +
                       fmt_double(r.aux) + " | " + std::to_string(r.samples) + " | " + r.note +
                       " |\n";
            return out;
        }
        case ReportFormat::csv: {
            std::string out = detail::csv_meta(meta);
            out += "name,passed,statistic,threshold,aux,samples,seed,note\n";
            for (const auto& r : results) {
                std::string note = r.note;
                for (auto& ch : note)
                    if (ch == ',') ch = ';';
                out += r.name + "," + (r.passed ? "1" : "0") + "," + fmt_double(r.statistic) +
                       "," + fmt_double(r.threshold) + "," + fmt_double(r.aux) + "," +
                       std::to_string(r.samples) + "," + std::to_string(r.seed) + "," + note +
                       "\n";
            }
            return out;
        }
    }
    throw std::logic_error("unreachable");
}

// History CSV: epoch, hinge, zero_one, mean_gamma_op, and a penalty column
// when the robust objective produced one.
inline std::string serialize_history_csv(const std::vector<HistoryRow>& history,
                                         bool with_penalty) {
    std::string out = with_penalty ? "epoch,hinge,zero_one,mean_gamma_op,penalty\n"
                                   : "epoch,hinge,zero_one,mean_gamma_op\n";
    for (const auto& row : history) {
        out += std::to_string(row.epoch) + "," + fmt_double(row.hinge) + "," +
               fmt_double(row.zero_one) + "," + fmt_double(row.mean_output_margin);
        if (with_penalty) out += "," + fmt_double(row.penalty);
        out += "\n";
    }
    return out;
}

}  // namespace capbound
