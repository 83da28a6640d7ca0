#pragma once

// DatasetFile and PredictionFile: the JSON documents exchanged with the
// trainer. Reals are written as JSON numbers in shortest round-trip form, and
// non-finite values as the strings "nan", "inf", "-inf". Readers accept
// either numbers or decimal/hexfloat strings.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kficl/common.hpp"
#include "kficl/context_codec.hpp"
#include "kficl/ssm.hpp"

namespace kficl {

using json = nlohmann::json;

inline constexpr int kDatasetVersion = 1;
inline constexpr int kPredictionVersion = 1;

// =============================================================================
// Number and matrix encoding
// =============================================================================

inline json real_to_json(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline double real_from_json(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (!j.is_string()) throw SchemaError("expected a number, got " + std::string(j.type_name()));
    const auto& s = j.get_ref<const std::string&>();
    const char* first = s.data();
    const char* last = s.data() + s.size();
    bool negative = false;
    if (first != last && (*first == '-' || *first == '+')) negative = *first++ == '-';
    auto fmt = std::chars_format::general;
    if (last - first > 2 && first[0] == '0' && (first[1] == 'x' || first[1] == 'X')) {
        first += 2;
        fmt = std::chars_format::hex;
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(first, last, v, fmt);
    if (ec != std::errc() || ptr != last || first == last) {
        throw SchemaError("malformed number '" + s + "'");
    }
    return negative ? -v : v;
}

/// Shortest decimal that parses back to exactly `v`.
inline std::string format_real(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(real_to_json(m(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j, const std::string& what) {
    if (!j.is_array()) throw SchemaError(what + ": expected a nested array");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw SchemaError(what + ": ragged row " + std::to_string(i));
        }
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = real_from_json(row[static_cast<std::size_t>(c)]);
    }
    return m;
}

inline json vectors_to_json(const std::vector<Vector>& vs) {
    json out = json::array();
    for (const auto& v : vs) {
        json row = json::array();
        for (Eigen::Index i = 0; i < v.size(); ++i) row.push_back(real_to_json(v(i)));
        out.push_back(std::move(row));
    }
    return out;
}

inline std::vector<Vector> vectors_from_json(const json& j, Eigen::Index len, const std::string& what) {
    if (!j.is_array()) throw SchemaError(what + ": expected an array");
    std::vector<Vector> out;
    out.reserve(j.size());
    for (const auto& row : j) {
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != len) {
            throw SchemaError(what + ": entry does not have length " + std::to_string(len));
        }
        Vector v(len);
        for (Eigen::Index i = 0; i < len; ++i) v(i) = real_from_json(row[static_cast<std::size_t>(i)]);
        out.push_back(std::move(v));
    }
    return out;
}

namespace detail {

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("'" + path + "' is not valid JSON: " + e.what());
    }
}

inline void write_json_file(const std::string& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << doc.dump() << '\n';
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

template <typename T>
T require(const json& doc, const char* key, const std::string& what) {
    if (!doc.contains(key)) throw SchemaError(what + ": missing field '" + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw SchemaError(what + ": field '" + key + "' has the wrong type");
    }
}

inline void check_version(const json& doc, int expected, const std::string& what) {
    const int version = require<int>(doc, "version", what);
    if (version != expected) {
        throw SchemaError(what + ": schema version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(expected) + ")");
    }
}

}  // namespace detail

// =============================================================================
// DatasetFile
// =============================================================================

struct Dataset {
    Scheme scheme = Scheme::scalar;
    int n = 0;
    int m = 0;
    int N = 0;
    std::uint64_t seed = 0;
    std::vector<Example> examples;
    std::vector<ContextMatrix> contexts;

    std::size_t size() const { return examples.size(); }
};

inline Dataset make_dataset(std::vector<Example> examples, Scheme scheme, std::uint64_t seed) {
    if (examples.empty()) throw ConfigError("make_dataset: no examples");
    Dataset ds;
    ds.scheme = scheme;
    ds.n = examples.front().params.n;
    ds.m = examples.front().params.m;
    ds.N = examples.front().traj.horizon();
    ds.seed = seed;
    ds.contexts.reserve(examples.size());
    for (const auto& ex : examples) {
        if (ex.params.n != ds.n || ex.params.m != ds.m || ex.traj.horizon() != ds.N) {
            throw ConfigError("make_dataset: examples have differing dimensions");
        }
        ds.contexts.push_back(encode(ex, scheme));
    }
    ds.examples = std::move(examples);
    return ds;
}

inline json dataset_to_json(const Dataset& ds) {
    json doc;
    doc["version"] = kDatasetVersion;
    doc["scheme"] = to_string(ds.scheme);
    doc["n"] = ds.n;
    doc["m"] = ds.m;
    doc["N"] = ds.N;
    doc["count"] = ds.examples.size();
    doc["seed"] = ds.seed;
    doc["target_positions"] = ds.contexts.empty() ? json::array() : json(ds.contexts.front().target_positions);
    json items = json::array();
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        const auto& ex = ds.examples[i];
        json item;
        item["id"] = i;
        item["seed"] = ex.traj.seed;
        item["context"] = matrix_to_json(ds.contexts[i].data);
        item["targets"] = vectors_to_json(ex.traj.y_seq);
        item["states"] = vectors_to_json(ex.traj.x_seq);
        json params;
        params["F"] = matrix_to_json(ex.params.F);
        params["Q"] = matrix_to_json(ex.params.Q);
        params["R"] = matrix_to_json(ex.params.R);
        if (ex.params.B) params["B"] = matrix_to_json(*ex.params.B);
        item["params"] = std::move(params);
        items.push_back(std::move(item));
    }
    doc["examples"] = std::move(items);
    return doc;
}

/// Rebuilds examples from stored parameters plus the H_t and u_t carried by
/// each context. Recorded noise draws are not stored and come back empty.
inline Dataset dataset_from_json(const json& doc) {
    const std::string what = "dataset";
    detail::check_version(doc, kDatasetVersion, what);
    Dataset ds;
    ds.scheme = parse_scheme(detail::require<std::string>(doc, "scheme", what));
    ds.n = detail::require<int>(doc, "n", what);
    ds.m = detail::require<int>(doc, "m", what);
    ds.N = detail::require<int>(doc, "N", what);
    ds.seed = detail::require<std::uint64_t>(doc, "seed", what);
    const auto count = detail::require<std::size_t>(doc, "count", what);
    if (!doc.contains("examples") || !doc["examples"].is_array()) {
        throw SchemaError(what + ": missing examples array");
    }
    const auto& items = doc["examples"];
    if (items.size() != count) {
        throw SchemaError(what + ": count is " + std::to_string(count) + " but " +
                          std::to_string(items.size()) + " examples are present");
    }
    const ContextShape shape = context_shape(ds.scheme, ds.n, ds.m, ds.N);
    ds.examples.resize(count);
    ds.contexts.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& item = items[i];
        const std::string where = what + " example " + std::to_string(i);
        ContextMatrix ctx;
        ctx.scheme = ds.scheme;
        ctx.n = ds.n;
        ctx.m = ds.m;
        ctx.N = ds.N;
        ctx.data = matrix_from_json(item.at("context"), where + " context");
        if (ctx.data.rows() != shape.rows || ctx.data.cols() != shape.cols) {
            throw SchemaError(where + ": context is " + shape_str(ctx.data) + ", expected " +
                              shape_str(shape.rows, shape.cols));
        }
        for (int t = 1; t <= ds.N; ++t) ctx.target_positions.push_back(shape.target_col(t));
        const DecodedContext dec = decode(ctx);

        const auto& params = item.at("params");
        SystemParams p;
        p.n = ds.n;
        p.m = ds.m;
        p.F = matrix_from_json(params.at("F"), where + " F");
        p.Q = matrix_from_json(params.at("Q"), where + " Q");
        p.R = matrix_from_json(params.at("R"), where + " R");
        if (params.contains("B")) {
            p.B = matrix_from_json(params.at("B"), where + " B");
            p.u_seq = dec.u_seq;
        }
        p.H_seq = dec.H_seq;
        try {
            p.validate();
        } catch (const ConfigError& e) {
            throw SchemaError(where + ": " + e.what());
        }

        Example ex;
        ex.traj.y_seq = vectors_from_json(item.at("targets"), ds.m, where + " targets");
        ex.traj.x_seq = vectors_from_json(item.at("states"), ds.n, where + " states");
        if (static_cast<int>(ex.traj.y_seq.size()) != ds.N ||
            static_cast<int>(ex.traj.x_seq.size()) != ds.N + 1) {
            throw SchemaError(where + ": targets/states do not match N=" + std::to_string(ds.N));
        }
        ex.traj.seed = item.value("seed", std::uint64_t{0});
        ex.params = std::move(p);
        ex.traj.params = std::make_shared<const SystemParams>(ex.params);
        ds.examples[i] = std::move(ex);
        ds.contexts[i] = std::move(ctx);
    }
    return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
    detail::write_json_file(path, dataset_to_json(ds));
}

inline Dataset read_dataset(const std::string& path) {
    return dataset_from_json(detail::read_json_file(path));
}

// =============================================================================
// PredictionFile
// =============================================================================

struct ExamplePredictions {
    std::size_t id = 0;
    std::vector<Vector> values;  ///< N entries of length m: ŷ_{t|1..t-1}
    std::vector<Vector> states;  ///< optional, N entries of length n: x̂_{t|1..t}
};

struct PredictionFile {
    std::string algorithm;
    Scheme scheme = Scheme::scalar;
    int n = 0;
    int m = 0;
    int N = 0;
    std::vector<int> positions;
    std::vector<ExamplePredictions> examples;

    std::size_t size() const { return examples.size(); }
    bool has_states() const {
        return !examples.empty() &&
               std::all_of(examples.begin(), examples.end(),
                           [](const ExamplePredictions& e) { return !e.states.empty(); });
    }
};

inline json predictions_to_json(const PredictionFile& pf) {
    json doc;
    doc["version"] = kPredictionVersion;
    doc["algorithm"] = pf.algorithm;
    doc["scheme"] = to_string(pf.scheme);
    doc["n"] = pf.n;
    doc["m"] = pf.m;
    doc["N"] = pf.N;
    doc["count"] = pf.examples.size();
    doc["positions"] = pf.positions;
    json items = json::array();
    for (const auto& e : pf.examples) {
        json item;
        item["id"] = e.id;
        item["values"] = vectors_to_json(e.values);
        if (!e.states.empty()) item["states"] = vectors_to_json(e.states);
        items.push_back(std::move(item));
    }
    doc["predictions"] = std::move(items);
    return doc;
}

inline PredictionFile predictions_from_json(const json& doc) {
    const std::string what = "predictions";
    detail::check_version(doc, kPredictionVersion, what);
    PredictionFile pf;
    pf.algorithm = detail::require<std::string>(doc, "algorithm", what);
    pf.scheme = parse_scheme(detail::require<std::string>(doc, "scheme", what));
    pf.n = detail::require<int>(doc, "n", what);
    pf.m = detail::require<int>(doc, "m", what);
    pf.N = detail::require<int>(doc, "N", what);
    pf.positions = detail::require<std::vector<int>>(doc, "positions", what);
    const auto count = detail::require<std::size_t>(doc, "count", what);
    if (static_cast<int>(pf.positions.size()) != pf.N) {
        throw SchemaError(what + ": expected " + std::to_string(pf.N) + " positions");
    }
    if (!doc.contains("predictions") || !doc["predictions"].is_array() ||
        doc["predictions"].size() != count) {
        throw SchemaError(what + ": predictions array does not hold count entries");
    }
    for (const auto& item : doc["predictions"]) {
        ExamplePredictions e;
        e.id = detail::require<std::size_t>(item, "id", what);
        const std::string where = what + " example " + std::to_string(e.id);
        e.values = vectors_from_json(item.at("values"), pf.m, where);
        if (static_cast<int>(e.values.size()) != pf.N) {
            throw SchemaError(where + ": expected " + std::to_string(pf.N) + " predictions");
        }
        if (item.contains("states")) {
            e.states = vectors_from_json(item.at("states"), pf.n, where + " states");
            if (static_cast<int>(e.states.size()) != pf.N) {
                throw SchemaError(where + ": expected " + std::to_string(pf.N) + " states");
            }
        }
        pf.examples.push_back(std::move(e));
    }
    return pf;
}

inline void write_predictions(const std::string& path, const PredictionFile& pf) {
    detail::write_json_file(path, predictions_to_json(pf));
}

inline PredictionFile read_predictions(const std::string& path) {
    return predictions_from_json(detail::read_json_file(path));
}

}  // namespace kficl
