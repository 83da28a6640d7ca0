#pragma once

// Running algorithms over a shared dataset and comparing their one-step
// predictions by mean-squared prediction difference (MSPD).

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kficl/baselines.hpp"
#include "kficl/context_codec.hpp"
#include "kficl/dataset_io.hpp"
#include "kficl/filters.hpp"
#include "kficl/sampler.hpp"
#include "kficl/tape_vm.hpp"

namespace kficl {

/// Prediction files that cannot be compared position by position.
class AlignmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// =============================================================================
// Algorithm identifiers
// =============================================================================

struct AlgorithmId {
    enum class Kind { kf, kf_seq, dual_kf, vm_kf, vm_dual, sgd, ols, ridge, external, truth };

    Kind kind = Kind::kf;
    double param = 0.0;  ///< SGD learning rate or ridge lambda
    std::string path;    ///< external predictions

    static AlgorithmId parse(std::string_view text) {
        const std::string s(text);
        auto arg = [&](const std::string& prefix) -> std::optional<std::string> {
            if (s.rfind(prefix + "(", 0) != 0 || s.back() != ')') return std::nullopt;
            return s.substr(prefix.size() + 1, s.size() - prefix.size() - 2);
        };
        auto number = [&](const std::string& v) {
            try {
                std::size_t used = 0;
                double x = std::stod(v, &used);
                if (used != v.size()) throw std::invalid_argument(v);
                return x;
            } catch (const std::exception&) {
                throw ConfigError("algorithm '" + s + "': bad parameter '" + v + "'");
            }
        };
        AlgorithmId id;
        if (s == "kf") return id;
        if (s == "kf-seq") { id.kind = Kind::kf_seq; return id; }
        if (s == "dual-kf") { id.kind = Kind::dual_kf; return id; }
        if (s == "vm-kf") { id.kind = Kind::vm_kf; return id; }
        if (s == "vm-dual") { id.kind = Kind::vm_dual; return id; }
        if (s == "ols") { id.kind = Kind::ols; return id; }
        if (s == "truth") { id.kind = Kind::truth; return id; }
        if (auto a = arg("sgd")) {
            id.kind = Kind::sgd;
            id.param = number(*a);
            if (!(id.param > 0.0)) throw RangeError("sgd learning rate must be positive");
            return id;
        }
        if (auto a = arg("ridge")) {
            id.kind = Kind::ridge;
            id.param = number(*a);
            if (!(id.param >= 0.0)) throw RangeError("ridge lambda must be nonnegative");
            return id;
        }
        if (auto a = arg("external")) {
            if (a->empty()) throw ConfigError("external() needs a path");
            id.kind = Kind::external;
            id.path = *a;
            return id;
        }
        throw ConfigError("unknown algorithm '" + s + "'");
    }

    std::string str() const {
        switch (kind) {
            case Kind::kf: return "kf";
            case Kind::kf_seq: return "kf-seq";
            case Kind::dual_kf: return "dual-kf";
            case Kind::vm_kf: return "vm-kf";
            case Kind::vm_dual: return "vm-dual";
            case Kind::ols: return "ols";
            case Kind::truth: return "truth";
            case Kind::sgd: return "sgd(" + format_real(param) + ")";
            case Kind::ridge: return "ridge(" + format_real(param) + ")";
            case Kind::external: return "external(" + path + ")";
        }
        return "?";
    }
};

// =============================================================================
// Producing predictions
// =============================================================================

namespace detail {

/// Rows of H_1..H_k stacked with the matching observations.
inline RegressionProblem stacked_problem(const Example& ex, int k) {
    const int m = ex.params.m;
    Matrix H(k * m, ex.params.n);
    Vector Y(k * m);
    for (int t = 0; t < k; ++t) {
        H.middleRows(t * m, m) = ex.params.H_seq[static_cast<std::size_t>(t)];
        Y.segment(t * m, m) = ex.traj.y_seq[static_cast<std::size_t>(t)];
    }
    return RegressionProblem(std::move(H), std::move(Y));
}

inline Vector regression_estimate(const AlgorithmId& id, const RegressionProblem& p) {
    switch (id.kind) {
        case AlgorithmId::Kind::sgd:
            return sgd_estimate(p, id.param);
        case AlgorithmId::Kind::ridge:
            if (id.param == 0.0) break;
            return ridge_estimate(p, id.param);
        default:
            break;
    }
    // OLS is undefined until the design has full column rank; before that the
    // minimum-norm solution stands in.
    try {
        return ols_estimate(p);
    } catch (const NumericalError&) {
        return min_norm_estimate(p);
    }
}

inline void require_scalar_plain(const Dataset& ds, const std::string& who) {
    if (ds.m != 1) throw ConfigError(who + " requires scalar measurements");
    if (!ds.examples.empty() && ds.examples.front().params.has_control()) {
        throw ConfigError(who + " does not support control inputs");
    }
}

inline ExamplePredictions predict_example(const AlgorithmId& id, const Example& ex, std::size_t index) {
    const int N = ex.traj.horizon();
    ExamplePredictions out;
    out.id = index;
    using K = AlgorithmId::Kind;
    switch (id.kind) {
        case K::truth:
            out.values = ex.traj.y_seq;
            out.states.assign(ex.traj.x_seq.begin() + 1, ex.traj.x_seq.end());
            break;
        case K::kf:
        case K::kf_seq: {
            const auto run = kf_run(ex.params, ex.traj.y_seq,
                                    id.kind == K::kf ? UpdateForm::joint : UpdateForm::sequential);
            out.values = run.y_pred;
            out.states.assign(run.x_post.begin() + 1, run.x_post.end());
            break;
        }
        case K::dual_kf: {
            const auto run = dual_kf_run(ex.params, ex.traj.y_seq);
            for (int t = 0; t < N; ++t) {
                out.values.push_back(Vector::Constant(1, run.y_pred[static_cast<std::size_t>(t)]));
                out.states.push_back(run.states[static_cast<std::size_t>(t + 1)].state.x_hat);
            }
            break;
        }
        case K::vm_kf:
        case K::vm_dual: {
            const bool dual = id.kind == K::vm_dual;
            const auto ctx = encode(ex, dual ? Scheme::scalar_no_params : Scheme::scalar);
            const auto mode = dual ? TapeMode::dual_kf : TapeMode::kf;
            const Program prog = dual ? compile_dual_kf_program(ex.params.n, N)
                                      : compile_kf_program(ex.params.n, N);
            const VmRun run = run_filter_program(build_tape(ctx, mode), prog);
            for (int t = 0; t < N; ++t) {
                out.values.push_back(Vector::Constant(1, run.y_pred[static_cast<std::size_t>(t)]));
            }
            out.states = run.x_post;
            break;
        }
        case K::sgd:
        case K::ols:
        case K::ridge:
            for (int t = 1; t <= N; ++t) {
                const Vector before = regression_estimate(id, stacked_problem(ex, t - 1));
                out.values.push_back(ex.params.H_seq[static_cast<std::size_t>(t - 1)] * before);
                out.states.push_back(regression_estimate(id, stacked_problem(ex, t)));
            }
            break;
        case K::external:
            throw ConfigError("external predictions are read, not computed");
    }
    return out;
}

}  // namespace detail

/// Runs `id` over every example of `ds` (or loads it, for external ids).
inline PredictionFile run_algorithm(const AlgorithmId& id, const Dataset& ds) {
    if (id.kind == AlgorithmId::Kind::external) {
        PredictionFile pf = read_predictions(id.path);
        pf.algorithm = id.str();
        return pf;
    }
    using K = AlgorithmId::Kind;
    if (id.kind == K::dual_kf || id.kind == K::vm_kf || id.kind == K::vm_dual) {
        detail::require_scalar_plain(ds, id.str());
    }
    PredictionFile pf;
    pf.algorithm = id.str();
    pf.scheme = ds.scheme;
    pf.n = ds.n;
    pf.m = ds.m;
    pf.N = ds.N;
    if (!ds.contexts.empty()) pf.positions = ds.contexts.front().target_positions;
    pf.examples.resize(ds.size());
    parallel_for(ds.size(), [&](std::size_t i) {
        pf.examples[i] = detail::predict_example(id, ds.examples[i], i);
    });
    return pf;
}

// =============================================================================
// MSPD
// =============================================================================

inline void check_aligned(const PredictionFile& a, const PredictionFile& b) {
    if (a.m != b.m || a.N != b.N || a.positions != b.positions) {
        throw AlignmentError("prediction files disagree on layout: " + a.algorithm + " (m=" +
                             std::to_string(a.m) + ", N=" + std::to_string(a.N) + ") vs " +
                             b.algorithm + " (m=" + std::to_string(b.m) + ", N=" +
                             std::to_string(b.N) + ")");
    }
    const std::size_t count = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < count; ++i) {
        if (a.examples[i].id != b.examples[i].id) {
            throw AlignmentError("first mismatching example id: " + std::to_string(a.examples[i].id) +
                                 " vs " + std::to_string(b.examples[i].id));
        }
    }
    if (a.size() != b.size()) {
        const auto& longer = a.size() > b.size() ? a : b;
        throw AlignmentError("first mismatching example id: " +
                             std::to_string(longer.examples[count].id) + " has no counterpart");
    }
}

/// Per-example squared difference at 1-based context length t, averaged over
/// measurement components.
inline std::vector<double> squared_differences(const PredictionFile& a, const PredictionFile& b, int t) {
    check_aligned(a, b);
    if (t < 1 || t > a.N) throw RangeError("context length " + std::to_string(t) + " out of range");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Vector d = a.examples[i].values[static_cast<std::size_t>(t - 1)] -
                         b.examples[i].values[static_cast<std::size_t>(t - 1)];
        out[i] = d.squaredNorm() / static_cast<double>(d.size());
    }
    return out;
}

inline double mspd(const PredictionFile& a, const PredictionFile& b, int at_length) {
    const auto d = squared_differences(a, b, at_length);
    double sum = 0.0;
    for (double v : d) sum += v;
    return sum / static_cast<double>(d.size());
}

struct MspdCurve {
    std::string algorithm_a;
    std::string algorithm_b;
    std::size_t batch = 0;
    std::vector<double> value;   ///< index t-1 → context length t
    std::vector<double> stderr_;
};

/// Mean and standard error of the mean, summed in index order.
inline std::pair<double, double> mean_and_stderr(const std::vector<double>& xs) {
    const double count = static_cast<double>(xs.size());
    double sum = 0.0;
    for (double v : xs) sum += v;
    const double mean = sum / count;
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : xs) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (count - 1.0) / count)};
}

inline MspdCurve mspd_curve(const PredictionFile& a, const PredictionFile& b) {
    check_aligned(a, b);
    MspdCurve c;
    c.algorithm_a = a.algorithm;
    c.algorithm_b = b.algorithm;
    c.batch = a.size();
    for (int t = 1; t <= a.N; ++t) {
        const auto [mean, se] = mean_and_stderr(squared_differences(a, b, t));
        c.value.push_back(mean);
        c.stderr_.push_back(se);
    }
    return c;
}

// =============================================================================
// State estimation error
// =============================================================================

struct StateMseTable {
    std::string algorithm;
    std::size_t batch = 0;
    std::vector<double> mse_final;  ///< E‖x̂_{t|1..t} − x_t‖², index t-1
    std::vector<double> mse_all;    ///< E (1/t) Σ_{s≤t} ‖x̂_{s|1..s} − x_s‖²
};

inline StateMseTable state_mse(const PredictionFile& run, const Dataset& ds) {
    if (!run.has_states()) throw ConfigError("state_mse: " + run.algorithm + " carries no state estimates");
    if (run.size() != ds.size() || run.N != ds.N) {
        throw AlignmentError("state_mse: predictions do not match the dataset");
    }
    StateMseTable out;
    out.algorithm = run.algorithm;
    out.batch = ds.size();
    out.mse_final.assign(static_cast<std::size_t>(ds.N), 0.0);
    out.mse_all.assign(static_cast<std::size_t>(ds.N), 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double running = 0.0;
        for (int t = 1; t <= ds.N; ++t) {
            const auto k = static_cast<std::size_t>(t);
            const double e = (run.examples[i].states[k - 1] - ds.examples[i].traj.x_seq[k]).squaredNorm();
            running += e;
            out.mse_final[k - 1] += e;
            out.mse_all[k - 1] += running / t;
        }
    }
    for (auto& v : out.mse_final) v /= static_cast<double>(ds.size());
    for (auto& v : out.mse_all) v /= static_cast<double>(ds.size());
    return out;
}

inline StateMseTable state_mse(const AlgorithmId& id, const Dataset& ds) {
    return state_mse(run_algorithm(id, ds), ds);
}

// =============================================================================
// Batch evaluation
// =============================================================================

struct EvalConfig {
    SamplerConfig sampler;
    std::int64_t step = 0;  ///< curriculum step the sampler is evaluated at
    std::size_t batch = 5000;
    Scheme scheme = Scheme::scalar;
    std::vector<AlgorithmId> algorithms;
    std::string reference = "kf";
    /// Explicit pairs; empty compares `reference` with every other algorithm.
    std::vector<std::pair<std::string, std::string>> pairs;
    std::optional<std::string> dataset_path;  ///< evaluate an existing dataset instead of sampling

    static EvalConfig defaults() {
        EvalConfig c;
        c.sampler.n = 8;
        c.sampler.m = 1;
        c.sampler.strategy = Strategy::symmetric;
        c.sampler.context_length = CurriculumSchedule::constant(40);
        for (const char* a : {"kf", "sgd(0.01)", "sgd(0.05)", "ols", "ridge(0.01)", "ridge(0.05)", "truth"}) {
            c.algorithms.push_back(AlgorithmId::parse(a));
        }
        return c;
    }
};

struct EvalResult {
    Dataset dataset;
    std::vector<PredictionFile> runs;
    std::vector<MspdCurve> curves;
    std::vector<StateMseTable> state_tables;

    const PredictionFile& run(const std::string& name) const {
        for (const auto& r : runs) {
            if (r.algorithm == name) return r;
        }
        throw ConfigError("no run named '" + name + "'");
    }
};

inline Dataset dataset_for(const EvalConfig& cfg) {
    if (cfg.dataset_path) return read_dataset(*cfg.dataset_path);
    return make_dataset(sample_batch(cfg.sampler, cfg.step, cfg.batch), cfg.scheme, cfg.sampler.seed);
}

inline EvalResult evaluate(const EvalConfig& cfg) {
    if (cfg.algorithms.empty()) throw ConfigError("evaluate: no algorithms configured");
    EvalResult res;
    res.dataset = dataset_for(cfg);
    for (const auto& id : cfg.algorithms) res.runs.push_back(run_algorithm(id, res.dataset));

    std::vector<std::pair<std::string, std::string>> pairs = cfg.pairs;
    if (pairs.empty()) {
        const std::string ref = AlgorithmId::parse(cfg.reference).str();
        for (const auto& r : res.runs) {
            if (r.algorithm != ref) pairs.emplace_back(ref, r.algorithm);
        }
    }
    for (const auto& [a, b] : pairs) {
        res.curves.push_back(mspd_curve(res.run(AlgorithmId::parse(a).str()),
                                        res.run(AlgorithmId::parse(b).str())));
    }
    for (const auto& r : res.runs) {
        if (r.has_states() && r.algorithm != "truth") res.state_tables.push_back(state_mse(r, res.dataset));
    }
    return res;
}

inline std::string mspd_csv(const std::vector<MspdCurve>& curves) {
    std::ostringstream os;
    os << "context_length,algorithm_a,algorithm_b,mspd,stderr,batch\n";
    for (const auto& c : curves) {
        for (std::size_t t = 0; t < c.value.size(); ++t) {
            os << t + 1 << ',' << c.algorithm_a << ',' << c.algorithm_b << ',' << format_real(c.value[t])
               << ',' << format_real(c.stderr_[t]) << ',' << c.batch << '\n';
        }
    }
    return os.str();
}

inline std::string state_mse_csv(const std::vector<StateMseTable>& tables) {
    std::ostringstream os;
    os << "context_length,algorithm,mse_final,mse_all,batch\n";
    for (const auto& tb : tables) {
        for (std::size_t t = 0; t < tb.mse_final.size(); ++t) {
            os << t + 1 << ',' << tb.algorithm << ',' << format_real(tb.mse_final[t]) << ','
               << format_real(tb.mse_all[t]) << ',' << tb.batch << '\n';
        }
    }
    return os.str();
}

inline json eval_to_json(const EvalResult& res) {
    json doc;
    doc["version"] = 1;
    doc["n"] = res.dataset.n;
    doc["m"] = res.dataset.m;
    doc["N"] = res.dataset.N;
    doc["batch"] = res.dataset.size();
    doc["seed"] = res.dataset.seed;
    doc["scheme"] = to_string(res.dataset.scheme);
    json curves = json::array();
    for (const auto& c : res.curves) {
        json jc;
        jc["algorithm_a"] = c.algorithm_a;
        jc["algorithm_b"] = c.algorithm_b;
        jc["batch"] = c.batch;
        jc["mspd"] = json::array();
        jc["stderr"] = json::array();
        for (double v : c.value) jc["mspd"].push_back(real_to_json(v));
        for (double v : c.stderr_) jc["stderr"].push_back(real_to_json(v));
        curves.push_back(std::move(jc));
    }
    doc["curves"] = std::move(curves);
    json tables = json::array();
    for (const auto& tb : res.state_tables) {
        json jt;
        jt["algorithm"] = tb.algorithm;
        jt["mse_final"] = json::array();
        jt["mse_all"] = json::array();
        for (double v : tb.mse_final) jt["mse_final"].push_back(real_to_json(v));
        for (double v : tb.mse_all) jt["mse_all"].push_back(real_to_json(v));
        tables.push_back(std::move(jt));
    }
    doc["state_mse"] = std::move(tables);
    return doc;
}

/// Writes mspd.csv, state_mse.csv and eval.json into `dir`.
inline void write_eval_outputs(const EvalResult& res, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto put = [](const std::filesystem::path& p, const std::string& text) {
        std::ofstream out(p);
        if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
        out << text;
    };
    put(dir / "mspd.csv", mspd_csv(res.curves));
    put(dir / "state_mse.csv", state_mse_csv(res.state_tables));
    put(dir / "eval.json", eval_to_json(res).dump(2) + "\n");
}

// =============================================================================
// Configuration file
// =============================================================================

/// A number is a constant schedule; an object selects a ramp or staircase.
inline CurriculumSchedule schedule_from_json(const json& j, const std::string& what) {
    if (j.is_number()) return CurriculumSchedule::constant(j.get<double>());
    if (!j.is_object()) throw ConfigError(what + ": expected a number or schedule object");
    const std::string kind = j.value("kind", "");
    if (kind == "constant") return CurriculumSchedule::constant(j.at("value").get<double>());
    if (kind == "linear-ramp") {
        return CurriculumSchedule::linear_ramp(j.at("start").get<double>(), j.at("end").get<double>(),
                                               j.at("ramp_steps").get<std::int64_t>());
    }
    if (kind == "staircase") {
        return CurriculumSchedule::staircase(j.at("start").get<double>(), j.at("increment").get<double>(),
                                             j.at("period").get<std::int64_t>(), j.at("cap").get<double>());
    }
    throw ConfigError(what + ": unknown schedule kind '" + kind + "'");
}

inline SamplerConfig sampler_from_json(const json& j) {
    SamplerConfig s;
    s.n = j.value("n", 8);
    s.m = j.value("m", 1);
    const int strategy = j.value("strategy", 2);
    if (strategy != 1 && strategy != 2) throw ConfigError("sampler.strategy must be 1 or 2");
    s.strategy = static_cast<Strategy>(strategy);
    if (j.contains("sigma_q2")) s.sigma_q2 = schedule_from_json(j["sigma_q2"], "sigma_q2");
    if (j.contains("sigma_r2")) s.sigma_r2 = schedule_from_json(j["sigma_r2"], "sigma_r2");
    if (j.contains("alpha") && !(j["alpha"].is_string() && j["alpha"] == "uniform")) {
        s.alpha = schedule_from_json(j["alpha"], "alpha");
    }
    if (j.contains("context_length")) s.context_length = schedule_from_json(j["context_length"], "context_length");
    s.with_control = j.value("with_control", false);
    s.seed = j.value("seed", std::uint64_t{0});
    s.validate();
    return s;
}

inline EvalConfig eval_config_from_json(const json& j) {
    EvalConfig c = EvalConfig::defaults();
    try {
        if (j.contains("sampler")) c.sampler = sampler_from_json(j["sampler"]);
        if (j.contains("seed")) c.sampler.seed = j["seed"].get<std::uint64_t>();
        c.step = j.value("step", std::int64_t{0});
        c.batch = j.value("batch", c.batch);
        if (j.contains("scheme")) c.scheme = parse_scheme(j["scheme"].get<std::string>());
        if (j.contains("algorithms")) {
            c.algorithms.clear();
            for (const auto& a : j["algorithms"]) c.algorithms.push_back(AlgorithmId::parse(a.get<std::string>()));
        }
        c.reference = j.value("reference", c.reference);
        if (j.contains("pairs")) {
            for (const auto& p : j["pairs"]) {
                c.pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
            }
        }
        if (j.contains("dataset")) c.dataset_path = j["dataset"].get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.batch == 0) throw ConfigError("config: batch must be positive");
    return c;
}

inline EvalConfig read_eval_config(const std::string& path) {
    return eval_config_from_json(detail::read_json_file(path));
}

}  // namespace kficl
