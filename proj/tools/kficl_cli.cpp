// kficl: dataset generation, filtering, tape-VM runs and MSPD evaluation.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "kficl/kficl.hpp"

using namespace kficl;

namespace {

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct GenerateArgs {
    std::string config;
    std::string output;
    std::string scheme = "scalar";
    std::size_t count = 100;
    std::int64_t step = 0;
    std::optional<std::uint64_t> seed;
    std::optional<int> n, m, N, strategy;
    std::optional<double> sigma_q2, sigma_r2, alpha;
    bool control = false;
};

void add_sampler_flags(CLI::App* app, GenerateArgs& a) {
    app->add_option("--config", a.config, "JSON file with a sampler object (or a full evaluate config)");
    app->add_option("--n", a.n, "state dimension");
    app->add_option("--m", a.m, "measurement dimension");
    app->add_option("--N", a.N, "context length (overrides the schedule)");
    app->add_option("--strategy", a.strategy, "transition sampler: 1 or 2")->check(CLI::IsMember({1, 2}));
    app->add_option("--sigma-q2", a.sigma_q2, "process noise cap");
    app->add_option("--sigma-r2", a.sigma_r2, "measurement noise cap");
    app->add_option("--alpha", a.alpha, "fixed strategy-1 blend (default: U[0,1] per example)");
    app->add_flag("--control", a.control, "sample B and unit-norm controls");
    app->add_option("--step", a.step, "curriculum step at which schedules are evaluated");
    app->add_option("--seed", a.seed, "master seed");
}

SamplerConfig sampler_from_args(const GenerateArgs& a) {
    SamplerConfig cfg;
    if (!a.config.empty()) {
        const json doc = detail::read_json_file(a.config);
        cfg = sampler_from_json(doc.contains("sampler") ? doc["sampler"] : doc);
        if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
    }
    if (a.n) cfg.n = *a.n;
    if (a.m) cfg.m = *a.m;
    if (a.N) cfg.context_length = CurriculumSchedule::constant(*a.N);
    if (a.strategy) cfg.strategy = static_cast<Strategy>(*a.strategy);
    if (a.sigma_q2) cfg.sigma_q2 = CurriculumSchedule::constant(*a.sigma_q2);
    if (a.sigma_r2) cfg.sigma_r2 = CurriculumSchedule::constant(*a.sigma_r2);
    if (a.alpha) cfg.alpha = CurriculumSchedule::constant(*a.alpha);
    if (a.control) cfg.with_control = true;
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    return cfg;
}

json vm_run_to_json(const VmRun& run, const Program& program) {
    json doc;
    doc["mode"] = to_string(program.mode);
    doc["n"] = program.n;
    doc["N"] = program.N;
    doc["y_pred"] = json::array();
    for (double v : run.y_pred) doc["y_pred"].push_back(real_to_json(v));
    doc["x_post"] = vectors_to_json(run.x_post);
    doc["P_post"] = json::array();
    for (const auto& P : run.P_post) doc["P_post"].push_back(matrix_to_json(P));
    if (!run.F_hat.empty()) {
        doc["F_hat"] = json::array();
        for (const auto& F : run.F_hat) doc["F_hat"].push_back(matrix_to_json(F));
    }
    return doc;
}

std::string trace_to_text(const std::vector<TraceEntry>& trace, const Program& program) {
    std::ostringstream os;
    os << "index,step,opcode,dst,value\n";
    for (const auto& e : trace) {
        os << e.index << ',' << e.step << ',' << to_string(program.code[e.index].op) << ',' << e.reg << ",\"";
        for (Eigen::Index i = 0; i < e.value.rows(); ++i) {
            if (i) os << ';';
            for (Eigen::Index j = 0; j < e.value.cols(); ++j) {
                if (j) os << ' ';
                os << format_real(e.value(i, j));
            }
        }
        os << "\"\n";
    }
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kalman filtering, dual filtering and tape-VM programs over prompt-matrix datasets"};
    app.require_subcommand(1);

    // generate ---------------------------------------------------------------
    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "sample a dataset and write a DatasetFile");
    add_sampler_flags(generate, gen);
    generate->add_option("--count", gen.count, "number of examples");
    generate->add_option("--scheme", gen.scheme, "context scheme")
        ->check(CLI::IsMember({"scalar", "vector", "control", "scalar-no-cov", "scalar-no-params"}));
    generate->add_option("-o,--output", gen.output, "output path")->required();

    // filter -----------------------------------------------------------------
    std::string filter_dataset, filter_alg, filter_out;
    auto* filter = app.add_subcommand("filter", "run one algorithm over a dataset and write a PredictionFile");
    filter->add_option("--dataset", filter_dataset, "DatasetFile")->required()->check(CLI::ExistingFile);
    filter->add_option("--algorithm", filter_alg, "kf, kf-seq, dual-kf, vm-kf, vm-dual, sgd(a), ols, ridge(l)")
        ->required();
    filter->add_option("-o,--output", filter_out, "output path")->required();

    // vm-run -----------------------------------------------------------------
    std::string vm_dataset, vm_mode = "kf", vm_trace, vm_asm, vm_layout, vm_program, vm_out, vm_tape;
    std::size_t vm_index = 0;
    int vm_n = 0, vm_N = 0;
    bool vm_freeze = false;
    auto* vm = app.add_subcommand("vm-run", "compile and execute the filter program on the tape VM");
    vm->add_option("--mode", vm_mode, "kf or dual")->check(CLI::IsMember({"kf", "dual"}));
    vm->add_option("--dataset", vm_dataset, "DatasetFile supplying the context")->check(CLI::ExistingFile);
    vm->add_option("--index", vm_index, "example index within the dataset");
    vm->add_option("--n", vm_n, "state dimension when only emitting assembly or layout");
    vm->add_option("--N", vm_N, "horizon when only emitting assembly or layout");
    vm->add_option("--program", vm_program, "run this assembly file instead of the compiled program")
        ->check(CLI::ExistingFile);
    vm->add_flag("--freeze-transition", vm_freeze, "dual mode: skip the transition update");
    vm->add_option("--trace", vm_trace, "write the per-instruction trace (CSV)");
    vm->add_option("--asm", vm_asm, "write the program assembly ('-' for stdout)");
    vm->add_option("--layout", vm_layout, "write the register table ('-' for stdout)");
    vm->add_option("--tape", vm_tape, "write the final tape as JSON");
    vm->add_option("-o,--output", vm_out, "write per-step estimates as JSON ('-' for stdout)");

    // evaluate ---------------------------------------------------------------
    std::string eval_config, eval_out = "eval_out";
    std::optional<std::uint64_t> eval_seed;
    std::optional<std::size_t> eval_batch;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "MSPD curves and state-MSE tables on a shared batch");
    evaluate_cmd->add_option("--config", eval_config, "evaluate config JSON")->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--seed", eval_seed, "override the master seed");
    evaluate_cmd->add_option("--batch", eval_batch, "override the batch size");
    evaluate_cmd->add_option("-o,--output-dir", eval_out, "directory for mspd.csv, state_mse.csv, eval.json");

    // export-context ---------------------------------------------------------
    std::string export_in, export_scheme, export_out;
    auto* export_cmd = app.add_subcommand("export-context", "re-encode a dataset under another scheme");
    export_cmd->add_option("--dataset", export_in, "DatasetFile")->required()->check(CLI::ExistingFile);
    export_cmd->add_option("--scheme", export_scheme, "target scheme")
        ->required()
        ->check(CLI::IsMember({"scalar", "vector", "control", "scalar-no-cov", "scalar-no-params"}));
    export_cmd->add_option("-o,--output", export_out, "output path")->required();

    // compare ----------------------------------------------------------------
    std::string cmp_a, cmp_b, cmp_out;
    auto* compare = app.add_subcommand("compare", "MSPD curve between two PredictionFiles");
    compare->add_option("a", cmp_a, "first PredictionFile")->required()->check(CLI::ExistingFile);
    compare->add_option("b", cmp_b, "second PredictionFile")->required()->check(CLI::ExistingFile);
    compare->add_option("-o,--output", cmp_out, "CSV output path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*generate) {
            const SamplerConfig cfg = sampler_from_args(gen);
            const auto ds = make_dataset(sample_batch(cfg, gen.step, gen.count), parse_scheme(gen.scheme), cfg.seed);
            write_dataset(gen.output, ds);
            std::cerr << "wrote " << ds.size() << " examples (n=" << ds.n << ", m=" << ds.m << ", N=" << ds.N
                      << ", scheme=" << to_string(ds.scheme) << ") to " << gen.output << "\n";
        } else if (*filter) {
            const auto ds = read_dataset(filter_dataset);
            const auto pf = run_algorithm(AlgorithmId::parse(filter_alg), ds);
            write_predictions(filter_out, pf);
        } else if (*vm) {
            const TapeMode mode = vm_mode == "kf" ? TapeMode::kf : TapeMode::dual_kf;
            std::optional<Dataset> ds;
            if (!vm_dataset.empty()) ds = read_dataset(vm_dataset);
            const int n = ds ? ds->n : vm_n;
            const int N = ds ? ds->N : vm_N;
            if (n < 1 || N < 1) throw ConfigError("vm-run: give --dataset or both --n and --N");
            Program program = mode == TapeMode::kf ? compile_kf_program(n, N)
                                                   : compile_dual_kf_program(n, N, {!vm_freeze});
            if (!vm_program.empty()) program = parse_assembly(read_text(vm_program));
            validate(program, make_layout(n, N, mode));
            if (!vm_asm.empty()) write_text(vm_asm, to_assembly(program));
            if (!vm_layout.empty()) write_text(vm_layout, make_layout(n, N, mode).table());
            if (ds) {
                if (vm_index >= ds->size()) throw ConfigError("vm-run: --index out of range");
                const Example& ex = ds->examples[vm_index];
                const auto ctx = encode(ex, mode == TapeMode::kf ? Scheme::scalar : Scheme::scalar_no_params);
                TapeOptions opts;
                if (mode == TapeMode::dual_kf && vm_freeze) opts.initial_F = ex.params.F;
                const VmRun run = run_filter_program(build_tape(ctx, mode, opts), program, !vm_trace.empty());
                if (!vm_trace.empty()) write_text(vm_trace, trace_to_text(run.trace, program));
                if (!vm_tape.empty()) write_text(vm_tape, tape_to_json(run.tape).dump() + "\n");
                if (!vm_out.empty()) write_text(vm_out, vm_run_to_json(run, program).dump(2) + "\n");
            } else if (!vm_trace.empty() || !vm_out.empty() || !vm_tape.empty()) {
                throw ConfigError("vm-run: --trace, --tape and --output need --dataset");
            }
        } else if (*evaluate_cmd) {
            EvalConfig cfg = eval_config.empty() ? EvalConfig::defaults() : read_eval_config(eval_config);
            if (eval_seed) cfg.sampler.seed = *eval_seed;
            if (eval_batch) cfg.batch = *eval_batch;
            const auto res = evaluate(cfg);
            write_eval_outputs(res, eval_out);
            std::cerr << "evaluated " << res.runs.size() << " algorithms on " << res.dataset.size()
                      << " examples; outputs in " << eval_out << "\n";
        } else if (*export_cmd) {
            const auto ds = read_dataset(export_in);
            write_dataset(export_out, make_dataset(ds.examples, parse_scheme(export_scheme), ds.seed));
        } else if (*compare) {
            const auto curve = mspd_curve(read_predictions(cmp_a), read_predictions(cmp_b));
            write_text(cmp_out, mspd_csv({curve}));
        }
    } catch (const std::exception& e) {
        std::cerr << "kficl: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
