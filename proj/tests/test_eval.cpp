#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <fstream>

#include "support.hpp"

using namespace kficl;
using namespace kficl::testing;

namespace {

Dataset batch(int n, int N, std::size_t count, std::uint64_t seed, Strategy strategy = Strategy::symmetric) {
    SamplerConfig cfg;
    cfg.n = n;
    cfg.strategy = strategy;
    cfg.context_length = CurriculumSchedule::constant(N);
    cfg.seed = seed;
    return make_dataset(sample_batch(cfg, 0, count), Scheme::scalar, seed);
}

PredictionFile shifted(PredictionFile pf, double c) {
    pf.algorithm += "+c";
    for (auto& e : pf.examples) {
        for (auto& v : e.values) v.array() += c;
    }
    return pf;
}

}  // namespace

TEST(AlgorithmId, ParseAndFormat) {
    for (const char* s : {"kf", "kf-seq", "dual-kf", "vm-kf", "vm-dual", "ols", "truth", "sgd(0.01)",
                          "ridge(0.05)", "ridge(0)", "external(preds.json)"}) {
        EXPECT_EQ(AlgorithmId::parse(s).str(), s);
    }
    EXPECT_EQ(AlgorithmId::parse("sgd(0.010)").str(), "sgd(0.01)");
    EXPECT_THROW(AlgorithmId::parse("sgd(0)"), RangeError);
    EXPECT_THROW(AlgorithmId::parse("ridge(-1)"), RangeError);
    EXPECT_THROW(AlgorithmId::parse("ridge(x)"), ConfigError);
    EXPECT_THROW(AlgorithmId::parse("lstm"), ConfigError);
    EXPECT_THROW(AlgorithmId::parse("external()"), ConfigError);
}

TEST(Mspd, IdentityAndConstantShift) {
    const auto ds = batch(2, 6, 20, 1);
    const auto kf = run_algorithm(AlgorithmId::parse("kf"), ds);
    for (int t = 1; t <= 6; ++t) {
        EXPECT_EQ(mspd(kf, kf, t), 0.0);
        EXPECT_NEAR(mspd(kf, shifted(kf, 0.3), t), 0.09, 1e-15);
    }
    EXPECT_THROW(mspd(kf, kf, 0), RangeError);
    EXPECT_THROW(mspd(kf, kf, 7), RangeError);
}

TEST(Mspd, DirectRecomputationFromFiles) {
    const auto ds = batch(2, 10, 100, 2);
    const auto dir = std::filesystem::temp_directory_path() / "kficl_tests";
    std::filesystem::create_directories(dir);
    write_predictions((dir / "kf.json").string(), run_algorithm(AlgorithmId::parse("kf"), ds));
    write_predictions((dir / "ols.json").string(), run_algorithm(AlgorithmId::parse("ols"), ds));
    const auto a = read_predictions((dir / "kf.json").string());
    const auto b = read_predictions((dir / "ols.json").string());

    std::ifstream fa(dir / "kf.json");
    std::ifstream fb(dir / "ols.json");
    const json ja = json::parse(fa);
    const json jb = json::parse(fb);
    for (int t = 1; t <= 10; ++t) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 100; ++i) {
            const double d = ja["predictions"][i]["values"][t - 1][0].get<double>() -
                             jb["predictions"][i]["values"][t - 1][0].get<double>();
            sum += d * d;
        }
        EXPECT_NEAR(mspd(a, b, t), sum / 100.0, 1e-15 * std::max(1.0, sum));
    }
}

TEST(Mspd, SymmetryAndTriangleBound) {
    const auto ds = batch(3, 12, 50, 3);
    const auto a = run_algorithm(AlgorithmId::parse("kf"), ds);
    const auto b = run_algorithm(AlgorithmId::parse("ridge(0.05)"), ds);
    const auto c = run_algorithm(AlgorithmId::parse("sgd(0.05)"), ds);
    for (int t = 1; t <= 12; ++t) {
        EXPECT_EQ(mspd(a, b, t), mspd(b, a, t));
        EXPECT_LE(mspd(a, c, t), 2 * mspd(a, b, t) + 2 * mspd(b, c, t) + 1e-15);
    }
}

TEST(Mspd, VectorMeasurementsAverageComponents) {
    SamplerConfig cfg;
    cfg.n = 3;
    cfg.m = 2;
    cfg.context_length = CurriculumSchedule::constant(4);
    const auto ds = make_dataset(sample_batch(cfg, 0, 5), Scheme::vector, 0);
    auto a = run_algorithm(AlgorithmId::parse("kf"), ds);
    auto b = a;
    for (auto& e : b.examples) {
        for (auto& v : e.values) v(0) += 1.0;
    }
    EXPECT_DOUBLE_EQ(mspd(a, b, 2), 0.5);
}

TEST(Mspd, AlignmentErrors) {
    const auto ds = batch(2, 5, 4, 4);
    const auto a = run_algorithm(AlgorithmId::parse("kf"), ds);
    auto b = a;
    b.examples[2].id = 17;
    try {
        mspd(a, b, 1);
        FAIL() << "expected AlignmentError";
    } catch (const AlignmentError& e) {
        EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
    }
    b = a;
    b.examples.pop_back();
    EXPECT_THROW(mspd(a, b, 1), AlignmentError);
    b = a;
    b.positions[0] += 1;
    EXPECT_THROW(mspd(a, b, 1), AlignmentError);
}

TEST(Evaluate, KfAgainstVmSingleExample) {
    const auto ds = batch(4, 1, 1, 5);
    const auto kf = run_algorithm(AlgorithmId::parse("kf"), ds);
    const auto vm = run_algorithm(AlgorithmId::parse("vm-kf"), ds);
    EXPECT_LE(mspd(kf, vm, 1), 1e-18);
}

TEST(Evaluate, OlsEqualsRidgeZero) {
    const auto ds = batch(2, 20, 30, 6);
    const auto ols = run_algorithm(AlgorithmId::parse("ols"), ds);
    const auto ridge = run_algorithm(AlgorithmId::parse("ridge(0)"), ds);
    for (int t = 3; t <= 20; ++t) EXPECT_LE(mspd(ols, ridge, t), 1e-20);
}

TEST(Evaluate, SequentialKfMatchesJoint) {
    const auto ds = batch(8, 40, 5000, 7);
    const auto a = run_algorithm(AlgorithmId::parse("kf-seq"), ds);
    const auto b = run_algorithm(AlgorithmId::parse("kf"), ds);
    for (int t = 1; t <= 40; ++t) EXPECT_LE(mspd(a, b, t), 1e-16);
}

TEST(Evaluate, DualAgainstVmDual) {
    const auto ds = batch(2, 15, 20, 8);
    const auto a = run_algorithm(AlgorithmId::parse("dual-kf"), ds);
    const auto b = run_algorithm(AlgorithmId::parse("vm-dual"), ds);
    for (int t = 1; t <= 15; ++t) EXPECT_LE(mspd(a, b, t), 1e-16);
}

TEST(Evaluate, BaselinesUseOnlyPastMeasurements) {
    const auto ds = batch(2, 6, 1, 9);
    const auto pf = run_algorithm(AlgorithmId::parse("ridge(0.01)"), ds);
    const auto& ex = ds.examples[0];
    EXPECT_EQ(pf.examples[0].values[0](0), 0.0);
    Matrix H(3, 2);
    Vector Y(3);
    for (int t = 0; t < 3; ++t) {
        H.row(t) = ex.params.H_seq[t];
        Y(t) = ex.traj.y_seq[t](0);
    }
    const Vector x = (H.transpose() * H + 0.01 * Matrix::Identity(2, 2)).ldlt().solve(H.transpose() * Y);
    EXPECT_NEAR(pf.examples[0].values[3](0), (ex.params.H_seq[3] * x)(0), 1e-12);
    EXPECT_LE(max_abs(pf.examples[0].states[2] - x), 1e-12);
}

TEST(Evaluate, ExternalPredictionsRoundTrip) {
    const auto ds = batch(2, 5, 3, 10);
    const auto path = (std::filesystem::temp_directory_path() / "kficl_tests" / "ext.json").string();
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    write_predictions(path, run_algorithm(AlgorithmId::parse("sgd(0.05)"), ds));
    const auto ext = run_algorithm(AlgorithmId::parse("external(" + path + ")"), ds);
    const auto sgd = run_algorithm(AlgorithmId::parse("sgd(0.05)"), ds);
    for (int t = 1; t <= 5; ++t) EXPECT_EQ(mspd(ext, sgd, t), 0.0);
}

TEST(StateMse, NoiselessIdentitySystem) {
    SystemParams p;
    p.n = 2;
    p.m = 2;
    p.F = Matrix::Identity(2, 2);
    p.Q = Matrix::Zero(2, 2);
    p.R = Matrix::Zero(2, 2);
    p.H_seq.assign(5, Matrix::Identity(2, 2));
    Rng rng = make_rng(11);
    Example ex;
    ex.traj = simulate(p, 5, rng);
    ex.params = p;
    const auto ds = make_dataset({ex}, Scheme::vector, 0);
    const auto table = state_mse(AlgorithmId::parse("ols"), ds);
    for (double v : table.mse_final) EXPECT_LE(v, 1e-25);
    for (double v : table.mse_all) EXPECT_LE(v, 1e-25);
}

TEST(StateMse, KalmanBeatsOlsAtFullRank) {
    const auto ds = batch(8, 40, 5000, 12);
    const auto kf = state_mse(AlgorithmId::parse("kf"), ds);
    const auto ols = state_mse(AlgorithmId::parse("ols"), ds);
    EXPECT_LE(kf.mse_final[7], ols.mse_final[7]);
}

TEST(StateMse, StableSystemsTrendDownward) {
    const auto ds = batch(8, 40, 2000, 13);
    const auto kf = state_mse(AlgorithmId::parse("kf"), ds);
    // Spearman rank correlation of the cumulative error against length over N = 10..40.
    std::vector<double> v(kf.mse_all.begin() + 9, kf.mse_all.end());
    const int k = static_cast<int>(v.size());
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> rank(k);
    for (int r = 0; r < k; ++r) rank[order[r]] = r;
    double d2 = 0.0;
    for (int i = 0; i < k; ++i) d2 += (rank[i] - i) * (rank[i] - i);
    const double rho = 1.0 - 6.0 * d2 / (k * (static_cast<double>(k) * k - 1.0));
    // One-sided 5% critical value for n = 31 under the normal approximation.
    const double critical = -1.645 / std::sqrt(k - 1.0);
    EXPECT_LT(rho, critical) << "rho=" << rho;
    // The final-state error is at steady state by N = 10 and must not drift upward.
    const double at10 = kf.mse_final[9];
    for (std::size_t t = 9; t < kf.mse_final.size(); ++t) EXPECT_LE(kf.mse_final[t], 1.1 * at10) << "N=" << t + 1;
    for (double x : kf.mse_final) EXPECT_TRUE(std::isfinite(x));
}

TEST(EvaluateConfig, ParsesSchedulesAndPairs) {
    const json j = json::parse(R"js({
        "sampler": {"n": 2, "strategy": 1, "alpha": {"kind": "linear-ramp", "start": 0, "end": 1, "ramp_steps": 10},
                    "sigma_q2": 0.01, "context_length": {"kind": "staircase", "start": 4, "increment": 2, "period": 5, "cap": 8}},
        "seed": 3, "step": 10, "batch": 7, "scheme": "scalar",
        "algorithms": ["kf", "ols", "ridge(0.05)"],
        "pairs": [["kf", "ols"], ["ols", "ridge(0.05)"]]
    })js");
    const auto cfg = eval_config_from_json(j);
    EXPECT_EQ(cfg.sampler.n, 2);
    EXPECT_EQ(cfg.sampler.strategy, Strategy::rotation_blend);
    EXPECT_EQ(cfg.sampler.alpha->value(10), 1.0);
    EXPECT_EQ(cfg.sampler.horizon_at(10), 8);
    EXPECT_EQ(cfg.sampler.seed, 3u);
    EXPECT_EQ(cfg.batch, 7u);
    ASSERT_EQ(cfg.pairs.size(), 2u);
    const auto res = evaluate(cfg);
    ASSERT_EQ(res.curves.size(), 2u);
    EXPECT_EQ(res.curves[1].algorithm_a, "ols");
    EXPECT_EQ(res.curves[0].value.size(), 8u);
    EXPECT_THROW(eval_config_from_json(json::parse(R"({"batch": 0})")), ConfigError);
    EXPECT_THROW(eval_config_from_json(json::parse(R"({"algorithms": ["nope"]})")), ConfigError);
    EXPECT_THROW(eval_config_from_json(json::parse(R"({"sampler": {"strategy": 3}})")), ConfigError);
}

TEST(EvaluateConfig, DeterministicCsv) {
    EvalConfig cfg = EvalConfig::defaults();
    cfg.sampler.n = 3;
    cfg.sampler.context_length = CurriculumSchedule::constant(8);
    cfg.sampler.seed = 21;
    cfg.batch = 64;
    const auto a = evaluate(cfg);
    const auto b = evaluate(cfg);
    EXPECT_EQ(mspd_csv(a.curves), mspd_csv(b.curves));
    EXPECT_EQ(state_mse_csv(a.state_tables), state_mse_csv(b.state_tables));
    EXPECT_EQ(eval_to_json(a).dump(), eval_to_json(b).dump());
    const std::string csv = mspd_csv(a.curves);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "context_length,algorithm_a,algorithm_b,mspd,stderr,batch");
    EXPECT_NE(csv.find("\n1,kf,sgd(0.01),"), std::string::npos);
    for (const auto& c : a.curves) {
        for (double v : c.value) EXPECT_GE(v, 0.0);
        EXPECT_EQ(c.batch, 64u);
    }
}
