#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "quantlab/analysis.hpp"
#include "quantlab/model_io.hpp"
#include "quantlab/quantizer.hpp"
#include "quantlab/rng.hpp"
#include "quantlab/train.hpp"

#include "json.hpp"
#include "support/schema_check.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

using namespace quantlab;
namespace fs = std::filesystem;

namespace {

// Bias-free, activation-free matrix chain: the only structure the
// accumulation check accepts.
ModelGraph linear_chain(RngState& rng, const std::vector<size_t>& dims) {
    ModelGraph m;
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer layer;
        layer.weights = normal_tensor(rng, {dims[i + 1], dims[i]}, 0.0f, 0.5f);
        layer.bias = Tensor::zeros({dims[i + 1]});
        layer.activation = Activation::None;
        layer.dropout_rate = 0.0f;
        m.layers.push_back(std::move(layer));
    }
    m.validate();
    return m;
}

ModelGraph quantized_chain(const ModelGraph& m, int bits) {
    ModelGraph q = m;
    for (Layer& layer : q.layers) {
        float lo = layer.weights.data()[0];
        float hi = lo;
        for (float v : layer.weights.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const QuantParams p = affine_params_from_range(lo, hi, bits, true);
        layer.weights = dequantize(quantize_affine(layer.weights, p));
    }
    return q;
}

std::vector<Tensor> random_probes(RngState& rng, size_t dim, size_t n) {
    std::vector<Tensor> probes;
    for (size_t i = 0; i < n; ++i) probes.push_back(normal_tensor(rng, {dim}));
    return probes;
}

nlohmann::json load_bundled_schema() {
    const fs::path path = fs::path(QUANTLAB_SOURCE_DIR) / "docs" / "experiment_report.schema.json";
    std::ifstream in(path);
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

void require_schema_valid(const std::string& report) {
    const nlohmann::json doc = nlohmann::json::parse(report);
    const std::vector<std::string> errors = schema_check::check(doc, load_bundled_schema());
    for (const std::string& e : errors) {
        INFO(e);
        CHECK(false);
    }
    REQUIRE(errors.empty());
}

} // namespace

TEST_CASE("complexity_forward worked examples") {
    CHECK(complexity_forward(1, 1, 1) == 1.0);
    CHECK(complexity_forward(10000000, 1024, 128) == 1.31072e12);
    CHECK(complexity_forward(3, 5, 7) == 105.0);
}

TEST_CASE("complexity_forward is linear in each argument") {
    RngState rng(7);
    for (int t = 0; t < 20; ++t) {
        const int64_t n = 1 + static_cast<int64_t>(rng.next_below(1000));
        const int64_t d = 1 + static_cast<int64_t>(rng.next_below(4096));
        const int64_t l = 1 + static_cast<int64_t>(rng.next_below(512));
        const double base = complexity_forward(n, d, l);
        CHECK(complexity_forward(2 * n, d, l) == 2.0 * base);
        CHECK(complexity_forward(n, 2 * d, l) == 2.0 * base);
        CHECK(complexity_forward(n, d, 2 * l) == 2.0 * base);
    }
}

TEST_CASE("complexity_forward rejects nonpositive arguments") {
    CHECK_THROWS_AS(complexity_forward(0, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(complexity_forward(1, -3, 1), std::invalid_argument);
    CHECK_THROWS_AS(complexity_forward(1, 1, 0), std::invalid_argument);
}

TEST_CASE("cost_model identity at full precision") {
    const CostEstimate est = cost_model(32, 32, 32, 32, 12345.0);
    CHECK(est.flops_fp == 12345.0);
    CHECK(est.c_q == 12345.0);
    CHECK(est.reduction_pct == 0.0);
    CHECK(est.b_w == 32);
    CHECK(est.a_0 == 32);
}

TEST_CASE("cost_model reference points are exact") {
    // Both ratios are dyadic, so double arithmetic is exact and the checks
    // can demand bit equality.
    const CostEstimate int8 = cost_model(8, 8, 32, 32, 1.0);
    CHECK(int8.c_q == 0.0625);
    CHECK(int8.reduction_pct == 93.75);

    const CostEstimate int4 = cost_model(4, 4, 32, 32, 1.0);
    CHECK(int4.c_q == 0.015625);
    CHECK(int4.reduction_pct == 98.4375);

    const CostEstimate scaled = cost_model(8, 8, 32, 32, 1e12);
    CHECK(scaled.c_q == 6.25e10);
}

TEST_CASE("cost_model c_q tracks the ratio exactly") {
    RngState rng(11);
    for (int t = 0; t < 30; ++t) {
        const int b_w = 2 + static_cast<int>(rng.next_below(31));
        const int b_a = 2 + static_cast<int>(rng.next_below(31));
        const double c_f = 1.0 + rng.next_double() * 1e9;
        const CostEstimate est = cost_model(b_w, b_a, 32, 32, c_f);
        const double ratio =
            (static_cast<double>(b_w) * static_cast<double>(b_a)) / (32.0 * 32.0);
        CHECK(est.c_q == ratio * c_f);
        CHECK(est.reduction_pct == 100.0 * (1.0 - ratio));
    }
}

TEST_CASE("cost_model rejects bad arguments") {
    CHECK_THROWS_AS(cost_model(0, 8, 32, 32, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(cost_model(8, -1, 32, 32, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(cost_model(8, 8, 0, 32, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(cost_model(8, 8, 32, -4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(cost_model(8, 8, 32, 32, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(cost_model(8, 8, 32, 32, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(cost_model(8, 8, 32, 32, std::numeric_limits<double>::infinity()),
                    std::invalid_argument);
    CHECK_THROWS_AS(cost_model(8, 8, 32, 32, std::numeric_limits<double>::quiet_NaN()),
                    std::invalid_argument);
}

TEST_CASE("error_accumulation_bound worked examples") {
    CHECK(error_accumulation_bound({}) == 0.0);
    CHECK(error_accumulation_bound({0.5}) == 0.5);
    CHECK(error_accumulation_bound({0.1}) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(error_accumulation_bound({0.1, 0.1}) == doctest::Approx(0.21).epsilon(1e-12));
    CHECK(error_accumulation_bound({0.0, 0.0, 0.0}) == 0.0);
}

TEST_CASE("error_accumulation_bound rejects negative and NaN entries") {
    CHECK_THROWS_AS(error_accumulation_bound({0.1, -0.01}), std::domain_error);
    CHECK_THROWS_AS(error_accumulation_bound({std::numeric_limits<double>::quiet_NaN()}),
                    std::domain_error);
}

TEST_CASE("error_accumulation_bound is monotone in every entry") {
    RngState rng(13);
    for (int t = 0; t < 30; ++t) {
        const size_t len = 1 + rng.next_below(6);
        std::vector<double> eps(len);
        for (double& e : eps) e = rng.next_double() * 0.5;
        const double base = error_accumulation_bound(eps);
        CHECK(base >= 0.0);
        const size_t idx = rng.next_below(len);
        std::vector<double> bumped = eps;
        bumped[idx] += 0.1;
        CHECK(error_accumulation_bound(bumped) > base);
    }
}

TEST_CASE("identical chains measure exactly zero") {
    RngState rng(17);
    const ModelGraph m = linear_chain(rng, {4, 6, 3});
    const std::vector<Tensor> probes = random_probes(rng, 4, 3);
    const ErrorBudget budget = verify_accumulation(m, m, probes);
    REQUIRE(budget.per_layer_eps.size() == 2);
    CHECK(budget.per_layer_eps[0] == 0.0);
    CHECK(budget.per_layer_eps[1] == 0.0);
    CHECK(budget.bound_e_t == 0.0);
    CHECK(budget.measured_rel_error == 0.0);
}

TEST_CASE("single-layer chain stays within its own eps") {
    RngState rng(19);
    const ModelGraph m = linear_chain(rng, {5, 4});
    const ModelGraph q = quantized_chain(m, 4);
    const std::vector<Tensor> probes = random_probes(rng, 5, 8);
    const ErrorBudget budget = verify_accumulation(m, q, probes);
    REQUIRE(budget.per_layer_eps.size() == 1);
    // One layer: the bound collapses to the layer's own relative error.
    CHECK(budget.bound_e_t == doctest::Approx(budget.per_layer_eps[0]).epsilon(1e-12));
    CHECK(budget.measured_rel_error <= budget.bound_e_t + 1e-6);
    CHECK(budget.measured_rel_error > 0.0);
}

TEST_CASE("random chains never violate the accumulation bound") {
    RngState rng(23);
    for (int t = 0; t < 100; ++t) {
        const size_t depth = 2 + rng.next_below(5);  // 2..6 layers
        std::vector<size_t> dims;
        for (size_t i = 0; i <= depth; ++i) dims.push_back(3 + rng.next_below(8));
        const ModelGraph m = linear_chain(rng, dims);
        const int bits = (t % 2 == 0) ? 8 : 4;
        const ModelGraph q = quantized_chain(m, bits);
        const std::vector<Tensor> probes = random_probes(rng, dims.front(), 3);
        // verify_accumulation throws on violation; reaching the checks below
        // already means the bound held.
        const ErrorBudget budget = verify_accumulation(m, q, probes);
        CHECK(budget.measured_rel_error <= budget.bound_e_t + 1e-6);
        CHECK(budget.bound_e_t >= 0.0);
        for (double e : budget.per_layer_eps) CHECK(e >= 0.0);
    }
}

TEST_CASE("verify_accumulation rejects unsupported structures") {
    RngState rng(29);
    const ModelGraph m = linear_chain(rng, {4, 4, 2});
    const std::vector<Tensor> probes = random_probes(rng, 4, 2);

    SUBCASE("nonlinear activation") {
        ModelGraph relu = m;
        relu.layers[0].activation = Activation::ReLU;
        CHECK_THROWS_WITH_AS(verify_accumulation(relu, relu, probes),
                             doctest::Contains("unsupported structure"), std::invalid_argument);
    }
    SUBCASE("nonzero bias") {
        ModelGraph biased = m;
        biased.layers[1].bias.data()[0] = 0.25f;
        CHECK_THROWS_WITH_AS(verify_accumulation(m, biased, probes),
                             doctest::Contains("unsupported structure"), std::invalid_argument);
    }
    SUBCASE("dropout") {
        ModelGraph dropped = m;
        dropped.layers[0].dropout_rate = 0.1f;
        CHECK_THROWS_WITH_AS(verify_accumulation(dropped, m, probes),
                             doctest::Contains("unsupported structure"), std::invalid_argument);
    }
    SUBCASE("layer count mismatch") {
        RngState rng2(31);
        const ModelGraph other = linear_chain(rng2, {4, 2});
        CHECK_THROWS_AS(verify_accumulation(m, other, probes), std::invalid_argument);
    }
    SUBCASE("bad probes") {
        CHECK_THROWS_AS(verify_accumulation(m, m, {}), std::invalid_argument);
        std::vector<Tensor> wrong;
        wrong.push_back(normal_tensor(rng, {5}));
        CHECK_THROWS_AS(verify_accumulation(m, m, wrong), std::invalid_argument);
    }
    SUBCASE("zero weights with nonzero counterpart") {
        ModelGraph zero = m;
        for (float& v : zero.layers[0].weights.data()) v = 0.0f;
        CHECK_THROWS_AS(verify_accumulation(zero, m, probes), std::domain_error);
    }
}

TEST_CASE("model_size equals the container size on disk") {
    RngState rng(37);
    const ModelGraph m = make_mlp(6, {10}, 4, 0.1f, rng);
    const fs::path path = fs::temp_directory_path() / "quantlab_analysis_size.qtm";
    save_model(m, path.string());
    CHECK(model_size(m) == static_cast<uint64_t>(fs::file_size(path)));
    fs::remove(path);
}

TEST_CASE("size_report on a million-parameter layer") {
    RngState rng(41);
    ModelGraph m;
    Layer l;
    l.weights = normal_tensor(rng, {1000, 1000});
    l.bias = Tensor::zeros({1000});
    l.activation = Activation::None;
    m.layers = {l};
    const uint64_t payload = 4ull * m.param_count();  // 4,004,000

    const uint64_t original = model_size(m);
    CHECK(original > payload);
    CHECK(original < payload + 1024);  // container overhead stays small

    CalibrationSet cal;
    cal.samples.push_back(normal_tensor(rng, {1000}));

    PtqConfig cfg8;
    cfg8.bits = 8;
    const PtqResult int8 = run_ptq(m, cal, cfg8);
    const SizeReport r8 = size_report(m, int8.model);
    CHECK(r8.original_bytes == original);
    CHECK(r8.quantized_bytes == int8.report.quantized_bytes);
    CHECK(r8.reduction_pct == 100.0 * (1.0 - r8.alpha));
    CHECK(r8.reduction_pct > 74.0);  // ~75% minus FP32 bias and headers
    CHECK(r8.reduction_pct < 76.0);

    PtqConfig cfg4;
    cfg4.bits = 4;
    const PtqResult int4 = run_ptq(m, cal, cfg4);
    const SizeReport r4 = size_report(m, int4.model);
    CHECK(r4.reduction_pct > 86.5);  // ~87.5%
    CHECK(r4.reduction_pct < 88.5);
}

TEST_CASE("experiment_report with no artifacts is valid and all-null") {
    const std::string report = experiment_report({});
    const nlohmann::json doc = nlohmann::json::parse(report);

    CHECK(doc["schema_version"] == 1);
    for (const char* section : {"train", "ptq", "allocation", "cost", "error_budget", "size"}) {
        INFO(section);
        CHECK(doc[section].is_null());
    }

    const nlohmann::json& ref = doc["reference_reported"];
    CHECK(ref["cost_reduction_table_pct"]["int8"] == 40.0);
    CHECK(ref["cost_reduction_table_pct"]["int4"] == 65.0);
    CHECK(ref["cost_reduction_formula_pct"]["int8"] == 93.75);
    CHECK(ref["cost_reduction_formula_pct"]["int4"] == 98.4375);
    CHECK(ref["size_bytes_per_param_reported"] == 22.0);
    CHECK(ref["cost_note"].get<std::string>().find("not outputs") != std::string::npos);
    CHECK(ref["size_note"].get<std::string>().find("cannot reproduce") != std::string::npos);

    require_schema_valid(report);
    CHECK(experiment_report({}) == report);
}

TEST_CASE("experiment_report carries a partial run with explicit nulls") {
    const CostEstimate cost = cost_model(8, 8, 32, 32, 4096.0);
    ExperimentArtifacts artifacts;
    artifacts.cost = &cost;
    const std::string report = experiment_report(artifacts);
    const nlohmann::json doc = nlohmann::json::parse(report);
    CHECK(doc["cost"].is_object());
    CHECK(doc["cost"]["reduction_pct"] == 93.75);
    CHECK(doc["train"].is_null());
    CHECK(doc["ptq"].is_null());
    CHECK(doc["allocation"].is_null());
    require_schema_valid(report);
}

namespace {

// One miniature end-to-end run; everything below is deterministic given the
// seeds, which lets the rerun test demand byte equality.
std::string full_pipeline_report(nlohmann::json* parsed) {
    RngState rng(43);
    const LabeledSet data = make_teacher_task(4, 64, 97);  // dims -> dims
    const ModelGraph initial = make_mlp(4, {8}, 4, 0.0f, rng);

    TrainConfig tc;
    tc.max_steps = 40;
    tc.batch_size = 16;
    tc.seed = 5;
    const TrainOutcome trained = train(initial, data, tc);

    CalibrationSet cal;
    RngState cal_rng(51);
    for (int i = 0; i < 8; ++i) cal.samples.push_back(normal_tensor(cal_rng, {4}));

    PtqConfig pc;
    pc.bits = 8;
    pc.target_alpha = 0.5;
    const PtqResult ptq = run_ptq(trained.model, cal, pc);

    const std::vector<LayerSensitivity> sens =
        estimate_sensitivity(trained.model, data, 4, SensitivityMethod::GradNormProxy);
    const AllocationPlan plan = solve_allocation(sens, 8 * static_cast<int>(sens.size()));

    const double c_f = static_cast<double>(
        forward(trained.model, data.inputs, RunMode::Eval).macs);
    const CostEstimate cost = cost_model(8, 8, 32, 32, c_f);

    RngState chain_rng(53);
    const ModelGraph chain = linear_chain(chain_rng, {4, 5, 3});
    const ModelGraph chain_q = quantized_chain(chain, 8);
    const ErrorBudget budget =
        verify_accumulation(chain, chain_q, random_probes(chain_rng, 4, 4));

    const SizeReport size = size_report(trained.model, ptq.model);

    ExperimentArtifacts artifacts;
    artifacts.train = &trained.log;
    artifacts.ptq = &ptq.report;
    artifacts.sensitivities = &sens;
    artifacts.allocation = &plan;
    artifacts.cost = &cost;
    artifacts.error_budget = &budget;
    artifacts.size = &size;

    const std::string report = experiment_report(artifacts);
    if (parsed != nullptr) {
        *parsed = nlohmann::json::parse(report);
        // Cross-check a few fields against their sources while they are in
        // scope.
        const nlohmann::json& doc = *parsed;
        CHECK(doc["train"]["steps_run"] == trained.log.steps_run);
        CHECK(doc["ptq"]["alpha_achieved"].get<double>() ==
              doctest::Approx(ptq.report.alpha_achieved).epsilon(1e-9));
        CHECK(doc["allocation"]["budget"] == plan.budget);
        CHECK(doc["allocation"]["layers"].size() == sens.size());
        CHECK(doc["cost"]["flops_fp"].get<double>() == c_f);
        CHECK(doc["cost"]["reduction_pct"] == 93.75);
        CHECK(doc["error_budget"]["per_layer_eps"].size() == 2);
        CHECK(doc["size"]["original_bytes"].get<uint64_t>() == size.original_bytes);
    }
    return report;
}

} // namespace

TEST_CASE("experiment_report consolidates a full pipeline run") {
    nlohmann::json doc;
    const std::string report = full_pipeline_report(&doc);

    for (const char* section : {"train", "ptq", "allocation", "cost", "error_budget", "size"}) {
        INFO(section);
        CHECK(doc[section].is_object());
    }
    require_schema_valid(report);
}

TEST_CASE("experiment_report reruns are byte-identical") {
    const std::string first = full_pipeline_report(nullptr);
    const std::string second = full_pipeline_report(nullptr);
    REQUIRE(first == second);
}

TEST_CASE("train summary handles empty and populated logs") {
    TrainLog empty;
    JsonWriter w1;
    write_train_summary(w1, empty);
    const nlohmann::json e = nlohmann::json::parse(w1.str());
    CHECK(e["steps_run"] == 0);
    CHECK(e["initial_loss"].is_null());
    CHECK(e["final_loss"].is_null());

    TrainLog log;
    log.steps_run = 2;
    log.converged = true;
    log.steps.push_back({0, 4.0, 0.01, true});
    log.steps.push_back({1, 1.5, 0.01, false});
    JsonWriter w2;
    write_train_summary(w2, log);
    const nlohmann::json j = nlohmann::json::parse(w2.str());
    CHECK(j["initial_loss"] == 4.0);
    CHECK(j["final_loss"] == 1.5);
    CHECK(j["converged"] == true);
    CHECK(j["quant_refreshes"] == 1);
}
